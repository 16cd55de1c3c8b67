// Copyright 2026 The c2vkd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use super::Tensor;
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn unary(&self, op: &'static str, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            op,
            vec![self.clone()],
            Box::new(move |g, y, inp| {
                let x = inp[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "add",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "sub",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "mul",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, inp| {
                let (a, b) = (inp[0].data(), inp[1].data());
                vec![
                    Some(g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    Some(g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }),
        ))
    }

    /// Sum of a list of same-shaped tensors.
    pub fn add_all(terms: &[Tensor]) -> Result<Tensor> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("add_all", "empty term list"))?;
        rest.iter().try_fold(first.clone(), |acc, t| acc.add(t))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            "scale",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            "add_scalar",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// tanh approximation of GELU.
    pub fn gelu(&self) -> Tensor {
        self.unary(
            "gelu",
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            |x, _| {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            },
        )
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        Tensor::from_op(
            vec![self.data().iter().sum()],
            vec![1],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`. A rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid("sum_axis", format!("axis {axis} for rank {}", self.rank())));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            out,
            shape,
            "sum_axis",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        gi[(o * n + k) * inner..(o * n + k + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid("mean_axis", format!("axis {axis} for rank {}", self.rank())))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }
}
