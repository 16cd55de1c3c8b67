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

use super::elementwise::split_axis;
use super::Tensor;
use crate::error::{Error, Result};

/// Floor applied to the second argument of every KL term before the log.
pub const KL_FLOOR: f64 = 1e-12;

/// Label value skipped by every per-pixel loss and by evaluation.
pub const IGNORE_INDEX: usize = 255;

/// Row-normalization tolerance accepted by [`Tensor::kl_div`].
const NORM_TOL: f64 = 1e-6;

fn check_labels(labels: &[usize], classes: usize, expected: usize, op: &'static str) -> Result<()> {
    if labels.len() != expected {
        return Err(Error::shape(op, &[labels.len()], &[expected]));
    }
    match labels.iter().find(|&&y| y >= classes && y != IGNORE_INDEX) {
        Some(&value) => Err(Error::Label { value, classes }),
        None => Ok(()),
    }
}

impl Tensor {
    fn axis_or_err(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::invalid(op, format!("axis {axis} for rank {}", self.rank())));
        }
        Ok(split_axis(self.shape(), axis))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_or_err(axis, "softmax")?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - max).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    y[at(k)] /= z;
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_or_err(axis, "log_softmax")?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..n).map(|k| (x[at(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..n {
                    y[at(k)] = x[at(k)] - lse;
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let gs: f64 = (0..n).map(|k| g[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = g[at(k)] - y[at(k)].exp() * gs;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Elementwise `p · ln(p / max(q, KL_FLOOR))`, with `0 · ln 0 = 0`.
    pub fn kl_terms(&self, q: &Tensor) -> Result<Tensor> {
        self.check_same_shape(q, "kl_terms")?;
        let data = self
            .data()
            .iter()
            .zip(q.data())
            .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p / q.max(KL_FLOOR)).ln() })
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "kl_terms",
            vec![self.clone(), q.clone()],
            Box::new(|g, _, inp| {
                let (p, q) = (inp[0].data(), inp[1].data());
                let dp = inp[0].requires_grad().then(|| {
                    g.iter()
                        .zip(p.iter().zip(q))
                        .map(|(g, (&p, &q))| if p == 0.0 { 0.0 } else { g * ((p / q.max(KL_FLOOR)).ln() + 1.0) })
                        .collect()
                });
                let dq = inp[1].requires_grad().then(|| {
                    g.iter()
                        .zip(p.iter().zip(q))
                        .map(|(g, (&p, &q))| if q > KL_FLOOR { -g * p / q } else { 0.0 })
                        .collect()
                });
                vec![dp, dq]
            }),
        ))
    }

    /// `KL(p ‖ q)` over the last axis, averaged over all leading rows. Both
    /// arguments must hold distributions along that axis.
    pub fn kl_div(&self, q: &Tensor) -> Result<Tensor> {
        self.check_same_shape(q, "kl_div")?;
        let width = *self.shape().last().expect("rank >= 1");
        for t in [self, q] {
            for (row, r) in t.data().chunks(width).enumerate() {
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > NORM_TOL || r.iter().any(|&v| v < 0.0) {
                    return Err(Error::NotNormalized { op: "kl_div", row, sum });
                }
            }
        }
        let rows = self.numel() / width;
        Ok(self.kl_terms(q)?.sum().scale(1.0 / rows as f64))
    }

    /// Picks `x[b, labels, s]` at every position `s` of a `[B, K, ...]`
    /// tensor; ignored positions yield 0.
    pub fn gather_class(&self, labels: &[usize]) -> Result<Tensor> {
        let (batch, classes, inner) = self.axis_or_err(1, "gather_class")?;
        check_labels(labels, classes, batch * inner, "gather_class")?;
        let x = self.data();
        let out: Vec<f64> = (0..batch * inner)
            .map(|p| {
                let (b, s) = (p / inner, p % inner);
                match labels[p] {
                    IGNORE_INDEX => 0.0,
                    y => x[(b * classes + y) * inner + s],
                }
            })
            .collect();
        let mut shape = self.shape().to_vec();
        shape.remove(1);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "gather_class",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; batch * classes * inner];
                for (p, &y) in labels.iter().enumerate() {
                    if y != IGNORE_INDEX {
                        let (b, s) = (p / inner, p % inner);
                        gx[(b * classes + y) * inner + s] = g[p];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Sum over every class except the labelled one at each position of a
    /// `[B, K, ...]` tensor. Ignored positions sum all classes.
    pub fn nontarget_sum(&self, labels: &[usize]) -> Result<Tensor> {
        let (batch, classes, inner) = self.axis_or_err(1, "nontarget_sum")?;
        check_labels(labels, classes, batch * inner, "nontarget_sum")?;
        let x = self.data();
        let out: Vec<f64> = (0..batch * inner)
            .map(|p| {
                let (b, s) = (p / inner, p % inner);
                (0..classes)
                    .filter(|&k| k != labels[p])
                    .map(|k| x[(b * classes + k) * inner + s])
                    .sum()
            })
            .collect();
        let mut shape = self.shape().to_vec();
        shape.remove(1);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "nontarget_sum",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; batch * classes * inner];
                for (p, &y) in labels.iter().enumerate() {
                    let (b, s) = (p / inner, p % inner);
                    for k in (0..classes).filter(|&k| k != y) {
                        gx[(b * classes + k) * inner + s] = g[p];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
