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

use super::{numel, Tensor};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `data` (laid out as `shape`) into the axis order `axes`.
pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 || n == 0 {
        return data.to_vec();
    }
    // Innermost output axis is walked as a strided run.
    let last = rank - 1;
    let run = out_shape[last];
    let run_stride = src_strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < n {
        out.extend((0..run).map(|j| data[base + j * run_stride]));
        // advance the multi-index over axes [0, last)
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let data = permute_data(self.data(), &in_shape, axes);
        let out_shape_bw = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(permute_data(g, &out_shape_bw, &inverse))]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::invalid("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::invalid(
                "narrow",
                format!("axis {axis} range {start}..{} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, n, inner) = super::elementwise::split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    gi[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::invalid("concat", format!("axis {axis} for rank {}", first.rank())));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = super::elementwise::split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let mut grads: Vec<Vec<f64>> = extents.iter().map(|&n| Vec::with_capacity(outer * n * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gi, &n) in grads.iter_mut().zip(&extents) {
                        gi.extend_from_slice(&g[off..off + n * inner]);
                        off += n * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Stacks `n` copies along a new leading axis; the gradient sums them.
    pub fn repeat_leading(&self, n: usize) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::invalid("repeat_leading", "zero copies"));
        }
        let m = self.numel();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape());
        Ok(Tensor::from_op(
            out,
            shape,
            "repeat_leading",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![0.0; m];
                for c in g.chunks(m) {
                    gi.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                }
                vec![Some(gi)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_permute(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
        let st = strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n = data.len();
        let ost = strides(&out_shape);
        (0..n)
            .map(|lin| {
                let mut src = 0;
                for (i, &a) in axes.iter().enumerate() {
                    let coord = (lin / ost[i]) % out_shape[i];
                    src += coord * st[a];
                }
                data[src]
            })
            .collect()
    }

    #[test]
    fn transpose_2d() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn bad_permutation_rejected() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(x.permute(&[0, 0]).is_err());
        assert!(x.permute(&[0]).is_err());
    }

    #[test]
    fn narrow_and_concat_gradients() {
        let x = Tensor::param((0..6).map(|v| v as f64).collect(), &[2, 3]).unwrap();
        let a = x.narrow(1, 0, 1).unwrap();
        let b = x.narrow(1, 1, 2).unwrap();
        assert_eq!(a.data(), &[0.0, 3.0]);
        let c = Tensor::concat(&[b, a.scale(2.0)], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 0.0, 4.0, 5.0, 6.0]);
        c.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn repeat_leading_sums_gradient() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.repeat_leading(3).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    proptest! {
        #[test]
        fn permute_matches_index_oracle(dims in proptest::collection::vec(1usize..4, 1..6), seed in 0u64..1000) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut axes: Vec<usize> = (0..dims.len()).collect();
            // deterministic shuffle from seed
            let mut s = seed;
            for i in (1..axes.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                axes.swap(i, (s >> 33) as usize % (i + 1));
            }
            let t = Tensor::new(data.clone(), &dims).unwrap();
            let p = t.permute(&axes).unwrap();
            prop_assert_eq!(p.data(), &naive_permute(&data, &dims, &axes)[..]);
            let mut inv = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() { inv[a] = i; }
            let back = p.permute(&inv).unwrap();
            prop_assert_eq!(back.data(), &data[..]);
        }
    }
}
