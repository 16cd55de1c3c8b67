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
use crate::par;

/// Below this many multiply-adds a product is not worth splitting.
const PAR_MIN_WORK: usize = 1 << 17;

#[allow(clippy::too_many_arguments)]
fn gemm_raw(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover the strided extents computed above, and `c`
    // is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C[m,n] (+)= op(A)[m,k] · op(B)[k,n]`, row-major. With `trans_a` the
/// buffer `a` holds `[k,m]`; with `trans_b`, `b` holds `[n,k]`.
///
/// Rows of `C` are split across workers; each element is still reduced over
/// `k` by a single kernel call, so the result does not depend on the split.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64], accumulate: bool) {
    let work = m * k * n;
    if !par::is_parallel() || work < PAR_MIN_WORK || m < 16 {
        gemm_raw(m, k, n, a, trans_a, b, trans_b, c, accumulate);
        return;
    }
    let rows = (m / 8).max(8);
    par::for_each_chunk(&mut c[..m * n], rows * n, |i, chunk| {
        let r0 = i * rows;
        let mr = chunk.len() / n;
        if trans_a {
            // column block of the stored [k,m] matrix: keep full buffer, offset pointer
            let sub = &a[r0..];
            gemm_strided_a(mr, k, n, sub, m, b, trans_b, chunk, accumulate);
        } else {
            gemm_raw(mr, k, n, &a[r0 * k..], false, b, trans_b, chunk, accumulate);
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn gemm_strided_a(m: usize, k: usize, n: usize, a: &[f64], lda: usize, b: &[f64], trans_b: bool, c: &mut [f64], accumulate: bool) {
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert!(a.len() > (k - 1) * lda + m - 1);
    // SAFETY: element (i, l) of the transposed view sits at `l * lda + i`,
    // inside `a` by the assertion above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            lda as isize,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, &mut out, false);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, inp| {
                let (a, b) = (&inp[0], &inp[1]);
                let da = a.requires_grad().then(|| {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut da, false);
                    da
                });
                let db = b.requires_grad().then(|| {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut db, false);
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// Batched product `[B,m,k] x [B,k,n]`, or `[B,m,k] x [B,n,k]ᵀ` when
    /// `trans_b` is set.
    pub fn bmm(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let (a_len, b_len, c_len) = (m * k, k * n, m * n);
        let mut out = vec![0.0; batch * c_len];
        {
            let (a, b) = (self.data(), other.data());
            par::for_each_chunk(&mut out, c_len, |i, c| {
                gemm_raw(m, k, n, &a[i * a_len..], false, &b[i * b_len..], trans_b, c, false);
            });
        }
        Ok(Tensor::from_op(
            out,
            vec![batch, m, n],
            "bmm",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, inp| {
                let (a, b) = (&inp[0], &inp[1]);
                let da = a.requires_grad().then(|| {
                    let mut da = vec![0.0; batch * a_len];
                    let bd = b.data();
                    // dA = G · op(B)ᵀ
                    par::for_each_chunk(&mut da, a_len, |i, d| {
                        gemm_raw(m, n, k, &g[i * c_len..], false, &bd[i * b_len..], !trans_b, d, false);
                    });
                    da
                });
                let db = b.requires_grad().then(|| {
                    let mut db = vec![0.0; batch * b_len];
                    let ad = a.data();
                    par::for_each_chunk(&mut db, b_len, |i, d| {
                        if trans_b {
                            // dB[n,k] = Gᵀ · A
                            gemm_raw(n, m, k, &g[i * c_len..], true, &ad[i * a_len..], false, d, false);
                        } else {
                            // dB[k,n] = Aᵀ · G
                            gemm_raw(k, m, n, &ad[i * a_len..], true, &g[i * c_len..], false, d, false);
                        }
                    });
                    db
                });
                vec![da, db]
            }),
        ))
    }

    /// Affine map over the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let ws = weight.shape();
        let fan_in = *self.shape().last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != fan_in {
            return Err(Error::shape("linear", self.shape(), ws));
        }
        let fan_out = ws[1];
        if let Some(b) = bias {
            if b.shape() != [fan_out] {
                return Err(Error::shape("linear bias", b.shape(), &[fan_out]));
            }
        }
        let rows = self.numel() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = bias {
            for r in out.chunks_mut(fan_out) {
                r.copy_from_slice(b.data());
            }
        }
        gemm(rows, fan_in, fan_out, self.data(), false, weight.data(), false, &mut out, bias.is_some());
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            out,
            shape,
            "linear",
            inputs,
            Box::new(move |g, _, inp| {
                let (x, w) = (&inp[0], &inp[1]);
                let dx = x.requires_grad().then(|| {
                    let mut dx = vec![0.0; rows * fan_in];
                    gemm(rows, fan_out, fan_in, g, false, w.data(), true, &mut dx, false);
                    dx
                });
                let dw = w.requires_grad().then(|| {
                    let mut dw = vec![0.0; fan_in * fan_out];
                    gemm(fan_in, rows, fan_out, x.data(), true, g, false, &mut dw, false);
                    dw
                });
                let mut grads = vec![dx, dw];
                if inp.len() == 3 {
                    let mut db = vec![0.0; fan_out];
                    for r in g.chunks(fan_out) {
                        db.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        ))
    }
}
