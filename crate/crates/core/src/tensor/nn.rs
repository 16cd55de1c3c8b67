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

//! Fused image and normalization kernels.

use super::linalg::gemm;
use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output position `o` and kernel tap `k`.
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.patch_len() * self.out_len()];
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * self.out_len()..(row + 1) * self.out_len()];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[oy * self.ow + ox] = x[(ci * self.h + iy) * self.w + ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * self.out_len()..(row + 1) * self.out_len()];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dx[(ci * self.h + iy) * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Separable bilinear interpolation taps for one axis (half-pixel centers).
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

impl Tensor {
    /// 2-D cross-correlation of `[B,C,H,W]` with `weight[O,C,kh,kw]` plus
    /// `bias[O]`. Output extent is `(H + 2·pad − kh) / stride + 1`, rounded
    /// down.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::shape("conv2d", xs, ws));
        }
        if stride == 0 || ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel {:?} must be odd, stride {stride} positive", &ws[2..])));
        }
        let (batch, out_ch) = (xs[0], ws[0]);
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(Error::shape("conv2d", xs, ws));
        }
        if let Some(b) = bias {
            if b.shape() != [out_ch] {
                return Err(Error::shape("conv2d bias", b.shape(), &[out_ch]));
            }
        }
        let geom = ConvGeom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            oh: (xs[2] + 2 * pad - ws[2]) / stride + 1,
            ow: (xs[3] + 2 * pad - ws[3]) / stride + 1,
        };
        let (in_len, pl, ol) = (geom.c * geom.h * geom.w, geom.patch_len(), geom.out_len());
        let keep_cols = weight.requires_grad();
        let x = self.data();
        let wd = weight.data();
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = par::map(batch, |b| {
            let cols = geom.im2col(&x[b * in_len..(b + 1) * in_len]);
            let mut y = vec![0.0; out_ch * ol];
            if let Some(bias) = bias {
                for (o, row) in y.chunks_mut(ol).enumerate() {
                    row.fill(bias.data()[o]);
                }
            }
            gemm(out_ch, pl, ol, wd, false, &cols, false, &mut y, bias.is_some());
            (y, if keep_cols { cols } else { Vec::new() })
        });
        let mut out = Vec::with_capacity(batch * out_ch * ol);
        let mut cache = Vec::with_capacity(batch);
        for (y, cols) in per_sample {
            out.extend_from_slice(&y);
            cache.push(cols);
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            out,
            vec![batch, out_ch, geom.oh, geom.ow],
            "conv2d",
            inputs,
            Box::new(move |g, _, inp| {
                let (x, w) = (&inp[0], &inp[1]);
                let wd = w.data();
                let need_x = x.requires_grad();
                let need_w = w.requires_grad();
                let parts: Vec<(Vec<f64>, Vec<f64>)> = par::map(batch, |b| {
                    let gb = &g[b * out_ch * ol..(b + 1) * out_ch * ol];
                    let dx = if need_x {
                        let mut dcols = vec![0.0; pl * ol];
                        gemm(pl, out_ch, ol, wd, true, gb, false, &mut dcols, false);
                        let mut dx = vec![0.0; in_len];
                        geom.col2im(&dcols, &mut dx);
                        dx
                    } else {
                        Vec::new()
                    };
                    let dw = if need_w {
                        let mut dw = vec![0.0; out_ch * pl];
                        gemm(out_ch, ol, pl, gb, false, &cache[b], true, &mut dw, false);
                        dw
                    } else {
                        Vec::new()
                    };
                    (dx, dw)
                });
                let mut dx_all = Vec::new();
                let mut dw_parts = Vec::new();
                for (dx, dw) in parts {
                    dx_all.extend(dx);
                    dw_parts.push(dw);
                }
                let mut grads = vec![
                    need_x.then_some(dx_all),
                    need_w.then(|| par::sum_in_order(dw_parts, out_ch * pl)),
                ];
                if inp.len() == 3 {
                    let mut db = vec![0.0; out_ch];
                    for (i, gi) in g.chunks(ol).enumerate() {
                        db[i % out_ch] += gi.iter().sum::<f64>();
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance, then
    /// applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().expect("rank >= 1");
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gamma.shape()));
        }
        let stats = move |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            (mean, 1.0 / (var + eps).sqrt())
        };
        let (gd, bd) = (gamma.data(), beta.data());
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let (mean, rstd) = stats(row);
            out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * rstd * gd[j] + bd[j]));
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, inp| {
                let (x, gamma) = (inp[0].data(), inp[1].data());
                let mut dx = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for ((row, grow), dxrow) in x.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let (mean, rstd) = stats(row);
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = grow[j] * gamma[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dxrow[j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        ))
    }

    /// Scales every row of the last axis to unit L2 norm. All-zero rows stay
    /// zero and pass no gradient.
    pub fn normalize_rows(&self) -> Tensor {
        let d = *self.shape().last().expect("rank >= 1");
        let norms: Vec<f64> = self.data().chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut out = Vec::with_capacity(self.numel());
        for (r, &n) in self.data().chunks(d).zip(&norms) {
            if n > 0.0 {
                out.extend(r.iter().map(|v| v / n));
            } else {
                out.extend(std::iter::repeat_n(0.0, d));
            }
        }
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "normalize_rows",
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![0.0; y.len()];
                for (((gr, yr), dst), &n) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)).zip(&norms) {
                    if n > 0.0 {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dst[j] = (gr[j] - yr[j] * dot) / n;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear resize of `[B,C,h,w]` to `[B,C,out_h,out_w]` with
    /// half-pixel sample centers and edge clamping.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resize_bilinear", format!("input {s:?} -> {out_h}x{out_w}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let x = self.data();
        let mut out = vec![0.0; planes * out_h * out_w];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], out_h, out_w],
            "resize_bilinear",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let gp = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let v = gp[oy * out_w + ox];
                            dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += v * fy * (1.0 - fx);
                            dst[y1 * w + x1] += v * fy * fx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Non-overlapping `k×k` mean pooling of `[B,C,H,W]`; `k` must divide
    /// both spatial extents.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
            return Err(Error::invalid("avg_pool2d", format!("input {s:?} with window {k}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let x = self.data();
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * oh + y / k) * ow + xx / k] += x[(p * h + y) * w + xx] * norm;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], oh, ow],
            "avg_pool2d",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(p * h + y) * w + xx] = g[(p * oh + y / k) * ow + xx / k] * norm;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
