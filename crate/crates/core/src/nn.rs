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

//! Differentiable layers shared by the teacher and the student.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A container of named trainable tensors.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Replaces every parameter by a constant copy, so no operation on the
    /// module records gradients.
    fn freeze(&mut self) {
        self.visit_mut("", &mut |_, t| *t = t.detach());
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn normal_param<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::param((0..n).map(|_| dist.sample(rng)).collect(), shape).expect("shape")
}

pub(crate) fn const_param(shape: &[usize], v: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(vec![v; n], shape).expect("shape")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: normal_param(rng, &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt()),
            bias: const_param(&[fan_out], 0.0),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: const_param(&[fan_in, fan_out], 0.0),
            bias: const_param(&[fan_out], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, Some(&self.bias))
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// He-initialized square kernel with `same` padding.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_ch * kernel * kernel;
        Conv2dLayer {
            weight: normal_param(rng, &[out_ch, in_ch, kernel, kernel], (2.0 / fan_in as f64).sqrt()),
            bias: const_param(&[out_ch], 0.0),
            stride,
            padding: kernel / 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl Module for Conv2dLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: const_param(&[dim], 1.0),
            beta: const_param(&[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

/// Multi-head scaled dot-product self-attention without positional terms.
#[derive(Debug, Clone)]
pub struct MhsaLayer {
    pub num_heads: usize,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

impl MhsaLayer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || !dim.is_multiple_of(num_heads) {
            return Err(Error::Config(format!("dim {dim} not divisible by {num_heads} heads")));
        }
        let std = (1.0 / dim as f64).sqrt();
        Ok(MhsaLayer {
            num_heads,
            w_q: normal_param(rng, &[dim, dim], std),
            w_k: normal_param(rng, &[dim, dim], std),
            w_v: normal_param(rng, &[dim, dim], std),
            w_o: normal_param(rng, &[dim, dim], std),
        })
    }

    /// Builds a layer from explicit `[D,D]` projections.
    pub fn from_weights(num_heads: usize, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor) -> Result<Self> {
        let d = w_q.shape()[0];
        for w in [&w_q, &w_k, &w_v, &w_o] {
            if w.shape() != [d, d] {
                return Err(Error::shape("MhsaLayer", w.shape(), &[d, d]));
            }
        }
        if num_heads == 0 || !d.is_multiple_of(num_heads) {
            return Err(Error::Config(format!("dim {d} not divisible by {num_heads} heads")));
        }
        Ok(MhsaLayer { num_heads, w_q, w_k, w_v, w_o })
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.num_heads
    }

    fn split_heads(&self, x: &Tensor, b: usize, t: usize) -> Result<Tensor> {
        let (h, hd) = (self.num_heads, self.head_dim());
        x.reshape(&[b, t, h, hd])?.permute(&[0, 2, 1, 3])?.reshape(&[b * h, t, hd])
    }

    /// Attention weights `[B·heads, T, T]`; each row sums to one.
    pub fn attention(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check(tokens)?;
        let q = self.split_heads(&tokens.linear(&self.w_q, None)?, b, t)?;
        let k = self.split_heads(&tokens.linear(&self.w_k, None)?, b, t)?;
        q.bmm(&k, true)?.scale(1.0 / (self.head_dim() as f64).sqrt()).softmax(2)
    }

    fn check(&self, tokens: &Tensor) -> Result<(usize, usize)> {
        let s = tokens.shape();
        if s.len() != 3 || s[2] != self.dim() {
            return Err(Error::shape("mhsa_forward", s, &[self.dim()]));
        }
        Ok((s[0], s[1]))
    }

    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check(tokens)?;
        let (h, hd) = (self.num_heads, self.head_dim());
        let attn = self.attention(tokens)?;
        let v = self.split_heads(&tokens.linear(&self.w_v, None)?, b, t)?;
        let mixed = attn.bmm(&v, false)?.reshape(&[b, h, t, hd])?.permute(&[0, 2, 1, 3])?.reshape(&[b, t, h * hd])?;
        mixed.linear(&self.w_o, None)
    }
}

impl Module for MhsaLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w_q"), &self.w_q);
        f(join(prefix, "w_k"), &self.w_k);
        f(join(prefix, "w_v"), &self.w_v);
        f(join(prefix, "w_o"), &self.w_o);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_q"), &mut self.w_q);
        f(join(prefix, "w_k"), &mut self.w_k);
        f(join(prefix, "w_v"), &mut self.w_v);
        f(join(prefix, "w_o"), &mut self.w_o);
    }
}

/// Splits `[B,C,H,W]` into non-overlapping `p×p` patches in raster order,
/// each flattened channel-major: `[B, (H/p)·(W/p), C·p·p]`.
pub fn patch_partition(x: &Tensor, p: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || p == 0 || !s[2].is_multiple_of(p) || !s[3].is_multiple_of(p) {
        return Err(Error::invalid("patch_partition", format!("input {s:?} not divisible by patch {p}")));
    }
    let (b, c, hp, wp) = (s[0], s[1], s[2] / p, s[3] / p);
    x.reshape(&[b, c, hp, p, wp, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, hp * wp, c * p * p])
}

/// Inverse of [`patch_partition`]: `[B, hp·wp, C·p·p]` back to `[B,C,H,W]`.
pub fn patch_merge(tokens: &Tensor, channels: usize, p: usize, hp: usize, wp: usize) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 || s[1] != hp * wp || s[2] != channels * p * p {
        return Err(Error::shape("patch_merge", s, &[hp * wp, channels * p * p]));
    }
    let b = s[0];
    tokens
        .reshape(&[b, hp, wp, channels, p, p])?
        .permute(&[0, 3, 1, 4, 2, 5])?
        .reshape(&[b, channels, hp * p, wp * p])
}

/// Mean over spatial positions of `[B,D,h,w]` or over tokens of `[B,T,D]`.
pub fn global_avg_pool(f: &Tensor) -> Result<Tensor> {
    match f.rank() {
        4 => {
            let s = f.shape();
            f.reshape(&[s[0], s[1], s[2] * s[3]])?.mean_axis(2)
        }
        3 => f.mean_axis(1),
        _ => Err(Error::invalid("global_avg_pool", format!("rank {} input", f.rank()))),
    }
}

/// Patch projection: `[B,3,H,W]` to `[B,T,Z]` tokens.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub patch_size: usize,
    pub proj: Linear,
}

impl PatchEmbed {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, patch_size: usize, dim: usize) -> Self {
        PatchEmbed {
            patch_size,
            proj: Linear::new(rng, in_ch * patch_size * patch_size, dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.proj.forward(&patch_partition(x, self.patch_size)?)
    }
}

impl Module for PatchEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}
