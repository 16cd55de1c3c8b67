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

//! Teacher and student segmentation networks plus the training-only heads
//! that bring their features into a common space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, join, patch_merge, Conv2dLayer, LayerNorm, Linear, MhsaLayer, Module, PatchEmbed};
use crate::tensor::Tensor;

/// Confidence maps (pre-softmax, full resolution) and last-stage features
/// of one network.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    pub logits: Tensor,
    pub features: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub in_channels: usize,
    pub classes: usize,
    /// Output channels of the four stages.
    pub widths: [usize; 4],
    pub convs_per_stage: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            in_channels: 3,
            classes: 4,
            widths: [16, 32, 64, 64],
            convs_per_stage: 2,
        }
    }
}

impl TeacherConfig {
    /// Total downsampling of the feature map relative to the input.
    pub const STRIDE: usize = 4;

    pub fn feature_dim(&self) -> usize {
        self.widths[3]
    }
}

/// Convolutional encoder (two stride-2 stages) with a 1×1 segmentation head
/// and bilinear upsampling back to the input size.
#[derive(Debug, Clone)]
pub struct TeacherNet {
    pub config: TeacherConfig,
    pub convs: Vec<Conv2dLayer>,
    pub head: Conv2dLayer,
}

impl TeacherNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: TeacherConfig) -> Result<Self> {
        if config.classes < 2 || config.convs_per_stage == 0 || config.widths.contains(&0) {
            return Err(Error::Config(format!("invalid teacher config {config:?}")));
        }
        let mut convs = Vec::new();
        let mut ch = config.in_channels;
        for (stage, &width) in config.widths.iter().enumerate() {
            for i in 0..config.convs_per_stage {
                let stride = if i == 0 && (stage == 1 || stage == 2) { 2 } else { 1 };
                convs.push(Conv2dLayer::new(rng, ch, width, 3, stride));
                ch = width;
            }
        }
        let head = Conv2dLayer::new(rng, ch, config.classes, 1, 1);
        Ok(TeacherNet { config, convs, head })
    }

    pub fn forward(&self, x: &Tensor) -> Result<FeatureBundle> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.config.in_channels || !s[2].is_multiple_of(TeacherConfig::STRIDE) || !s[3].is_multiple_of(TeacherConfig::STRIDE) {
            return Err(Error::invalid(
                "teacher_forward",
                format!("input {s:?} needs {} channels and sides divisible by 4", self.config.in_channels),
            ));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu();
        }
        let logits = self.head.forward(&h)?.resize_bilinear(s[2], s[3])?;
        Ok(FeatureBundle { logits, features: h })
    }

    pub fn meta(&self, step: usize) -> Vec<f64> {
        let c = &self.config;
        let mut m = vec![0.0, c.in_channels as f64, c.classes as f64, c.convs_per_stage as f64];
        m.extend(c.widths.iter().map(|&w| w as f64));
        m.push(step as f64);
        m
    }

    pub fn config_from_meta(meta: &[f64]) -> Result<(TeacherConfig, usize)> {
        if meta.len() != 9 || meta[0] != 0.0 {
            return Err(Error::Config("checkpoint metadata does not describe a teacher".into()));
        }
        let u = |i: usize| meta[i] as usize;
        Ok((
            TeacherConfig {
                in_channels: u(1),
                classes: u(2),
                convs_per_stage: u(3),
                widths: [u(4), u(5), u(6), u(7)],
            },
            u(8),
        ))
    }
}

impl Module for TeacherNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub in_channels: usize,
    pub classes: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            in_channels: 3,
            classes: 4,
            image_h: 32,
            image_w: 32,
            patch_size: 4,
            depth: 4,
            dim: 64,
            heads: 4,
            mlp_hidden: 64,
        }
    }
}

impl StudentConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch_size, self.image_w / self.patch_size)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: MhsaLayer,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Block {
            norm1: LayerNorm::new(dim),
            attn: MhsaLayer::new(rng, dim, heads)?,
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, hidden),
            fc2: Linear::new(rng, hidden, dim),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.add(&self.attn.forward(&self.norm1.forward(x)?)?)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&x)?)?.gelu())?;
        x.add(&mlp)
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Patch-attention encoder with a per-token linear decoder that unfolds
/// each token into its `p×p` block of class logits.
#[derive(Debug, Clone)]
pub struct StudentNet {
    pub config: StudentConfig,
    pub embed: PatchEmbed,
    pub pos: Tensor,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub decoder: Linear,
}

impl StudentNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: StudentConfig) -> Result<Self> {
        let c = &config;
        if c.classes < 2 || c.patch_size == 0 || !c.image_h.is_multiple_of(c.patch_size) || !c.image_w.is_multiple_of(c.patch_size) {
            return Err(Error::Config(format!("invalid student config {config:?}")));
        }
        let embed = PatchEmbed::new(rng, c.in_channels, c.patch_size, c.dim);
        let pos = crate::nn::const_param(&[c.tokens(), c.dim], 0.0);
        let blocks = (0..c.depth)
            .map(|_| Block::new(rng, c.dim, c.heads, c.mlp_hidden))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(c.dim);
        let decoder = Linear::new(rng, c.dim, c.classes * c.patch_size * c.patch_size);
        Ok(StudentNet { config, embed, pos, blocks, norm, decoder })
    }

    /// Token features after the last block, `[B, T, D_V]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.image_h || s[3] != c.image_w {
            return Err(Error::invalid(
                "student_forward",
                format!("input {s:?}, expected [B, {}, {}, {}]", c.in_channels, c.image_h, c.image_w),
            ));
        }
        let mut h = self.embed.forward(x)?.add(&self.pos.repeat_leading(s[0])?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let (gh, gw) = c.grid();
        let per_token = self.decoder.forward(&self.norm.forward(features)?)?;
        patch_merge(&per_token, c.classes, c.patch_size, gh, gw)
    }

    pub fn forward(&self, x: &Tensor) -> Result<FeatureBundle> {
        let features = self.encode(x)?;
        let logits = self.decode(&features)?;
        Ok(FeatureBundle { logits, features })
    }

    pub fn meta(&self, step: usize) -> Vec<f64> {
        let c = &self.config;
        [1, c.in_channels, c.classes, c.image_h, c.image_w, c.patch_size, c.depth, c.dim, c.heads, c.mlp_hidden, step]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    pub fn config_from_meta(meta: &[f64]) -> Result<(StudentConfig, usize)> {
        if meta.len() != 11 || meta[0] != 1.0 {
            return Err(Error::Config("checkpoint metadata does not describe a student".into()));
        }
        let u = |i: usize| meta[i] as usize;
        Ok((
            StudentConfig {
                in_channels: u(1),
                classes: u(2),
                image_h: u(3),
                image_w: u(4),
                patch_size: u(5),
                depth: u(6),
                dim: u(7),
                heads: u(8),
                mlp_hidden: u(9),
            },
            u(10),
        ))
    }
}

impl Module for StudentNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.embed.visit(&join(prefix, "embed"), f);
        f(join(prefix, "pos"), &self.pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        f(join(prefix, "pos"), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Global token from `MHSA(Cat[GAP(F), F])` over the teacher's feature map.
/// Only used while distilling.
#[derive(Debug, Clone)]
pub struct AttentionPoolHead {
    pub proj: Option<Linear>,
    pub mhsa: MhsaLayer,
}

impl AttentionPoolHead {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, feature_dim: usize, dim: usize, heads: usize) -> Result<Self> {
        let proj = (feature_dim != dim).then(|| Linear::new(rng, feature_dim, dim));
        Ok(AttentionPoolHead { proj, mhsa: MhsaLayer::new(rng, dim, heads)? })
    }

    /// Returns `(global [B,D], per-position [B, h·w, D])`. The global token
    /// sits at index 0 of the attention sequence.
    pub fn forward(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = features.shape();
        if s.len() != 4 {
            return Err(Error::invalid("attention_pool", format!("expected [B,C,h,w], got {s:?}")));
        }
        let (b, c, n) = (s[0], s[1], s[2] * s[3]);
        let mut tokens = features.reshape(&[b, c, n])?.permute(&[0, 2, 1])?;
        if let Some(p) = &self.proj {
            tokens = p.forward(&tokens)?;
        }
        let d = self.mhsa.dim();
        let gap = global_avg_pool(&tokens)?.reshape(&[b, 1, d])?;
        let out = self.mhsa.forward(&Tensor::concat(&[gap, tokens], 1)?)?;
        let global = out.narrow(1, 0, 1)?.reshape(&[b, d])?;
        let local = out.narrow(1, 1, n)?;
        Ok((global, local))
    }
}

impl Module for AttentionPoolHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
        self.mhsa.visit(&join(prefix, "mhsa"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
        self.mhsa.visit_mut(&join(prefix, "mhsa"), f);
    }
}

/// Maps student tokens to the common aligned dimension. Only used while
/// distilling.
#[derive(Debug, Clone)]
pub struct AlignHead {
    pub linear: Linear,
}

impl AlignHead {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, student_dim: usize, dim: usize) -> Self {
        AlignHead { linear: Linear::new(rng, student_dim, dim) }
    }

    /// Returns `(linear(GAP(F)) [B,D], linear(F) [B,T,D])`.
    pub fn forward(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let global = self.linear.forward(&global_avg_pool(features)?)?;
        let local = self.linear.forward(features)?;
        Ok((global, local))
    }
}

impl Module for AlignHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.linear.visit(&join(prefix, "linear"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.linear.visit_mut(&join(prefix, "linear"), f);
    }
}
