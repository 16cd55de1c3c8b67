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

//! Synthetic segmentation scenes, augmentation and dataset files.
//!
//! Class 0 is a textured background. Every other class is drawn as one
//! shape per image from a fixed family (rectangle, disc or stripe, cycling
//! by class index) in a class-specific color, and then the whole image
//! gets pixel noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::container::{self, find};
use crate::error::{Error, Result};
use crate::par;
use crate::pdd::LabelMap;
use crate::tensor::Tensor;

pub const PIXEL_NOISE: f64 = 0.1;
/// Distance of each class color from mid-grey.
pub const COLOR_CONTRAST: f64 = 0.16;
const TEXTURE_AMPLITUDE: f64 = 0.08;
const INSTANCE_JITTER: f64 = 0.04;
const ILLUMINATION_JITTER: f64 = 0.08;

#[derive(Debug, Clone)]
pub struct SynthSample {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]`.
    pub label: LabelMap,
}

impl SynthSample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Mean color of a class. Foreground classes sit on a ring around grey,
/// the background is grey itself.
pub fn class_color(class: usize, classes: usize) -> [f64; 3] {
    if class == 0 {
        return [0.5; 3];
    }
    let angle = std::f64::consts::TAU * (class - 1) as f64 / (classes - 1) as f64;
    let mut c = [0.0; 3];
    for (ch, v) in c.iter_mut().enumerate() {
        let phase = angle - std::f64::consts::TAU * ch as f64 / 3.0;
        *v = 0.5 + COLOR_CONTRAST * phase.cos();
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Rect,
    Disc,
    Stripe,
}

fn family(class: usize) -> Family {
    match (class - 1) % 3 {
        0 => Family::Rect,
        1 => Family::Disc,
        _ => Family::Stripe,
    }
}

/// Boolean mask of one randomly placed shape.
fn draw_shape(rng: &mut ChaCha8Rng, fam: Family, h: usize, w: usize) -> Vec<bool> {
    let (hf, wf) = (h as f64, w as f64);
    let mut mask = vec![false; h * w];
    match fam {
        Family::Rect => {
            let rh = rng.random_range(h / 4..=h / 2).max(1);
            let rw = rng.random_range(w / 4..=w / 2).max(1);
            let y0 = rng.random_range(0..=h - rh);
            let x0 = rng.random_range(0..=w - rw);
            for y in y0..y0 + rh {
                mask[y * w + x0..y * w + x0 + rw].fill(true);
            }
        }
        Family::Disc => {
            let r = rng.random_range(hf.min(wf) / 7.0..hf.min(wf) / 3.5);
            let cy = rng.random_range(r..hf - r);
            let cx = rng.random_range(r..wf - r);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    mask[y * w + x] = dy * dy + dx * dx <= r * r;
                }
            }
        }
        Family::Stripe => {
            let width = rng.random_range(hf.min(wf) / 8.0..hf.min(wf) / 4.5);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let (ny, nx) = (theta.sin(), theta.cos());
            let offset = rng.random_range(-0.25..0.25) * hf.min(wf);
            for y in 0..h {
                for x in 0..w {
                    let d = (y as f64 + 0.5 - hf / 2.0) * ny + (x as f64 + 0.5 - wf / 2.0) * nx - offset;
                    mask[y * w + x] = d.abs() <= width / 2.0;
                }
            }
        }
    }
    mask
}

fn generate_one(seed: u64, index: usize, h: usize, w: usize, k: usize) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive sigma");

    let mut label = vec![0usize; h * w];
    let mut order: Vec<usize> = (1..k).collect();
    order.shuffle(&mut rng);
    let mut colors = vec![[0.0; 3]; k];
    for &c in &order {
        let mask = draw_shape(&mut rng, family(c), h, w);
        for (l, m) in label.iter_mut().zip(mask) {
            if m {
                *l = c;
            }
        }
    }
    for (c, color) in colors.iter_mut().enumerate() {
        let base = class_color(c, k);
        for ch in 0..3 {
            color[ch] = base[ch] + rng.random_range(-INSTANCE_JITTER..INSTANCE_JITTER);
        }
    }
    let illum = rng.random_range(-ILLUMINATION_JITTER..ILLUMINATION_JITTER);
    let freq: [f64; 2] = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
    let phase: [f64; 3] = [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)];

    let mut image = vec![0.0; 3 * h * w];
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let mut v = colors[label[p]][ch] + illum;
                if label[p] == 0 {
                    v += TEXTURE_AMPLITUDE * (freq[0] * y as f64 + freq[1] * x as f64 + phase[ch]).sin();
                }
                v += noise.sample(&mut rng);
                image[ch * h * w + p] = v.clamp(0.0, 1.0);
            }
        }
    }
    SynthSample {
        image: Tensor::new(image, &[3, h, w]).expect("consistent shape"),
        label: LabelMap::new(label, [1, h, w]).expect("consistent shape"),
    }
}

/// `n` scenes of size `h × w` with `k` classes. Sample `i` only depends on
/// `(seed, i)`, so generation order and threading do not matter.
pub fn generate_dataset(seed: u64, n: usize, h: usize, w: usize, k: usize) -> Result<Vec<SynthSample>> {
    if k < 2 {
        return Err(Error::invalid("generate_dataset", format!("need at least 2 classes, got {k}")));
    }
    if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(Error::invalid("generate_dataset", format!("{h}x{w} is not a positive multiple of 4")));
    }
    Ok(par::map(n, |i| generate_one(seed, i, h, w, k)))
}

/// Train and validation splits drawn from disjoint sample indices of one
/// seed: training samples use indices `0..n_train`, validation samples the
/// indices after them.
pub fn generate_splits(seed: u64, n_train: usize, n_val: usize, h: usize, w: usize, k: usize) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
    let mut all = generate_dataset(seed, n_train + n_val, h, w, k)?;
    let val = all.split_off(n_train);
    Ok((all, val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl AugmentConfig {
    /// Flip half the time, crop to 7/8 of each side.
    pub fn for_size(h: usize, w: usize) -> Self {
        AugmentConfig { flip_prob: 0.5, crop_h: h * 7 / 8, crop_w: w * 7 / 8 }
    }
}

/// Mirrors image and label left to right.
pub fn flip_horizontal(s: &SynthSample) -> SynthSample {
    let (h, w) = (s.height(), s.width());
    let img = s.image.data();
    let image = (0..3 * h * w).map(|i| img[i - i % w + (w - 1 - i % w)]).collect();
    let lab = s.label.values();
    let label = (0..h * w).map(|i| lab[i - i % w + (w - 1 - i % w)]).collect();
    SynthSample {
        image: Tensor::new(image, &[3, h, w]).expect("same shape"),
        label: LabelMap::new(label, [1, h, w]).expect("same shape"),
    }
}

/// Cuts the `ch × cw` window at `(y0, x0)` and scales it back to full size:
/// bilinear for the image, nearest for labels.
pub fn crop_resize(s: &SynthSample, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<SynthSample> {
    let (h, w) = (s.height(), s.width());
    if ch == 0 || cw == 0 || y0 + ch > h || x0 + cw > w {
        return Err(Error::invalid("crop_resize", format!("window {ch}x{cw}@({y0},{x0}) outside {h}x{w}")));
    }
    if (ch, cw) == (h, w) {
        return Ok(s.clone());
    }
    let img = s.image.data();
    let mut window = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        for y in y0..y0 + ch {
            let row = (c * h + y) * w;
            window.extend_from_slice(&img[row + x0..row + x0 + cw]);
        }
    }
    let image = Tensor::new(window, &[1, 3, ch, cw])?.resize_bilinear(h, w)?.reshape(&[3, h, w])?;
    let lab = s.label.values();
    let label = (0..h * w)
        .map(|p| {
            let sy = y0 + ((p / w) * 2 + 1) * ch / (2 * h);
            let sx = x0 + ((p % w) * 2 + 1) * cw / (2 * w);
            lab[sy * w + sx]
        })
        .collect();
    Ok(SynthSample { image, label: LabelMap::new(label, [1, h, w])? })
}

/// Random flip then random crop, resized back to the original size.
pub fn augment<R: Rng + ?Sized>(s: &SynthSample, rng: &mut R, cfg: &AugmentConfig) -> Result<SynthSample> {
    let (h, w) = (s.height(), s.width());
    if cfg.crop_h > h || cfg.crop_w > w {
        return Err(Error::invalid("augment", format!("crop {}x{} larger than {h}x{w}", cfg.crop_h, cfg.crop_w)));
    }
    let flipped = rng.random::<f64>() < cfg.flip_prob;
    let y0 = rng.random_range(0..=h - cfg.crop_h);
    let x0 = rng.random_range(0..=w - cfg.crop_w);
    let base = if flipped { flip_horizontal(s) } else { s.clone() };
    crop_resize(&base, y0, x0, cfg.crop_h, cfg.crop_w)
}

/// Stacks samples into `[B,3,H,W]` images and a `[B,H,W]` label map.
pub fn collate(samples: &[&SynthSample]) -> Result<(Tensor, LabelMap)> {
    let first = samples.first().ok_or_else(|| Error::invalid("collate", "empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut image = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut label = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::shape("collate", s.image.shape(), first.image.shape()));
        }
        image.extend_from_slice(s.image.data());
        label.extend_from_slice(s.label.values());
    }
    let b = samples.len();
    Ok((Tensor::new(image, &[b, 3, h, w])?, LabelMap::new(label, [b, h, w])?))
}

/// Writes `image_{i}` / `label_{i}` entries.
pub fn save_split(path: impl AsRef<Path>, samples: &[SynthSample]) -> Result<()> {
    let mut entries = Vec::with_capacity(2 * samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = (s.height(), s.width());
        let lab = s.label.values().iter().map(|&v| v as f64).collect();
        entries.push((format!("image_{i}"), s.image.clone()));
        entries.push((format!("label_{i}"), Tensor::new(lab, &[h, w])?));
    }
    container::save_container(path, &entries)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<SynthSample>> {
    let entries = container::load_container(path)?;
    let n = entries.len() / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("label_{i}");
        let image = find(&entries, &format!("image_{i}"))?.clone();
        let lab = find(&entries, &name)?;
        let s = image.shape().to_vec();
        if s.len() != 3 || s[0] != 3 || lab.shape() != &s[1..] {
            return Err(crate::ContainerError::BadEntry { name, msg: format!("image {s:?} vs label {:?}", lab.shape()) }.into());
        }
        let mut values = Vec::with_capacity(lab.numel());
        for &v in lab.data() {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(crate::ContainerError::BadEntry { name, msg: format!("label value {v} is not a class index") }.into());
            }
            values.push(v as usize);
        }
        out.push(SynthSample { image, label: LabelMap::new(values, [1, s[1], s[2]])? });
    }
    Ok(out)
}

pub const TRAIN_FILE: &str = "train.c2vt";
pub const VAL_FILE: &str = "val.c2vt";
