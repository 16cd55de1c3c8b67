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

//! Training loops: supervised teacher pretraining and the student
//! distillation loop with its optimizer, schedule and metrics log.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, collate, AugmentConfig, SynthSample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::models::{AlignHead, AttentionPoolHead, StudentConfig, StudentNet, TeacherConfig, TeacherNet};
use crate::nn::Module;
use crate::pdd::{ce_loss, pdd_loss, LabelMap};
use crate::tensor::Tensor;
use crate::vlfd::{global_loss, linguistic_loss, patch_affinity, patch_loss, teacher_patch_tokens};

// RNG streams derived from one seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_HEADS: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `base_lr · (1 − iter/max_iters)^power`.
pub fn poly_lr(iter: usize, max_iters: usize, base_lr: f64, power: f64) -> f64 {
    let frac = 1.0 - iter.min(max_iters) as f64 / max_iters.max(1) as f64;
    base_lr * frac.powf(power)
}

/// `(iter + 1) / warmup` during the ramp, 1 afterwards.
pub fn warmup_factor(iter: usize, warmup: usize) -> f64 {
    if iter >= warmup {
        1.0
    } else {
        (iter + 1) as f64 / warmup as f64
    }
}

/// Which loss terms take part. With `pdd` off, plain cross-entropy takes
/// the place of the decoupled loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFlags {
    pub pdd: bool,
    pub global: bool,
    pub patch: bool,
    pub linguistic: bool,
}

impl LossFlags {
    pub const ALL: LossFlags = LossFlags { pdd: true, global: true, patch: true, linguistic: true };
    pub const CE_ONLY: LossFlags = LossFlags { pdd: false, global: false, patch: false, linguistic: false };

    pub fn pdd_only() -> Self {
        LossFlags { pdd: true, ..Self::CE_ONLY }
    }

    /// Short tag such as `Ld+Lg+Lp+Ll` or `CE`.
    pub fn label(&self) -> String {
        let mut parts = vec![if self.pdd { "Ld" } else { "CE" }];
        for (on, name) in [(self.global, "Lg"), (self.patch, "Lp"), (self.linguistic, "Ll")] {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }

    fn needs_teacher(&self) -> bool {
        self.pdd || self.global || self.patch || self.linguistic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub lambda_g: f64,
    pub lambda_p: f64,
    pub lambda_l: f64,
    pub alpha: f64,
    pub beta: f64,
    pub base_lr: f64,
    pub power: f64,
    /// Linear ramp of the learning rate over the first iterations.
    pub warmup_iters: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub flags: LossFlags,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Evaluate on the validation split every this many iterations (and
    /// always after the last one). 0 means only at the end.
    pub eval_every: usize,
    /// Width of the common space the linguistic descriptors live in.
    pub align_dim: usize,
    pub pool_heads: usize,
    pub augment: bool,
    pub student: StudentConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda_g: 1.0,
            lambda_p: 1.0,
            lambda_l: 1.0,
            alpha: 1.0,
            beta: 1.0,
            base_lr: 1e-3,
            power: 1.0,
            warmup_iters: 100,
            max_iters: 1000,
            batch_size: 8,
            seed: 0,
            flags: LossFlags::ALL,
            weight_decay: 0.01,
            grad_clip: 5.0,
            eval_every: 250,
            align_dim: 64,
            pool_heads: 4,
            augment: true,
            student: StudentConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_g", self.lambda_g),
            ("lambda_p", self.lambda_p),
            ("lambda_l", self.lambda_l),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("base_lr", self.base_lr),
            ("power", self.power),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
        }
        if self.max_iters == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_iters and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    pub augment: bool,
    pub teacher: TeacherConfig,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            base_lr: 2e-3,
            power: 1.0,
            max_iters: 2000,
            batch_size: 8,
            seed: 0,
            weight_decay: 0.01,
            grad_clip: 5.0,
            eval_every: 500,
            augment: false,
            teacher: TeacherConfig::default(),
        }
    }
}

/// AdamW with decoupled weight decay. Moments are kept in parameter visit
/// order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(modules: &[&dyn Module], weight_decay: f64) -> Self {
        let mut m = Vec::new();
        for module in modules {
            module.visit("", &mut |_, t| m.push(vec![0.0; t.numel()]));
        }
        OptimizerState { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, v: m.clone(), m }
    }

    /// Applies one update from the gradients stored on the parameters,
    /// after scaling them so their global L2 norm is at most `clip`.
    /// Returns the norm before clipping.
    pub fn update(&mut self, modules: &mut [&mut dyn Module], lr: f64, clip: f64) -> f64 {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.m.len());
        for module in modules.iter() {
            module.visit("", &mut |_, t| grads.push(t.grad().unwrap_or_else(|| vec![0.0; t.numel()])));
        }
        assert_eq!(grads.len(), self.m.len(), "optimizer built for a different parameter set");
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let mut idx = 0;
        for module in modules.iter_mut() {
            module.visit_mut("", &mut |_, p| {
                let (m, v, g) = (&mut self.m[idx], &mut self.v[idx], &grads[idx]);
                let mut data = p.to_vec();
                for j in 0..data.len() {
                    let gj = g[j] * scale;
                    m[j] = b1 * m[j] + (1.0 - b1) * gj;
                    v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                    let step = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                    data[j] -= lr * (step + wd * data[j]);
                }
                *p = Tensor::param(data, p.shape()).expect("same shape");
                idx += 1;
            });
        }
        norm
    }
}

/// The four loss values of one step; disabled terms are exact zeros.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub d: Tensor,
    pub g: Tensor,
    pub p: Tensor,
    pub l: Tensor,
}

impl LossParts {
    pub fn zeros() -> Self {
        LossParts { d: Tensor::scalar(0.0), g: Tensor::scalar(0.0), p: Tensor::scalar(0.0), l: Tensor::scalar(0.0) }
    }
}

/// `L_d + λ_g·L_g + λ_p·L_p + λ_l·L_l` over the enabled terms. A
/// non-finite term fails with its name.
pub fn total_loss(parts: &LossParts, cfg: &DistillConfig, iter: usize) -> Result<Tensor> {
    let named = [("L_d", &parts.d), ("L_g", &parts.g), ("L_p", &parts.p), ("L_l", &parts.l)];
    if let Some((term, _)) = named.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::Divergence { term, iter });
    }
    let f = cfg.flags;
    let mut terms = vec![parts.d.clone()];
    for (on, lambda, t) in [(f.global, cfg.lambda_g, &parts.g), (f.patch, cfg.lambda_p, &parts.p), (f.linguistic, cfg.lambda_l, &parts.l)] {
        if on && lambda != 0.0 {
            terms.push(t.scale(lambda));
        }
    }
    let total = Tensor::add_all(&terms)?;
    if !total.is_finite() {
        return Err(Error::Divergence { term: "L_total", iter });
    }
    Ok(total)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub l_p: f64,
    pub l_l: f64,
    pub l_total: f64,
    pub val_miou: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,lr,L_d,L_g,L_p,L_l,L_total,val_miou";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let miou = r.val_miou.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{},{},{}", r.iter, r.lr, r.l_d, r.l_g, r.l_p, r.l_l, r.l_total, miou).unwrap();
    }
    out
}

/// Draws a batch of (optionally augmented) samples.
fn next_batch(rng: &mut ChaCha8Rng, data: &[SynthSample], batch: usize, aug: Option<&AugmentConfig>) -> Result<(Tensor, LabelMap)> {
    let mut picked = Vec::with_capacity(batch);
    for _ in 0..batch {
        let s = &data[rng.random_range(0..data.len())];
        picked.push(match aug {
            Some(cfg) => augment(s, rng, cfg)?,
            None => s.clone(),
        });
    }
    collate(&picked.iter().collect::<Vec<_>>())
}

/// Confusion matrix of a segmentation function over a sample set.
pub fn evaluate(segment: impl Fn(&Tensor) -> Result<Tensor>, data: &[SynthSample], classes: usize, batch: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    for chunk in data.chunks(batch.max(1)) {
        let (x, y) = collate(&chunk.iter().collect::<Vec<_>>())?;
        cm.accumulate_logits(&segment(&x)?, &y)?;
    }
    Ok(cm)
}

pub fn evaluate_teacher(net: &TeacherNet, data: &[SynthSample], batch: usize) -> Result<ConfusionMatrix> {
    let mut frozen = net.clone();
    frozen.freeze();
    evaluate(|x| Ok(frozen.forward(x)?.logits), data, net.config.classes, batch)
}

/// Runs the plain student forward only; no training-time head is involved.
pub fn evaluate_student(net: &StudentNet, data: &[SynthSample], batch: usize) -> Result<ConfusionMatrix> {
    let mut frozen = net.clone();
    frozen.freeze();
    evaluate(|x| Ok(frozen.forward(x)?.logits), data, net.config.classes, batch)
}

fn check_data(train: &[SynthSample], h: usize, w: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(s) = train.iter().find(|s| (s.height(), s.width()) != (h, w)) {
        return Err(Error::Config(format!("sample of size {}x{} in a {h}x{w} run", s.height(), s.width())));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub net: TeacherNet,
    pub step: usize,
    pub log: Vec<MetricsRow>,
    pub final_miou: Option<f64>,
}

/// Supervised cross-entropy training of the teacher. Starting from
/// `resume` continues at its step counter; a run that is already at
/// `max_iters` returns the network untouched.
pub fn train_teacher(
    cfg: &TeacherTrainConfig,
    train: &[SynthSample],
    val: &[SynthSample],
    resume: Option<(TeacherNet, usize)>,
) -> Result<TeacherRun> {
    if cfg.max_iters == 0 || cfg.batch_size == 0 || cfg.base_lr.is_nan() || cfg.base_lr < 0.0 {
        return Err(Error::Config("teacher run needs max_iters >= 1, batch_size >= 1, base_lr >= 0".into()));
    }
    let (h, w) = (train.first().map_or(0, |s| s.height()), train.first().map_or(0, |s| s.width()));
    check_data(train, h, w)?;
    let (mut net, start) = match resume {
        Some((net, step)) => (net, step),
        None => (TeacherNet::new(&mut rng_for(cfg.seed, STREAM_INIT), cfg.teacher.clone())?, 0),
    };
    let mut data_rng = rng_for(cfg.seed, STREAM_DATA);
    let aug = cfg.augment.then(|| AugmentConfig::for_size(h, w));
    let mut opt = OptimizerState::new(&[&net], cfg.weight_decay);
    let mut log = Vec::new();
    let mut final_miou = None;
    for iter in start..cfg.max_iters {
        let lr = poly_lr(iter, cfg.max_iters, cfg.base_lr, cfg.power);
        let (x, y) = next_batch(&mut data_rng, train, cfg.batch_size, aug.as_ref())?;
        let loss = ce_loss(&net.forward(&x)?.logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { term: "CE", iter });
        }
        loss.backward()?;
        opt.update(&mut [&mut net], lr, cfg.grad_clip);
        let done = iter + 1;
        let eval_now = done == cfg.max_iters || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        let val_miou = if eval_now && !val.is_empty() { Some(evaluate_teacher(&net, val, 50)?.miou().1) } else { None };
        if let Some(m) = val_miou {
            final_miou = val_miou;
            log::info!("teacher iter {done}: loss {:.4} val mIoU {m:.4}", loss.item());
        }
        let l = loss.item();
        log.push(MetricsRow { iter: done, lr, l_d: l, l_g: 0.0, l_p: 0.0, l_l: 0.0, l_total: l, val_miou });
    }
    Ok(TeacherRun { net, step: start.max(cfg.max_iters), log, final_miou })
}

/// Training-time heads that map both networks into the common space.
#[derive(Debug, Clone)]
pub struct DistillHeads {
    /// Teacher side. Its output is a constant target, so it stays at its
    /// seeded initialization.
    pub pool: AttentionPoolHead,
    pub align: AlignHead,
}

#[derive(Debug, Clone)]
pub struct DistillRun {
    pub student: StudentNet,
    pub heads: DistillHeads,
    pub log: Vec<MetricsRow>,
    pub final_miou: Option<f64>,
}

/// Rejects teacher/student pairs whose feature grids cannot be matched.
pub fn check_compatible(teacher: &TeacherConfig, student: &StudentConfig) -> Result<()> {
    if teacher.classes != student.classes || teacher.in_channels != student.in_channels {
        return Err(Error::Config(format!(
            "teacher has {} classes / {} channels, student {} / {}",
            teacher.classes, teacher.in_channels, student.classes, student.in_channels
        )));
    }
    let (h, w, p) = (student.image_h, student.image_w, student.patch_size);
    let s = TeacherConfig::STRIDE;
    if p == 0 || h % p != 0 || w % p != 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Config(format!("{h}x{w} input does not divide into patch {p} and teacher stride {s}")));
    }
    let (hf, wf, hp, wp) = (h / s, w / s, h / p, w / p);
    if hf % hp != 0 || wf % wp != 0 || hf / hp != wf / wp {
        return Err(Error::Config(format!(
            "teacher feature grid {hf}x{wf} cannot be partitioned into the student's {hp}x{wp} token grid"
        )));
    }
    Ok(())
}

/// Builds the loss terms of one distillation step.
pub fn distill_losses(
    cfg: &DistillConfig,
    teacher: &TeacherNet,
    student: &StudentNet,
    heads: &DistillHeads,
    x: &Tensor,
    y: &LabelMap,
) -> Result<LossParts> {
    let f = cfg.flags;
    let sv = student.forward(x)?;
    let mut parts = LossParts::zeros();
    if !f.needs_teacher() {
        parts.d = ce_loss(&sv.logits, y)?;
        return Ok(parts);
    }
    let sc = teacher.forward(x)?;
    let fc = sc.features.detach();
    let grid = student.config.grid();
    if f.linguistic {
        let (lc, _) = heads.pool.forward(&fc)?;
        let (lv, _) = heads.align.forward(&sv.features)?;
        parts.l = linguistic_loss(&lv, &lc)?;
    }
    if f.global {
        parts.g = global_loss(&sv.features, grid, &fc)?;
    }
    if f.patch {
        let mc = patch_affinity(&teacher_patch_tokens(&fc, grid)?)?;
        let mv = patch_affinity(&sv.features)?;
        parts.p = patch_loss(&mc, &mv)?;
    }
    parts.d = if f.pdd { pdd_loss(&sv.logits, &sc.logits, y, cfg.alpha, cfg.beta)? } else { ce_loss(&sv.logits, y)? };
    Ok(parts)
}

pub fn new_student(cfg: &DistillConfig) -> Result<StudentNet> {
    StudentNet::new(&mut rng_for(cfg.seed, STREAM_INIT), cfg.student.clone())
}

pub fn new_heads(cfg: &DistillConfig, teacher: &TeacherConfig) -> Result<DistillHeads> {
    let mut rng = rng_for(cfg.seed, STREAM_HEADS);
    let mut pool = AttentionPoolHead::new(&mut rng, teacher.feature_dim(), cfg.align_dim, cfg.pool_heads)?;
    pool.freeze();
    let align = AlignHead::new(&mut rng, cfg.student.dim, cfg.align_dim);
    Ok(DistillHeads { pool, align })
}

/// The distillation loop. The teacher is used through a frozen copy, so
/// its parameters cannot change.
pub fn distill(cfg: &DistillConfig, teacher: &TeacherNet, train: &[SynthSample], val: &[SynthSample]) -> Result<DistillRun> {
    cfg.validate()?;
    check_compatible(&teacher.config, &cfg.student)?;
    check_data(train, cfg.student.image_h, cfg.student.image_w)?;
    let mut frozen = teacher.clone();
    frozen.freeze();

    let mut student = new_student(cfg)?;
    let mut heads = new_heads(cfg, &teacher.config)?;
    let train_align = cfg.flags.linguistic;
    let mut opt = if train_align {
        OptimizerState::new(&[&student, &heads.align], cfg.weight_decay)
    } else {
        OptimizerState::new(&[&student], cfg.weight_decay)
    };
    let mut data_rng = rng_for(cfg.seed, STREAM_DATA);
    let aug = cfg.augment.then(|| AugmentConfig::for_size(cfg.student.image_h, cfg.student.image_w));
    let mut log = Vec::with_capacity(cfg.max_iters);
    let mut final_miou = None;
    for iter in 0..cfg.max_iters {
        let lr = warmup_factor(iter, cfg.warmup_iters) * poly_lr(iter, cfg.max_iters, cfg.base_lr, cfg.power);
        let (x, y) = next_batch(&mut data_rng, train, cfg.batch_size, aug.as_ref())?;
        let parts = distill_losses(cfg, &frozen, &student, &heads, &x, &y)?;
        let total = total_loss(&parts, cfg, iter)?;
        total.backward()?;
        if train_align {
            opt.update(&mut [&mut student, &mut heads.align], lr, cfg.grad_clip);
        } else {
            opt.update(&mut [&mut student], lr, cfg.grad_clip);
        }
        let done = iter + 1;
        let eval_now = done == cfg.max_iters || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        let val_miou = if eval_now && !val.is_empty() { Some(evaluate_student(&student, val, 50)?.miou().1) } else { None };
        if let Some(m) = val_miou {
            final_miou = Some(m);
            log::info!("distill [{}] iter {done}: L_total {:.4} val mIoU {m:.4}", cfg.flags.label(), total.item());
        }
        log.push(MetricsRow {
            iter: done,
            lr,
            l_d: parts.d.item(),
            l_g: parts.g.item(),
            l_p: parts.p.item(),
            l_l: parts.l.item(),
            l_total: total.item(),
            val_miou,
        });
    }
    Ok(DistillRun { student, heads, log, final_miou })
}

/// One configuration of the ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub flags: LossFlags,
    pub alpha: f64,
    pub beta: f64,
}

impl AblationCell {
    pub fn name(&self) -> String {
        format!("{} a/b={}/{}", self.flags.label(), self.alpha, self.beta)
    }
}

/// All 16 on/off combinations of the four terms (the decoupled loss
/// replaced by cross-entropy when off) at α/β = 1/1, followed by the α/β
/// sweep 3/1, 2/1, 1/1 with every term on.
pub fn full_ablation_grid() -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for bits in 0..16u8 {
        let flags = LossFlags { pdd: bits & 8 != 0, global: bits & 4 != 0, patch: bits & 2 != 0, linguistic: bits & 1 != 0 };
        cells.push(AblationCell { flags, alpha: 1.0, beta: 1.0 });
    }
    for (alpha, beta) in [(3.0, 1.0), (2.0, 1.0), (1.0, 1.0)] {
        cells.push(AblationCell { flags: LossFlags::ALL, alpha, beta });
    }
    cells
}

/// The five loss combinations that always include the decoupled loss:
/// alone, with each feature term, and with all of them.
pub fn core_ablation_cells() -> Vec<AblationCell> {
    let base = LossFlags::pdd_only();
    [
        base,
        LossFlags { global: true, ..base },
        LossFlags { patch: true, ..base },
        LossFlags { linguistic: true, ..base },
        LossFlags::ALL,
    ]
    .into_iter()
    .map(|flags| AblationCell { flags, alpha: 1.0, beta: 1.0 })
    .collect()
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub cell: AblationCell,
    pub seed: u64,
    pub miou: f64,
    pub all_finite: bool,
    pub final_l_total: f64,
}

pub fn run_ablation(
    base: &DistillConfig,
    cells: &[AblationCell],
    seeds: &[u64],
    teacher: &TeacherNet,
    train: &[SynthSample],
    val: &[SynthSample],
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::new();
    for cell in cells {
        for &seed in seeds {
            let cfg = DistillConfig { flags: cell.flags, alpha: cell.alpha, beta: cell.beta, seed, eval_every: 0, ..base.clone() };
            let run = distill(&cfg, teacher, train, val)?;
            let all_finite = run.log.iter().all(|r| [r.l_d, r.l_g, r.l_p, r.l_l, r.l_total].iter().all(|v| v.is_finite()));
            out.push(AblationResult {
                cell: cell.clone(),
                seed,
                miou: run.final_miou.unwrap_or(f64::NAN),
                all_finite,
                final_l_total: run.log.last().map_or(f64::NAN, |r| r.l_total),
            });
        }
    }
    Ok(out)
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = String::from("cell,L_d,L_g,L_p,L_l,alpha,beta,seed,val_miou,all_finite,final_L_total\n");
    for r in results {
        let f = r.cell.flags;
        let b = |on: bool| u8::from(on);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.flags.label(),
            b(f.pdd),
            b(f.global),
            b(f.patch),
            b(f.linguistic),
            r.cell.alpha,
            r.cell.beta,
            r.seed,
            r.miou,
            r.all_finite,
            r.final_l_total
        )
        .unwrap();
    }
    out
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trailing moving average over `window` values (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0, 100, 6e-5, 1.0), 0.00006);
        assert_eq!(poly_lr(100, 100, 6e-5, 1.0), 0.0);
        assert_eq!(poly_lr(50, 100, 6e-5, 1.0), 3e-5);
        assert!((poly_lr(50, 100, 1.0, 2.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn total_loss_sums_enabled_terms() {
        let parts = LossParts { d: Tensor::scalar(1.0), g: Tensor::scalar(2.0), p: Tensor::scalar(3.0), l: Tensor::scalar(4.0) };
        let cfg = DistillConfig::default();
        assert_eq!(total_loss(&parts, &cfg, 0).unwrap().item(), 10.0);
        let zero = DistillConfig { lambda_g: 0.0, lambda_p: 0.0, lambda_l: 0.0, ..cfg.clone() };
        assert_eq!(total_loss(&parts, &zero, 0).unwrap().item(), 1.0);
        let off = DistillConfig { flags: LossFlags { patch: false, ..LossFlags::ALL }, ..cfg.clone() };
        assert_eq!(total_loss(&parts, &off, 0).unwrap().item(), 7.0);
        let bad = LossParts { p: Tensor::scalar(f64::NAN), ..parts };
        assert!(matches!(total_loss(&bad, &cfg, 7), Err(Error::Divergence { term: "L_p", iter: 7 })));
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        // with bias correction the first Adam step is lr · sign(g)
        let mut lin = crate::nn::Linear::zeros(2, 1);
        lin.weight = Tensor::param(vec![1.0, -1.0], &[2, 1]).unwrap();
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        lin.forward(&x).unwrap().sum().backward().unwrap();
        let mut opt = OptimizerState::new(&[&lin], 0.0);
        opt.update(&mut [&mut lin], 0.1, 0.0);
        let w = lin.weight.data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.1).abs() < 1e-6);
        assert!((lin.bias.data()[0] + 0.1).abs() < 1e-6);
        assert_eq!(opt.m.len(), 2);
        assert_eq!(opt.m[0].len(), 2);
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let mut lin = crate::nn::Linear::zeros(1, 1);
        let x = Tensor::new(vec![1000.0], &[1, 1]).unwrap();
        lin.forward(&x).unwrap().sum().backward().unwrap();
        let mut opt = OptimizerState::new(&[&lin], 0.0);
        let norm = opt.update(&mut [&mut lin], 1.0, 5.0);
        assert!((norm - (1000f64.powi(2) + 1.0).sqrt()).abs() < 1e-9);
        assert!((opt.m[0][0] - 0.1 * 5.0 * 1000.0 / norm).abs() < 1e-12);
    }

    #[test]
    fn ablation_grid_shape() {
        let grid = full_ablation_grid();
        assert_eq!(grid.len(), 19);
        let unique: std::collections::HashSet<String> = grid[..16].iter().map(|c| c.flags.label()).collect();
        assert_eq!(unique.len(), 16);
        assert_eq!(core_ablation_cells().len(), 5);
        assert_eq!(LossFlags::ALL.label(), "Ld+Lg+Lp+Ll");
        assert_eq!(LossFlags::CE_ONLY.label(), "CE");
    }

    #[test]
    fn smoothing_and_median() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn incompatible_grids_fail_at_startup() {
        let t = TeacherConfig::default();
        assert!(check_compatible(&t, &StudentConfig::default()).is_ok());
        let s = StudentConfig { patch_size: 8, ..StudentConfig::default() };
        assert!(check_compatible(&t, &s).is_ok());
        let s = StudentConfig { patch_size: 2, ..StudentConfig::default() };
        assert!(matches!(check_compatible(&t, &s), Err(Error::Config(_))));
        let s = StudentConfig { classes: 5, ..StudentConfig::default() };
        assert!(check_compatible(&t, &s).is_err());
    }

    #[test]
    fn tiny_runs_log_every_column() {
        let data = generate_dataset(0, 6, 16, 16, 3).unwrap();
        let tcfg = TeacherTrainConfig {
            max_iters: 3,
            batch_size: 2,
            teacher: TeacherConfig { classes: 3, widths: [4, 4, 8, 8], convs_per_stage: 1, ..TeacherConfig::default() },
            ..TeacherTrainConfig::default()
        };
        let teacher = train_teacher(&tcfg, &data, &data[..2], None).unwrap();
        assert_eq!(teacher.log.len(), 3);
        let again = train_teacher(&tcfg, &data, &data, Some((teacher.net.clone(), 3))).unwrap();
        assert!(again.log.is_empty());
        for (a, b) in again.net.named_params().iter().zip(teacher.net.named_params()) {
            assert_eq!(a.1.data(), b.1.data());
        }

        let student = StudentConfig { classes: 3, image_h: 16, image_w: 16, depth: 1, dim: 8, heads: 2, mlp_hidden: 8, ..StudentConfig::default() };
        for flags in [LossFlags::pdd_only(), LossFlags::ALL, LossFlags::CE_ONLY] {
            let cfg = DistillConfig { max_iters: 2, batch_size: 2, align_dim: 8, pool_heads: 2, student: student.clone(), flags, ..DistillConfig::default() };
            let run = distill(&cfg, &teacher.net, &data, &data[..2]).unwrap();
            assert_eq!(run.log.len(), 2);
            let last = run.log.last().unwrap();
            assert!(last.val_miou.is_some());
            assert_eq!(last.l_g == 0.0, !flags.global);
            assert_eq!(last.l_l == 0.0, !flags.linguistic);
            assert!(metrics_csv(&run.log).starts_with(METRICS_HEADER));
        }
    }
}
