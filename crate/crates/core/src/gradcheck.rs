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

//! Finite-difference check of every training loss against the analytic
//! gradient with respect to the student's parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{StudentConfig, StudentNet, TeacherConfig, TeacherNet};
use crate::nn::Module;
use crate::pdd::LabelMap;
use crate::tensor::{relative_error, Tensor, IGNORE_INDEX};
use crate::trainer::{distill_losses, new_heads, total_loss, DistillConfig, DistillHeads, LossFlags, LossParts};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Linguistic,
    Global,
    Patch,
    Decoupled,
    CrossEntropy,
    Total,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 6] = [
        CheckedLoss::Linguistic,
        CheckedLoss::Global,
        CheckedLoss::Patch,
        CheckedLoss::Decoupled,
        CheckedLoss::CrossEntropy,
        CheckedLoss::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Linguistic => "L_l",
            CheckedLoss::Global => "L_g",
            CheckedLoss::Patch => "L_p",
            CheckedLoss::Decoupled => "L_d",
            CheckedLoss::CrossEntropy => "CE",
            CheckedLoss::Total => "L_all",
        }
    }

    fn flags(self) -> LossFlags {
        let none = LossFlags { pdd: true, global: false, patch: false, linguistic: false };
        match self {
            CheckedLoss::Linguistic => LossFlags { linguistic: true, ..none },
            CheckedLoss::Global => LossFlags { global: true, ..none },
            CheckedLoss::Patch => LossFlags { patch: true, ..none },
            CheckedLoss::Decoupled => none,
            CheckedLoss::CrossEntropy => LossFlags::CE_ONLY,
            CheckedLoss::Total => LossFlags::ALL,
        }
    }

    fn pick(self, parts: &LossParts, cfg: &DistillConfig) -> Result<Tensor> {
        Ok(match self {
            CheckedLoss::Linguistic => parts.l.clone(),
            CheckedLoss::Global => parts.g.clone(),
            CheckedLoss::Patch => parts.p.clone(),
            CheckedLoss::Decoupled | CheckedLoss::CrossEntropy => parts.d.clone(),
            CheckedLoss::Total => total_loss(parts, cfg, 0)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub loss: CheckedLoss,
    pub rel_err: f64,
    pub coords: usize,
}

/// A tiny random problem: teacher, student, heads, one batch.
struct Problem {
    cfg: DistillConfig,
    teacher: TeacherNet,
    student: StudentNet,
    heads: DistillHeads,
    x: Tensor,
    y: LabelMap,
}

fn problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let tcfg = TeacherConfig { in_channels: 3, classes, widths: [4, 4, 6, 6], convs_per_stage: 1 };
    let scfg = StudentConfig { in_channels: 3, classes, image_h: 8, image_w: 8, patch_size: 4, depth: 1, dim: 8, heads: 2, mlp_hidden: 8 };
    let mut teacher = TeacherNet::new(&mut rng, tcfg.clone())?;
    teacher.freeze();
    let cfg = DistillConfig {
        seed,
        student: scfg.clone(),
        align_dim: 8,
        pool_heads: 2,
        alpha: 1.5,
        beta: 0.75,
        lambda_g: 0.7,
        lambda_p: 1.3,
        lambda_l: 2.0,
        ..DistillConfig::default()
    };
    let mut student = StudentNet::new(&mut rng, scfg)?;
    // move the zero-initialized positional embedding off its special point
    let pos: Vec<f64> = (0..student.pos.numel()).map(|_| rng.random_range(-0.1..0.1)).collect();
    student.pos = Tensor::param(pos, student.pos.shape())?;
    let heads = new_heads(&cfg, &tcfg)?;
    let x = Tensor::new((0..2 * 3 * 64).map(|_| rng.random_range(0.0..1.0)).collect(), &[2, 3, 8, 8])?;
    let mut labels: Vec<usize> = (0..128).map(|_| rng.random_range(0..classes)).collect();
    labels[5] = IGNORE_INDEX;
    let y = LabelMap::new(labels, [2, 8, 8])?;
    Ok(Problem { cfg, teacher, student, heads, x, y })
}

impl Problem {
    fn loss(&self, which: CheckedLoss, student: &StudentNet, heads: &DistillHeads) -> Result<Tensor> {
        let cfg = DistillConfig { flags: which.flags(), ..self.cfg.clone() };
        let parts = distill_losses(&cfg, &self.teacher, student, heads, &self.x, &self.y)?;
        which.pick(&parts, &cfg)
    }

    /// Copy of the trainable set with coordinate `coord` of tensor `index`
    /// shifted by `delta`.
    fn shifted(&self, index: usize, coord: usize, delta: f64) -> (StudentNet, DistillHeads) {
        let (mut s, mut h) = (self.student.clone(), self.heads.clone());
        let mut i = 0;
        let mut edit = |_: String, t: &mut Tensor| {
            if i == index {
                let mut d = t.to_vec();
                d[coord] += delta;
                *t = Tensor::new(d, t.shape()).expect("same shape");
            }
            i += 1;
        };
        s.visit_mut("", &mut edit);
        h.align.visit_mut("", &mut edit);
        (s, h)
    }
}

/// Checks each loss on one seeded problem, sampling up to
/// `coords_per_tensor` coordinates of every student (and align-head)
/// parameter tensor.
pub fn gradcheck_suite(seed: u64, coords_per_tensor: usize) -> Result<Vec<GradCheck>> {
    let p = problem(seed)?;
    let mut params: Vec<Tensor> = Vec::new();
    p.student.visit("", &mut |_, t| params.push(t.clone()));
    p.heads.align.visit("", &mut |_, t| params.push(t.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let picks: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let n = t.numel();
            let k = coords_per_tensor.min(n);
            rand::seq::index::sample(&mut rng, n, k).into_iter().map(move |c| (i, c)).collect::<Vec<_>>()
        })
        .collect();

    let mut out = Vec::new();
    for which in CheckedLoss::ALL {
        for t in &params {
            t.zero_grad();
        }
        p.loss(which, &p.student, &p.heads)?.backward()?;
        let grads: Vec<Vec<f64>> = params.iter().map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();
        let mut analytic = Vec::with_capacity(picks.len());
        let mut numeric = Vec::with_capacity(picks.len());
        for &(i, c) in &picks {
            let (sp, hp) = p.shifted(i, c, FD_STEP);
            let (sm, hm) = p.shifted(i, c, -FD_STEP);
            let up = p.loss(which, &sp, &hp)?.item();
            let down = p.loss(which, &sm, &hm)?.item();
            analytic.push(grads[i][c]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        out.push(GradCheck { loss: which, rel_err: relative_error(&analytic, &numeric), coords: picks.len() });
    }
    Ok(out)
}
