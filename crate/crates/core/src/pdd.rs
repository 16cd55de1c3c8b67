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

//! Prediction-space distillation: per-pixel target/non-target decoupling and
//! the label-mixed binary KL, plus the plain cross-entropy baseline.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, IGNORE_INDEX};

/// Integer class map `[B, H, W]`; `IGNORE_INDEX` marks unlabelled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    values: Vec<usize>,
}

impl LabelMap {
    pub fn new(values: Vec<usize>, shape: [usize; 3]) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("LabelMap", &[values.len()], &shape));
        }
        Ok(Self { shape, values })
    }

    /// Checks every non-ignore value against the class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.values.iter().find(|&&v| v != IGNORE_INDEX && v >= classes) {
            Some(&value) => Err(Error::Label { value, classes }),
            None => Ok(()),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn valid_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v != IGNORE_INDEX).count()
    }

    /// 1 at labelled pixels, 0 at ignored ones.
    pub fn mask(&self) -> Tensor {
        let m = self.values.iter().map(|&v| if v == IGNORE_INDEX { 0.0 } else { 1.0 }).collect();
        Tensor::new(m, &self.shape).expect("shape checked at construction")
    }

    fn check_against(&self, logits: &Tensor, op: &'static str) -> Result<()> {
        let s = logits.shape();
        if s.len() != 4 || [s[0], s[2], s[3]] != self.shape {
            return Err(Error::shape(op, s, &self.shape));
        }
        self.validate(s[1])
    }
}

/// Per-pixel target probability and the remaining non-target mass.
#[derive(Debug, Clone)]
pub struct DecoupledMaps {
    pub s_t: Tensor,
    pub s_nt: Tensor,
}

/// Softmax over classes, then splits each pixel into `(p[y], Σ_{k≠y} p[k])`.
pub fn decouple(logits: &Tensor, labels: &LabelMap) -> Result<DecoupledMaps> {
    labels.check_against(logits, "decouple")?;
    let probs = logits.softmax(1)?;
    Ok(DecoupledMaps {
        s_t: probs.gather_class(labels.values())?,
        s_nt: probs.nontarget_sum(labels.values())?,
    })
}

/// `(1/|P|) Σ [α·KL_t + β·KL_nt]` between the student pair and the teacher
/// pair averaged with the one-hot label pair `(1, 0)`.
pub fn pdd_loss(student: &Tensor, teacher: &Tensor, labels: &LabelMap, alpha: f64, beta: f64) -> Result<Tensor> {
    if student.shape() != teacher.shape() {
        return Err(Error::shape("pdd_loss", student.shape(), teacher.shape()));
    }
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid("pdd_loss", format!("alpha={alpha}, beta={beta} must be >= 0")));
    }
    let valid = labels.valid_pixels();
    labels.check_against(student, "pdd_loss")?;
    if valid == 0 {
        log::warn!("pdd_loss: every pixel is ignored, returning 0");
        return Ok(Tensor::scalar(0.0));
    }
    let sv = decouple(student, labels)?;
    let sc = decouple(&teacher.detach(), labels)?;
    let q_t = sc.s_t.add_scalar(1.0).scale(0.5);
    let q_nt = sc.s_nt.scale(0.5);
    let mask = labels.mask();
    let kl_t = sv.s_t.kl_terms(&q_t)?.mul(&mask)?.sum();
    let kl_nt = sv.s_nt.kl_terms(&q_nt)?.mul(&mask)?.sum();
    Ok(kl_t.scale(alpha).add(&kl_nt.scale(beta))?.scale(1.0 / valid as f64))
}

/// Mean of `-log softmax(S)[y]` over labelled pixels.
pub fn ce_loss(logits: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    labels.check_against(logits, "ce_loss")?;
    let valid = labels.valid_pixels();
    if valid == 0 {
        log::warn!("ce_loss: every pixel is ignored, returning 0");
        return Ok(Tensor::scalar(0.0));
    }
    Ok(logits.log_softmax(1)?.gather_class(labels.values())?.sum().scale(-1.0 / valid as f64))
}
