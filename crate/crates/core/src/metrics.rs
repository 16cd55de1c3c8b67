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

//! Confusion matrix and IoU scores.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pdd::LabelMap;
use crate::tensor::{Tensor, IGNORE_INDEX};

/// `counts[gt * K + pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per labelled pixel. Ignored pixels are skipped.
    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("accumulate", &[pred.len()], &[gt.len()]));
        }
        let k = self.classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE_INDEX {
                continue;
            }
            if g >= k || p >= k {
                return Err(Error::Label { value: g.max(p), classes: k });
            }
            self.counts[g * k + p] += 1;
        }
        Ok(())
    }

    /// Accumulates `argmax` over the class axis of `[B,K,H,W]` logits.
    pub fn accumulate_logits(&mut self, logits: &Tensor, labels: &LabelMap) -> Result<()> {
        let pred = argmax_classes(logits)?;
        self.accumulate(&pred, labels.values())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU (`None` when the class is absent from both ground
    /// truth and prediction) and the mean over the present classes.
    pub fn miou(&self) -> (Vec<Option<f64>>, f64) {
        let k = self.classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
                let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        (per_class, mean)
    }

    /// `class_id,iou` rows (absent classes left blank) and a `miou,<v>` line.
    pub fn report_csv(&self) -> String {
        let (per_class, mean) = self.miou();
        let mut out = String::from("class_id,iou\n");
        for (c, iou) in per_class.iter().enumerate() {
            match iou {
                Some(v) => writeln!(out, "{c},{v}").unwrap(),
                None => writeln!(out, "{c},").unwrap(),
            }
        }
        writeln!(out, "miou,{mean}").unwrap();
        out
    }
}

/// Index of the largest logit per pixel; ties go to the lower class.
pub fn argmax_classes(logits: &Tensor) -> Result<Vec<usize>> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::invalid("argmax_classes", format!("expected [B,K,H,W], got {s:?}")));
    }
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    let x = logits.data();
    Ok((0..b * hw)
        .map(|p| {
            let (n, i) = (p / hw, p % hw);
            let mut best = 0;
            for c in 1..k {
                if x[(n * k + c) * hw + i] > x[(n * k + best) * hw + i] {
                    best = c;
                }
            }
            best
        })
        .collect())
}
