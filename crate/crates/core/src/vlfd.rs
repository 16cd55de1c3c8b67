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

//! Feature-space distillation: the linguistic, global and patch-affinity
//! losses between student tokens and teacher feature maps.
//!
//! Every function here treats its teacher argument as a constant; the
//! teacher side is detached before use so no gradient can reach it.

use crate::error::{Error, Result};
use crate::nn::patch_partition;
use crate::tensor::Tensor;

/// Softmax-normalizes both global descriptors over the feature axis and
/// returns `(1/D)·KL(p_student ‖ p_teacher)`, averaged over the batch.
pub fn linguistic_loss(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    if student.shape() != teacher.shape() || student.rank() != 2 {
        return Err(Error::shape("linguistic_loss", student.shape(), teacher.shape()));
    }
    let d = student.shape()[1] as f64;
    let p_student = student.softmax(1)?;
    let p_teacher = teacher.detach().softmax(1)?;
    Ok(p_student.kl_div(&p_teacher)?.scale(1.0 / d))
}

/// Rebuilds `[B, hp·wp, D]` tokens into a `[B, D, hp, wp]` map; token `t`
/// lands at row `t / wp`, column `t % wp`.
pub fn reverse_map(tokens: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 || s[1] != hp * wp {
        return Err(Error::shape("reverse_map", s, &[hp * wp]));
    }
    tokens.reshape(&[s[0], hp, wp, s[2]])?.permute(&[0, 3, 1, 2])
}

/// Brings a `[B,1,h,w]` map onto `(th, tw)`: identity, integer average
/// pooling when the ratio allows it, bilinear otherwise.
fn to_grid(map: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (h, w) = (map.shape()[2], map.shape()[3]);
    if (h, w) == (th, tw) {
        return Ok(map.clone());
    }
    if h % th == 0 && w % tw == 0 && h / th == w / tw {
        return map.avg_pool2d(h / th);
    }
    map.resize_bilinear(th, tw)
}

/// Spatial KL between the channel-mean maps of the rebuilt student tokens
/// and the teacher features, each softmax-normalized over positions on the
/// coarser of the two grids.
pub fn global_loss(student_tokens: &Tensor, grid: (usize, usize), teacher_features: &Tensor) -> Result<Tensor> {
    let ts = teacher_features.shape();
    if ts.len() != 4 || student_tokens.rank() != 3 || ts[0] != student_tokens.shape()[0] {
        return Err(Error::shape("global_loss", student_tokens.shape(), ts));
    }
    let (hp, wp) = grid;
    let b = ts[0];
    if hp * wp == 0 || ts[2] * ts[3] == 0 {
        return Err(Error::invalid("global_loss", "zero-sized feature map"));
    }
    let student_map = reverse_map(student_tokens, hp, wp)?.mean_axis(1)?.reshape(&[b, 1, hp, wp])?;
    let teacher_map = teacher_features.detach().mean_axis(1)?.reshape(&[b, 1, ts[2], ts[3]])?;
    let (th, tw) = (hp.min(ts[2]), wp.min(ts[3]));
    let sm = to_grid(&student_map, th, tw)?.reshape(&[b, th * tw])?.softmax(1)?;
    let tm = to_grid(&teacher_map, th, tw)?.reshape(&[b, th * tw])?.softmax(1)?;
    sm.kl_div(&tm)
}

/// Pairwise cosine similarities between the tokens of one sample.
#[derive(Debug, Clone)]
pub struct AffinityMatrix(pub Tensor);

impl AffinityMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn tokens(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let (b, t) = (self.0.shape()[0], self.tokens());
        let m = self.0.data();
        let mut worst = 0.0f64;
        for s in 0..b {
            for i in 0..t {
                for j in 0..i {
                    worst = worst.max((m[(s * t + i) * t + j] - m[(s * t + j) * t + i]).abs());
                }
            }
        }
        worst
    }
}

/// `M = N·Nᵀ` over L2-normalized token rows of `[B,T,Z]`.
pub fn patch_affinity(tokens: &Tensor) -> Result<AffinityMatrix> {
    if tokens.rank() != 3 {
        return Err(Error::invalid("patch_affinity", format!("expected [B,T,Z], got {:?}", tokens.shape())));
    }
    let n = tokens.normalize_rows();
    Ok(AffinityMatrix(n.bmm(&n, true)?))
}

/// Splits the teacher feature map with the same raster partition as the
/// student input so both sides have `hp·wp` tokens.
pub fn teacher_patch_tokens(features: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
    let s = features.shape();
    let (hp, wp) = grid;
    if s.len() != 4 || hp == 0 || wp == 0 || !s[2].is_multiple_of(hp) || !s[3].is_multiple_of(wp) || s[2] / hp != s[3] / wp {
        return Err(Error::invalid(
            "teacher_patch_tokens",
            format!("teacher map {s:?} cannot be split into a {hp}x{wp} grid"),
        ));
    }
    patch_partition(&features.detach(), s[2] / hp)
}

/// Mean squared difference over every entry of the two affinity matrices.
pub fn patch_loss(teacher: &AffinityMatrix, student: &AffinityMatrix) -> Result<Tensor> {
    if teacher.0.shape() != student.0.shape() {
        return Err(Error::shape("patch_loss", teacher.0.shape(), student.0.shape()));
    }
    Ok(student.0.sub(&teacher.0.detach())?.square().mean())
}
