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

//! Run settings: defaults, the flat `key = value` config file, and the
//! echo printed at startup.

use std::fmt::Display;
use std::path::Path;

use c2vkd::models::{StudentConfig, TeacherConfig};
use c2vkd::trainer::{DistillConfig, TeacherTrainConfig};
use c2vkd::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub train_size: usize,
    pub val_size: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings { train_size: 1000, val_size: 200, height: 32, width: 32, classes: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub data: DataSettings,
    pub teacher: TeacherTrainConfig,
    pub distill: DistillConfig,
    pub ablate_seeds: Vec<u64>,
    /// `full` (all 19 cells) or `core` (the five cells that keep L_d).
    pub ablate_cells: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            data: DataSettings::default(),
            teacher: TeacherTrainConfig::default(),
            distill: DistillConfig::default(),
            ablate_seeds: vec![0],
            ablate_cells: "full".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let mut s = Settings::default();
        s.apply_text(&text)?;
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.distill;
        let t = &mut self.teacher;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "train_size" => self.data.train_size = parse(key, v)?,
            "val_size" => self.data.val_size = parse(key, v)?,
            "height" => self.data.height = parse(key, v)?,
            "width" => self.data.width = parse(key, v)?,
            "classes" => self.data.classes = parse(key, v)?,

            "teacher_lr" => t.base_lr = parse(key, v)?,
            "teacher_iters" => t.max_iters = parse(key, v)?,
            "teacher_batch_size" => t.batch_size = parse(key, v)?,
            "teacher_eval_every" => t.eval_every = parse(key, v)?,
            "teacher_augment" => t.augment = parse_bool(key, v)?,
            "teacher_widths" => {
                let w: Vec<usize> = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?;
                t.teacher.widths = w.try_into().map_err(|_| Error::Config("teacher_widths needs 4 values".into()))?;
            }
            "teacher_convs_per_stage" => t.teacher.convs_per_stage = parse(key, v)?,

            "lambda_g" => d.lambda_g = parse(key, v)?,
            "lambda_p" => d.lambda_p = parse(key, v)?,
            "lambda_l" => d.lambda_l = parse(key, v)?,
            "alpha" => d.alpha = parse(key, v)?,
            "beta" => d.beta = parse(key, v)?,
            "base_lr" => d.base_lr = parse(key, v)?,
            "power" => {
                d.power = parse(key, v)?;
                t.power = d.power;
            }
            "warmup_iters" => d.warmup_iters = parse(key, v)?,
            "max_iters" => d.max_iters = parse(key, v)?,
            "batch_size" => d.batch_size = parse(key, v)?,
            "weight_decay" => {
                d.weight_decay = parse(key, v)?;
                t.weight_decay = d.weight_decay;
            }
            "grad_clip" => {
                d.grad_clip = parse(key, v)?;
                t.grad_clip = d.grad_clip;
            }
            "eval_every" => d.eval_every = parse(key, v)?,
            "augment" => d.augment = parse_bool(key, v)?,
            "align_dim" => d.align_dim = parse(key, v)?,
            "pool_heads" => d.pool_heads = parse(key, v)?,
            "use_ld" => d.flags.pdd = parse_bool(key, v)?,
            "use_lg" => d.flags.global = parse_bool(key, v)?,
            "use_lp" => d.flags.patch = parse_bool(key, v)?,
            "use_ll" => d.flags.linguistic = parse_bool(key, v)?,

            "patch_size" => d.student.patch_size = parse(key, v)?,
            "depth" => d.student.depth = parse(key, v)?,
            "dim" => d.student.dim = parse(key, v)?,
            "heads" => d.student.heads = parse(key, v)?,
            "mlp_hidden" => d.student.mlp_hidden = parse(key, v)?,

            "ablate_seeds" => self.ablate_seeds = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?,
            "ablate_cells" => match v {
                "full" | "core" => self.ablate_cells = v.to_string(),
                _ => return Err(Error::Config(format!("ablate_cells: expected full or core, got {v:?}"))),
            },
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Copies the data shape and seed into the model and training configs.
    pub fn resolve(&mut self) {
        let data = &self.data;
        self.teacher.seed = self.seed;
        self.distill.seed = self.seed;
        self.teacher.teacher = TeacherConfig { classes: data.classes, ..self.teacher.teacher.clone() };
        self.distill.student =
            StudentConfig { classes: data.classes, image_h: data.height, image_w: data.width, ..self.distill.student.clone() };
    }

    /// Every effective setting as `key = value`, in a fixed order.
    pub fn echo(&self) -> Vec<String> {
        let d = &self.distill;
        let t = &self.teacher;
        let s = &d.student;
        let kv = |k: &str, v: &dyn Display| format!("{k} = {v}");
        let widths = t.teacher.widths.map(|w| w.to_string()).join(",");
        let seeds: Vec<String> = self.ablate_seeds.iter().map(|s| s.to_string()).collect();
        vec![
            kv("seed", &self.seed),
            kv("train_size", &self.data.train_size),
            kv("val_size", &self.data.val_size),
            kv("height", &self.data.height),
            kv("width", &self.data.width),
            kv("classes", &self.data.classes),
            kv("teacher_lr", &t.base_lr),
            kv("teacher_iters", &t.max_iters),
            kv("teacher_batch_size", &t.batch_size),
            kv("teacher_eval_every", &t.eval_every),
            kv("teacher_augment", &t.augment),
            kv("teacher_widths", &widths),
            kv("teacher_convs_per_stage", &t.teacher.convs_per_stage),
            kv("lambda_g", &d.lambda_g),
            kv("lambda_p", &d.lambda_p),
            kv("lambda_l", &d.lambda_l),
            kv("alpha", &d.alpha),
            kv("beta", &d.beta),
            kv("base_lr", &d.base_lr),
            kv("power", &d.power),
            kv("warmup_iters", &d.warmup_iters),
            kv("max_iters", &d.max_iters),
            kv("batch_size", &d.batch_size),
            kv("weight_decay", &d.weight_decay),
            kv("grad_clip", &d.grad_clip),
            kv("eval_every", &d.eval_every),
            kv("augment", &d.augment),
            kv("align_dim", &d.align_dim),
            kv("pool_heads", &d.pool_heads),
            kv("use_ld", &d.flags.pdd),
            kv("use_lg", &d.flags.global),
            kv("use_lp", &d.flags.patch),
            kv("use_ll", &d.flags.linguistic),
            kv("patch_size", &s.patch_size),
            kv("depth", &s.depth),
            kv("dim", &s.dim),
            kv("heads", &s.heads),
            kv("mlp_hidden", &s.mlp_hidden),
            kv("ablate_seeds", &seeds.join(",")),
            kv("ablate_cells", &self.ablate_cells),
        ]
    }
}
