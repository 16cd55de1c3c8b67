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

//! `c2vkd`: dataset generation, teacher training, distillation,
//! evaluation, ablation and gradient checks.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "c2vkd", version, about = "CNN-to-ViT distillation for semantic segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write train.c2vt and val.c2vt synthetic splits.
    GenData,
    /// Train the convolutional teacher with cross-entropy.
    TrainTeacher,
    /// Distill the teacher into a fresh student.
    Distill,
    /// Print per-class IoU and mIoU of a checkpoint on the validation split.
    Evaluate,
    /// Run the loss-term grid and the alpha/beta sweep.
    Ablate,
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Options {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Directory holding train.c2vt / val.c2vt [default: --out].
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Teacher checkpoint [default: <out>/teacher.c2vt].
    #[arg(long, global = true)]
    pub teacher: Option<PathBuf>,
    /// Student checkpoint [default: <out>/student.c2vt].
    #[arg(long, global = true)]
    pub student: Option<PathBuf>,
    /// Evaluate the teacher instead of the student.
    #[arg(long, global = true)]
    pub eval_teacher: bool,
    /// Iterations of the command's training run.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long = "lambda-g", global = true)]
    pub lambda_g: Option<f64>,
    #[arg(long = "lambda-p", global = true)]
    pub lambda_p: Option<f64>,
    #[arg(long = "lambda-l", global = true)]
    pub lambda_l: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Drop the global feature loss.
    #[arg(long = "no-lg", global = true)]
    pub no_lg: bool,
    /// Drop the patch affinity loss.
    #[arg(long = "no-lp", global = true)]
    pub no_lp: bool,
    /// Drop the linguistic loss.
    #[arg(long = "no-ll", global = true)]
    pub no_ll: bool,
    /// Replace the decoupled loss with plain cross-entropy.
    #[arg(long = "no-ld", global = true)]
    pub no_ld: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    // usage errors share exit code 1 with other validation failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
