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

use std::fs;
use std::path::{Path, PathBuf};

use c2vkd::checkpoint::{load_student, load_teacher, save_student, save_teacher};
use c2vkd::data::{generate_splits, load_split, save_split, SynthSample, TRAIN_FILE, VAL_FILE};
use c2vkd::gradcheck::{gradcheck_suite, TOLERANCE};
use c2vkd::nn::Module;
use c2vkd::trainer::{
    ablation_csv, check_compatible, core_ablation_cells, distill, evaluate_student, evaluate_teacher, full_ablation_grid,
    median, metrics_csv, run_ablation, train_teacher,
};
use c2vkd::{par, ContainerError, Error, Result};

use crate::settings::Settings;
use crate::{Cli, Command, Options};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 2,
        _ => 1,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| ContainerError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| ContainerError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("C2V_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("C2V_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("C2V_THREADS must be at least 1".into()));
        }
        if !par::init_threads(n) {
            log::warn!("worker pool already initialized; C2V_THREADS={n} ignored");
        }
    }
    Ok(())
}

/// Defaults, then the config file, then command-line overrides.
pub fn build_settings(command: Command, o: &Options) -> Result<Settings> {
    let mut s = match &o.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(n) = o.iters {
        match command {
            Command::TrainTeacher => s.teacher.max_iters = n,
            _ => s.distill.max_iters = n,
        }
    }
    let d = &mut s.distill;
    for (flag, slot) in [(o.lambda_g, &mut d.lambda_g), (o.lambda_p, &mut d.lambda_p), (o.lambda_l, &mut d.lambda_l), (o.alpha, &mut d.alpha), (o.beta, &mut d.beta)] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if o.no_lg {
        d.flags.global = false;
    }
    if o.no_lp {
        d.flags.patch = false;
    }
    if o.no_ll {
        d.flags.linguistic = false;
    }
    if o.no_ld {
        d.flags.pdd = false;
    }
    s.resolve();
    s.distill.validate()?;
    if s.data.classes < 2 || s.data.height % 4 != 0 || s.data.width % 4 != 0 || s.data.height == 0 || s.data.width == 0 {
        return Err(Error::Config(format!("data shape {}x{} with {} classes is not usable", s.data.height, s.data.width, s.data.classes)));
    }
    Ok(s)
}

struct Paths {
    out: PathBuf,
    data: PathBuf,
    teacher: PathBuf,
    student: PathBuf,
}

impl Paths {
    fn new(o: &Options) -> Self {
        Paths {
            out: o.out.clone(),
            data: o.data.clone().unwrap_or_else(|| o.out.clone()),
            teacher: o.teacher.clone().unwrap_or_else(|| o.out.join("teacher.c2vt")),
            student: o.student.clone().unwrap_or_else(|| o.out.join("student.c2vt")),
        }
    }

    fn splits(&self) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
        Ok((load_split(self.data.join(TRAIN_FILE))?, load_split(self.data.join(VAL_FILE))?))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    let s = build_settings(cli.command, &cli.opts)?;
    eprintln!("settings:");
    for line in s.echo() {
        eprintln!("  {line}");
    }
    let paths = Paths::new(&cli.opts);
    match cli.command {
        Command::GenData => gen_data(&s, &paths),
        Command::TrainTeacher => teacher(&s, &paths, cli.opts.teacher.is_some()),
        Command::Distill => run_distill(&s, &paths),
        Command::Evaluate => run_evaluate(&paths, cli.opts.eval_teacher),
        Command::Ablate => ablate(&s, &paths),
        Command::Gradcheck => gradcheck(&s),
    }
}

fn gen_data(s: &Settings, p: &Paths) -> Result<()> {
    let d = &s.data;
    let (train, val) = generate_splits(s.seed, d.train_size, d.val_size, d.height, d.width, d.classes)?;
    create_dir(&p.out)?;
    save_split(p.out.join(TRAIN_FILE), &train)?;
    save_split(p.out.join(VAL_FILE), &val)?;
    println!("wrote {} train / {} val samples to {}", train.len(), val.len(), p.out.display());
    Ok(())
}

fn teacher(s: &Settings, p: &Paths, resume: bool) -> Result<()> {
    let (train, val) = p.splits()?;
    let start = if resume { Some(load_teacher(&p.teacher)?) } else { None };
    let run = train_teacher(&s.teacher, &train, &val, start)?;
    println!("teacher parameters: {}", run.net.param_count());
    create_dir(&p.out)?;
    save_teacher(p.out.join("teacher.c2vt"), &run.net, run.step)?;
    write_file(&p.out.join("teacher_metrics.csv"), &metrics_csv(&run.log))?;
    match run.final_miou {
        Some(m) => println!("teacher val mIoU: {m:.4}"),
        None => println!("no iterations left; checkpoint unchanged"),
    }
    Ok(())
}

fn run_distill(s: &Settings, p: &Paths) -> Result<()> {
    let (train, val) = p.splits()?;
    let (teacher, _) = load_teacher(&p.teacher)?;
    check_compatible(&teacher.config, &s.distill.student)?;
    let run = distill(&s.distill, &teacher, &train, &val)?;
    println!("teacher parameters: {}", teacher.param_count());
    println!("student parameters: {}", run.student.param_count());
    create_dir(&p.out)?;
    save_student(p.out.join("student.c2vt"), &run.student, s.distill.max_iters)?;
    write_file(&p.out.join("metrics.csv"), &metrics_csv(&run.log))?;
    if let Some(m) = run.final_miou {
        println!("student [{}] val mIoU: {m:.4}", s.distill.flags.label());
    }
    Ok(())
}

fn run_evaluate(p: &Paths, eval_teacher: bool) -> Result<()> {
    let val = load_split(p.data.join(VAL_FILE))?;
    let cm = if eval_teacher {
        evaluate_teacher(&load_teacher(&p.teacher)?.0, &val, 50)?
    } else {
        evaluate_student(&load_student(&p.student)?.0, &val, 50)?
    };
    let (per_class, mean) = cm.miou();
    println!("{:>8}  {:>8}", "class", "IoU");
    for (c, iou) in per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("{c:>8}  {v:>8.4}"),
            None => println!("{c:>8}  {:>8}", "absent"),
        }
    }
    println!("{:>8}  {mean:>8.4}", "mIoU");
    create_dir(&p.out)?;
    write_file(&p.out.join("evaluation.csv"), &cm.report_csv())
}

fn ablate(s: &Settings, p: &Paths) -> Result<()> {
    let (train, val) = p.splits()?;
    let (teacher, _) = load_teacher(&p.teacher)?;
    check_compatible(&teacher.config, &s.distill.student)?;
    let cells = if s.ablate_cells == "core" { core_ablation_cells() } else { full_ablation_grid() };
    let results = run_ablation(&s.distill, &cells, &s.ablate_seeds, &teacher, &train, &val)?;
    create_dir(&p.out)?;
    write_file(&p.out.join("ablation.csv"), &ablation_csv(&results))?;
    println!("{:<28} {:>12}", "cell", "median mIoU");
    for cell in &cells {
        let m: Vec<f64> = results.iter().filter(|r| &r.cell == cell).map(|r| r.miou).collect();
        println!("{:<28} {:>12.4}", cell.name(), median(&m));
    }
    Ok(())
}

fn gradcheck(s: &Settings) -> Result<()> {
    let results = gradcheck_suite(s.seed, 6)?;
    println!("{:<6} {:>14} {:>7}", "loss", "max rel. err", "coords");
    let mut worst: f64 = 0.0;
    for r in &results {
        println!("{:<6} {:>14.3e} {:>7}", r.loss.name(), r.rel_err, r.coords);
        worst = worst.max(r.rel_err);
    }
    if worst.is_nan() || worst >= TOLERANCE {
        return Err(Error::Invalid { op: "gradcheck", msg: format!("worst relative error {worst:.3e} >= {TOLERANCE:e}") });
    }
    println!("all losses within {TOLERANCE:e}");
    Ok(())
}
