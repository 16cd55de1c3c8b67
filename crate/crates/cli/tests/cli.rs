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
use std::path::Path;
use std::process::{Command, Output};

use c2vkd::checkpoint::save_student;
use c2vkd::data::{load_split, VAL_FILE};
use c2vkd::models::{StudentConfig, StudentNet};
use c2vkd::tensor::Tensor;
use rand::SeedableRng;

const TINY: &str = "\
# small enough for a test run
train_size = 8
val_size = 4
height = 16
width = 16
teacher_widths = 4,4,8,8
teacher_convs_per_stage = 1
teacher_iters = 3
teacher_batch_size = 2
max_iters = 3
batch_size = 2
dim = 8
heads = 2
depth = 1
mlp_hidden = 8
align_dim = 8
pool_heads = 2
eval_every = 2
ablate_cells = core
";

fn c2vkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2vkd")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_passes_on_a_fresh_seed() {
    let out = c2vkd(&["gradcheck", "--seed", "12"]);
    let text = ok(&out);
    for name in ["L_l", "L_g", "L_p", "L_d", "CE", "L_all"] {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing:\n{text}"));
        let err: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn missing_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = c2vkd(&["gen-data", "--config", "/nonexistent/c2vkd.cfg", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(c2vkd(&["distill", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(c2vkd(&["train-everything"]).status.code(), Some(1));
    assert_eq!(c2vkd(&["gradcheck", "--alpha", "-1"]).status.code(), Some(1));
    assert!(c2vkd(&["--help"]).status.success());
}

#[test]
fn bad_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lambda_q = 1\n").unwrap();
    let out = c2vkd(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_q"));
}

#[test]
fn settings_are_echoed() {
    let out = c2vkd(&["gradcheck", "--seed", "1", "--lambda-g", "0.25", "--no-lp"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lambda_g = 0.25"), "{err}");
    assert!(err.contains("use_lp = false"));
}

#[test]
fn gen_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&c2vkd(&["gen-data", "--config", &cfg, "--seed", "4", "--out", a.to_str().unwrap()]));
    ok(&c2vkd(&["gen-data", "--config", &cfg, "--seed", "4", "--out", b.to_str().unwrap()]));
    for f in ["train.c2vt", "val.c2vt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn evaluate_matches_an_independent_tally() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    ok(&c2vkd(&["gen-data", "--config", &cfg, "--out", run_s]));

    // untrained student whose decoder outputs all zeros: uniform softmax,
    // argmax resolves to class 0 everywhere
    let config = StudentConfig { image_h: 16, image_w: 16, dim: 8, heads: 2, depth: 1, mlp_hidden: 8, ..StudentConfig::default() };
    let mut net = StudentNet::new(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0), config).unwrap();
    net.decoder.weight = Tensor::zeros(net.decoder.weight.shape());
    net.decoder.bias = Tensor::zeros(net.decoder.bias.shape());
    save_student(run.join("student.c2vt"), &net, 0).unwrap();
    let text = ok(&c2vkd(&["evaluate", "--out", run_s]));
    assert!(text.contains("mIoU"));

    let val = load_split(run.join(VAL_FILE)).unwrap();
    let mut gt = [0u64; 4];
    for s in &val {
        for &y in s.label.values() {
            gt[y] += 1;
        }
    }
    let total: u64 = gt.iter().sum();
    // class 0: tp = gt[0], union = total; other classes present in gt score 0
    let present = gt.iter().filter(|&&c| c > 0).count();
    let want = gt[0] as f64 / total as f64 / present as f64;

    let report = fs::read_to_string(run.join("evaluation.csv")).unwrap();
    assert!(report.starts_with("class_id,iou\n"));
    let got: f64 = report.lines().last().unwrap().strip_prefix("miou,").unwrap().parse().unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn whole_workflow_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    ok(&c2vkd(&["gen-data", "--config", &cfg, "--out", r]));
    let t = ok(&c2vkd(&["train-teacher", "--config", &cfg, "--out", r]));
    assert!(t.contains("teacher val mIoU"));
    assert!(fs::read_to_string(run.join("teacher_metrics.csv")).unwrap().lines().count() == 4);

    let s1 = ok(&c2vkd(&["distill", "--config", &cfg, "--out", r]));
    assert!(s1.contains("student parameters"));
    let m1 = fs::read(run.join("metrics.csv")).unwrap();
    let c1 = fs::read(run.join("student.c2vt")).unwrap();
    ok(&c2vkd(&["distill", "--config", &cfg, "--out", r]));
    assert_eq!(m1, fs::read(run.join("metrics.csv")).unwrap());
    assert_eq!(c1, fs::read(run.join("student.c2vt")).unwrap());
    let metrics = String::from_utf8(m1).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "iter,lr,L_d,L_g,L_p,L_l,L_total,val_miou");
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].ends_with(','), "val_miou blank between evaluations: {}", rows[0]);
    assert!(!rows[1].ends_with(','));

    let ce = dir.path().join("ce");
    ok(&c2vkd(&["distill", "--config", &cfg, "--data", r, "--teacher", run.join("teacher.c2vt").to_str().unwrap(), "--out", ce.to_str().unwrap(), "--no-ld", "--no-lg", "--no-lp", "--no-ll"]));
    let ce_rows = fs::read_to_string(ce.join("metrics.csv")).unwrap();
    for row in ce_rows.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[3..6], &["0", "0", "0"]);
        assert_eq!(cols[2], cols[6], "total equals the CE term");
    }

    ok(&c2vkd(&["evaluate", "--out", r]));
    ok(&c2vkd(&["evaluate", "--out", r, "--eval-teacher"]));
    let table = ok(&c2vkd(&["ablate", "--config", &cfg, "--out", r, "--iters", "2"]));
    assert!(table.contains("Ld+Lg+Lp+Ll"));
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    ok(&c2vkd(&["gen-data", "--config", &cfg, "--out", r]));
    let out = c2vkd(&["train-teacher", "--config", &cfg, "--out", r]);
    ok(&out);
    let wild = dir.path().join("wild.cfg");
    fs::write(&wild, format!("{TINY}base_lr = 1e300\ngrad_clip = 0\nmax_iters = 6\n")).unwrap();
    let out = c2vkd(&["distill", "--config", wild.to_str().unwrap(), "--out", r]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}
