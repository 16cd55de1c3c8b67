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


use c2vkd::data::{generate_dataset, load_split, save_split};
use c2vkd::tensor::Tensor;

#[test]
fn class_pixel_fractions_are_balanced() {
    let data = generate_dataset(0, 200, 32, 32, 4).unwrap();
    let mut counts = [0u64; 4];
    let mut total = 0u64;
    for s in &data {
        for y in 0..32 {
            for x in 0..32 {
                counts[s.label.values()[y * 32 + x]] += 1;
                total += 1;
            }
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        let frac = c as f64 / total as f64;
        println!("class {k}: {frac:.3}");
        assert!((0.02..=0.70).contains(&frac), "class {k} covers {frac}");
    }
}

#[test]
fn per_class_mean_colors_differ() {
    let data = generate_dataset(1, 50, 32, 32, 4).unwrap();
    let mut sums = [[0.0f64; 3]; 4];
    let mut n = [0usize; 4];
    for s in &data {
        let img: &Tensor = &s.image;
        for (p, &y) in s.label.values().iter().enumerate() {
            for (c, acc) in sums[y].iter_mut().enumerate() {
                *acc += img.data()[c * 1024 + p];
            }
            n[y] += 1;
        }
    }
    let means: Vec<[f64; 3]> = sums.iter().zip(n).map(|(s, n)| s.map(|v| v / n as f64)).collect();
    for a in 0..4 {
        for b in 0..a {
            let d: f64 = (0..3).map(|c| (means[a][c] - means[b][c]).powi(2)).sum::<f64>().sqrt();
            assert!(d > 0.1, "classes {a} and {b} too close: {d}");
        }
    }
}

#[test]
fn dataset_files_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(9, 10, 16, 16, 4).unwrap();
    let path = dir.path().join("val.c2vt");
    save_split(&path, &data).unwrap();
    let bytes_a = std::fs::read(&path).unwrap();
    save_split(&path, &load_split(&path).unwrap()).unwrap();
    assert_eq!(bytes_a, std::fs::read(&path).unwrap());
}
