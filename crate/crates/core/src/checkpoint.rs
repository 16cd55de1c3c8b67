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

//! Saving and restoring networks as tensor containers: one entry per
//! parameter plus a `meta` entry with the architecture and step counter.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::{find, load_container, save_container};
use crate::error::{ContainerError, Result};
use crate::models::{StudentNet, TeacherNet};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const META: &str = "meta";

fn entries_of(net: &dyn Module, meta: Vec<f64>) -> Result<Vec<(String, Tensor)>> {
    let mut entries: Vec<(String, Tensor)> = net.named_params().into_iter().map(|(n, t)| (n, t.detach())).collect();
    let len = meta.len();
    entries.push((META.to_string(), Tensor::new(meta, &[len])?));
    Ok(entries)
}

/// Overwrites every parameter of `net` with the stored tensor of the same
/// name; shapes must agree.
fn restore(net: &mut dyn Module, entries: &[(String, Tensor)]) -> Result<()> {
    let stored: HashMap<&str, &Tensor> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut err = None;
    net.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match stored.get(name.as_str()) {
            None => err = Some(ContainerError::Missing(name)),
            Some(t) if t.shape() != p.shape() => {
                err = Some(ContainerError::BadEntry {
                    msg: format!("shape {:?}, network expects {:?}", t.shape(), p.shape()),
                    name,
                })
            }
            Some(t) => *p = Tensor::param(t.to_vec(), t.shape()).expect("shape checked"),
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn save_teacher(path: impl AsRef<Path>, net: &TeacherNet, step: usize) -> Result<()> {
    save_container(path, &entries_of(net, net.meta(step))?)
}

pub fn load_teacher(path: impl AsRef<Path>) -> Result<(TeacherNet, usize)> {
    let entries = load_container(path)?;
    let (config, step) = TeacherNet::config_from_meta(find(&entries, META)?.data())?;
    let mut net = TeacherNet::new(&mut ChaCha8Rng::seed_from_u64(0), config)?;
    restore(&mut net, &entries)?;
    Ok((net, step))
}

pub fn save_student(path: impl AsRef<Path>, net: &StudentNet, step: usize) -> Result<()> {
    save_container(path, &entries_of(net, net.meta(step))?)
}

pub fn load_student(path: impl AsRef<Path>) -> Result<(StudentNet, usize)> {
    let entries = load_container(path)?;
    let (config, step) = StudentNet::config_from_meta(find(&entries, META)?.data())?;
    let mut net = StudentNet::new(&mut ChaCha8Rng::seed_from_u64(0), config)?;
    restore(&mut net, &entries)?;
    Ok((net, step))
}
