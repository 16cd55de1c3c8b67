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

//! CNN-to-ViT knowledge distillation for semantic segmentation.
//!
//! A small convolutional teacher transfers feature-level knowledge
//! (linguistic, global and patch-affinity losses) and prediction-level
//! knowledge (pixel-wise decoupled target/non-target distillation) into a
//! small patch-attention student. Everything runs on the in-crate f64
//! tensor engine in [`tensor`].

pub mod checkpoint;
pub mod container;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod pdd;
pub mod tensor;
pub mod trainer;
pub mod vlfd;

pub use error::{ContainerError, Error, Result};
pub use tensor::Tensor;
