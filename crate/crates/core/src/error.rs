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

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("row {row} of {op} input is not a distribution (sum = {sum})")]
    NotNormalized {
        op: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("backward() needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {value} out of range for {classes} classes")]
    Label { value: usize, classes: usize },

    #[error("non-finite loss term {term} at iteration {iter}")]
    Divergence { term: &'static str, iter: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Failure kinds when reading or writing a tensor container file.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {found:?}, expected \"C2VT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {0}")]
    Version(u32),

    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },

    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),

    #[error("entry name is not valid UTF-8")]
    BadName,

    #[error("entry {name:?}: {msg}")]
    BadEntry { name: String, msg: String },

    #[error("missing entry {0:?}")]
    Missing(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
