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

//! Binary tensor container: `"C2VT"`, version, entry count, then per entry
//! a u16 name length, the UTF-8 name, a u8 rank, u32 extents and the f64
//! payload. Every integer and float is little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{ContainerError, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"C2VT";
pub const VERSION: u32 = 1;

/// Named tensors in file order.
pub type Entries = Vec<(String, Tensor)>;

pub fn encode(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let payload: usize = entries.iter().map(|(n, t)| 3 + n.len() + 4 * t.rank() + 8 * t.numel()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| bad("<container>", "too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        if !seen.insert(name.as_str()) {
            return Err(ContainerError::DuplicateName(name.clone()).into());
        }
        let len = u16::try_from(name.len()).map_err(|_| bad(name, "name longer than 65535 bytes"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| bad(name, "rank above 255"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(name, "extent above u32::MAX"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(name: &str, msg: &str) -> crate::Error {
    ContainerError::BadEntry { name: name.to_string(), msg: msg.to_string() }.into()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ContainerError::Truncated { what }),
        }
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Entries> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(ContainerError::BadMagic { found: magic }.into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ContainerError::Version(version).into());
    }
    let count = r.u32("entry count")? as usize;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| ContainerError::BadName)?.to_string();
        if !seen.insert(name.clone()) {
            return Err(ContainerError::DuplicateName(name).into());
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extents")? as usize);
        }
        if shape.contains(&0) {
            return Err(bad(&name, "zero extent"));
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad(&name, "size overflow"))?;
        let bytes = numel.checked_mul(8).ok_or_else(|| bad(&name, "size overflow"))?;
        let data = r
            .take(bytes, "payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(data, &shape)?));
    }
    if r.pos != buf.len() {
        return Err(bad("<container>", "trailing bytes after last entry"));
    }
    Ok(entries)
}

pub fn save_container(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(entries)?;
    fs::write(path, bytes).map_err(|source| ContainerError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Entries> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ContainerError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}

/// Looks up an entry by name.
pub fn find<'a>(entries: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| ContainerError::Missing(name.to_string()).into())
}
