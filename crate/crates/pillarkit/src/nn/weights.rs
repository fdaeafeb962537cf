//! Named weight storage, deterministic initialization, and the `PKW1` file
//! format.
//!
//! File layout, all integers little-endian 32-bit:
//!
//! ```text
//! magic "PKW1"
//! u32 entry_count
//! per entry (sorted by name):
//!   u32 name_len, name bytes (UTF-8)
//!   u32 rank, u32 dims[rank]
//!   f32 payload[product(dims)]
//! ```
//!
//! Save and load round-trip bit-identically: entries live in a sorted map, so
//! the byte stream is a pure function of the store contents.

use super::{Tensor2, Tensor4};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PKW1";
/// Upper bound on a single tensor's element count when decoding; rejects
/// absurd dims from corrupt files before allocating.
const MAX_ELEMENTS: u64 = 1 << 30;

/// Declares one tensor a module expects: its dotted name, shape, and the
/// fan-in used for the init bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Name-addressed tensor map with shape-checked accessors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, WeightEntry>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "weight `{name}`: shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        if self
            .entries
            .insert(name.to_string(), WeightEntry { shape, data })
            .is_some()
        {
            return Err(Error::Config(format!("duplicate weight name `{name}`")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&WeightEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Mutable access for tests and surgical overrides (e.g. zeroing biases).
    pub fn get_mut(&mut self, name: &str) -> Result<&mut WeightEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Fetch a rank-1 tensor as a slice.
    pub fn vector(&self, name: &str) -> Result<&[f32]> {
        let e = self.get(name)?;
        if e.shape.len() != 1 {
            return Err(Error::Shape(format!(
                "weight `{name}` has rank {}, expected 1",
                e.shape.len()
            )));
        }
        Ok(&e.data)
    }

    /// Fetch a rank-2 tensor as a matrix.
    pub fn tensor2(&self, name: &str) -> Result<Tensor2> {
        let e = self.get(name)?;
        match e.shape[..] {
            [r, c] => Tensor2::from_vec(r, c, e.data.clone()),
            _ => Err(Error::Shape(format!(
                "weight `{name}` has shape {:?}, expected rank 2",
                e.shape
            ))),
        }
    }

    /// Fetch a rank-4 tensor.
    pub fn tensor4(&self, name: &str) -> Result<Tensor4> {
        let e = self.get(name)?;
        match e.shape[..] {
            [n, c, h, w] => Tensor4::from_vec(n, c, h, w, e.data.clone()),
            _ => Err(Error::Shape(format!(
                "weight `{name}` has shape {:?}, expected rank 4",
                e.shape
            ))),
        }
    }

    /// Check that every spec is present with the declared shape.
    pub fn check_specs(&self, specs: &[WeightSpec]) -> Result<()> {
        for spec in specs {
            let e = self.get(&spec.name)?;
            if e.shape != spec.shape {
                return Err(Error::Shape(format!(
                    "weight `{}` has shape {:?}, expected {:?}",
                    spec.name, e.shape, spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// Draw every declared tensor uniformly in `±sqrt(6 / fan_in)`.
///
/// Specs are processed in sorted name order from a single seeded stream, so
/// the draw for a given (spec set, seed) never depends on declaration order.
pub fn init_weights(specs: &[WeightSpec], seed: u64) -> Result<WeightStore> {
    use rand::Rng as _;
    let mut sorted: Vec<&WeightSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for pair in sorted.windows(2) {
        if pair[0].name == pair[1].name {
            return Err(Error::Config(format!(
                "duplicate weight spec `{}`",
                pair[0].name
            )));
        }
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut store = WeightStore::new();
    for spec in sorted {
        if spec.fan_in == 0 {
            return Err(Error::Config(format!(
                "weight spec `{}` has zero fan_in",
                spec.name
            )));
        }
        let bound = (6.0 / spec.fan_in as f64).sqrt();
        let numel: usize = spec.shape.iter().product();
        let data: Vec<f32> = (0..numel)
            .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
            .collect();
        store.insert(&spec.name, spec.shape.clone(), data)?;
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(store.entries.len() as u32).to_le_bytes());
    for (name, entry) in &store.entries {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &entry.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<WeightStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor {
        bytes: &bytes,
        offset: 0,
    };
    let magic = cursor.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::WeightFormat {
            offset: 0,
            detail: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let count = cursor.u32("entry count")?;
    let mut store = WeightStore::new();
    for i in 0..count {
        let entry_offset = cursor.offset;
        let name_len = cursor.u32("name length")? as usize;
        let name_bytes = cursor.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::WeightFormat {
                offset: entry_offset as u64,
                detail: format!("entry {i} name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = cursor.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = cursor.u32("dim")? as usize;
            numel = numel.saturating_mul(d as u64);
            shape.push(d);
        }
        if numel > MAX_ELEMENTS {
            return Err(Error::WeightFormat {
                offset: entry_offset as u64,
                detail: format!("`{name}` declares {numel} elements, refusing"),
            });
        }
        let payload = cursor.take(numel as usize * 4, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(&name, shape, data).map_err(|e| Error::WeightFormat {
            offset: entry_offset as u64,
            detail: e.to_string(),
        })?;
    }
    if cursor.offset != bytes.len() {
        return Err(Error::WeightFormat {
            offset: cursor.offset as u64,
            detail: format!("{} trailing bytes after last entry", bytes.len() - cursor.offset),
        });
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::WeightFormat {
                offset: self.offset as u64,
                detail: format!(
                    "truncated while reading {what}: wanted {n} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
