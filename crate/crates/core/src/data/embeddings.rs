//! Id-keyed embedding tables and the `EPEM` binary file format.
//!
//! Layout (all little-endian): magic `EPEM`, version `u32`, entry count
//! `u64`, dimension `u32`, then per entry an id length `u16`, the UTF-8 id
//! bytes and `dim` × `f32`.

use std::collections::HashMap;
use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EPEM";
pub const EMBEDDING_VERSION: u32 = 1;
pub const MAX_ID_BYTES: usize = 256;

/// Ordered table of `id -> vector`. Values are stored as `f64` but always
/// hold exactly representable `f32` numbers, since that is what the file
/// format carries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Like [`get`](Self::get) but with an integrity error naming the id.
    pub fn require(&self, id: &str, kind: &str) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::Integrity(format!("missing {kind} embedding for id {id:?}")))
    }

    /// Appends an entry. Values are rounded to `f32` precision.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if id.len() > MAX_ID_BYTES {
            return Err(Error::Integrity(format!(
                "id {:?}… is {} bytes, limit is {MAX_ID_BYTES}",
                id.chars().take(16).collect::<String>(),
                id.len()
            )));
        }
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding {id:?} has dim {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding {id:?} contains {bad}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Integrity(format!("duplicate embedding id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend(vector.iter().map(|&v| v as f32 as f64));
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(EMBEDDING_MAGIC);
        w.u32(EMBEDDING_VERSION);
        w.u64(self.ids.len() as u64);
        w.u32(self.dim as u32);
        for (i, id) in self.ids.iter().enumerate() {
            w.u16(id.len() as u16);
            w.bytes(id.as_bytes());
            for &v in &self.data[i * self.dim..(i + 1) * self.dim] {
                w.f32(v as f32);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "embedding file");
        r.expect_magic(EMBEDDING_MAGIC)?;
        let version = r.u32()?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!(
                "embedding file: unsupported version {version}"
            )));
        }
        let count_at = r.position();
        let count = r.u64()?;
        let dim = r.u32()? as usize;
        // Smallest possible entry: 2-byte id length + empty id + payload.
        let min_entry = 2 + 4 * dim;
        if count.saturating_mul(min_entry as u64) > r.remaining() as u64 {
            return Err(Error::Format(format!(
                "embedding file: entry count {count} at byte offset {count_at} exceeds file size"
            )));
        }
        let mut table = EmbeddingTable::new(dim);
        let mut vector = vec![0.0; dim];
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let id_at = r.position();
            let id = std::str::from_utf8(r.take(id_len)?).map_err(|_| {
                Error::Format(format!("embedding file: invalid UTF-8 id at byte offset {id_at}"))
            })?;
            for v in vector.iter_mut() {
                let x = r.f32()?;
                if !x.is_finite() {
                    return Err(Error::Format(format!(
                        "embedding file: non-finite value for id {id:?}"
                    )));
                }
                *v = x as f64;
            }
            table.insert(id, &vector).map_err(|e| match e {
                Error::Integrity(m) => Error::Format(format!("embedding file: {m}")),
                other => other,
            })?;
        }
        r.expect_end()?;
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
