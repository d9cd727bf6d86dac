//! Flat named-tensor archive used for checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  b"NMRLARCH"
//! version   u32      1
//! n_meta    u32      then n_meta × (key: str, value: str)
//! n_tensor  u32      then n_tensor × (name: str, rank: u32, dims: rank × u64, values: f64…)
//! str       u32 byte length followed by UTF-8 bytes
//! ```
//!
//! Metadata is kept in key order and tensors in insertion order, so writing
//! the same archive twice yields the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use thiserror::Error;

use crate::autodiff::Array;
use crate::layers::{Network, PolicySpec};

const MAGIC: &[u8; 8] = b"NMRLARCH";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("archive truncated")]
    Truncated,
    #[error("archive is malformed: {0}")]
    Malformed(String),
    #[error("tensor {0} missing from archive")]
    Missing(String),
    #[error("tensor {name}: archived shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Array)>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        if self.bytes.len() < n {
            return Err(ArchiveError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, ArchiveError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ArchiveError::Malformed("non UTF-8 string".into()))
    }
}

impl TensorArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, array) in &self.tensors {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
            for &d in array.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in array.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes };
        if r.take(8)? != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ArchiveError::Version(version));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            metadata.insert(k, v);
        }
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or(ArchiveError::Truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let array = Array::new(shape, data).map_err(|e| ArchiveError::Malformed(e.to_string()))?;
            tensors.push((name, array));
        }
        if !r.bytes.is_empty() {
            return Err(ArchiveError::Malformed("trailing bytes".into()));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Appends every tensor of `net` under its canonical name.
    pub fn push_network(&mut self, net: &Network<Array>) {
        for (name, array) in net.named() {
            self.tensors.push((name, array.clone()));
        }
    }

    /// Restores a network of the architecture described by `spec`.
    pub fn network(&self, spec: &PolicySpec) -> Result<Network<Array>, ArchiveError> {
        // Build a template for names and shapes; its values are discarded.
        let template = Network::init(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| ArchiveError::Malformed(e.to_string()))?;
        let values = template
            .named()
            .into_iter()
            .map(|(name, expected)| {
                let found = self.get(&name).ok_or_else(|| ArchiveError::Missing(name.clone()))?;
                if found.shape() != expected.shape() {
                    return Err(ArchiveError::ShapeMismatch {
                        name,
                        expected: expected.shape().to_vec(),
                        found: found.shape().to_vec(),
                    });
                }
                Ok(found.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(template.with_values(values))
    }
}
