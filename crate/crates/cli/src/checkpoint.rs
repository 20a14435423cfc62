//! Little-endian checkpoint files:
//!
//! ```text
//! magic "GSHIFT01" | u32 version | u32 count | count × (u32 rows, u32 cols)
//! | Σ rows·cols × f64 | 32-byte config digest
//! ```
//!
//! The first array of a model checkpoint is the `1 × 2` training position
//! `[next stage, epoch]`; the rest are the model arrays in
//! [`AdaptationModel::arrays`] order.

use std::fs;
use std::path::Path;

use gradshift::diffcore::Array;
use gradshift::objectives::AdaptationModel;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::error::{CliError, CliResult};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"GSHIFT01";
pub const VERSION: u32 = 1;

pub type Digest = [u8; 32];

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated payload: need {need} bytes, found {found}")]
    Truncated { need: usize, found: usize },
    #[error("{0} trailing bytes after the digest")]
    Trailing(usize),
    #[error("config digest mismatch: checkpoint was written by a different config")]
    DigestMismatch,
    #[error("shape/payload mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub shapes: Vec<(u32, u32)>,
    pub payload: Vec<f64>,
    pub digest: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Position {
    pub stage: usize,
    pub epoch: usize,
}

pub fn digest_of(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn pair(a: &Array) -> (u32, u32) {
    match a.shape() {
        [r, c] => (*r as u32, *c as u32),
        [n] => (1, *n as u32),
        [] => (1, 1),
        s => (s[0] as u32, s[1..].iter().product::<usize>() as u32),
    }
}

impl Checkpoint {
    pub fn new(shapes: Vec<(u32, u32)>, payload: Vec<f64>, digest: Digest) -> Result<Self, CheckpointError> {
        let need: usize = shapes.iter().map(|&(r, c)| r as usize * c as usize).sum();
        if need != payload.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "shapes hold {need} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self { version: VERSION, shapes, payload, digest })
    }

    pub fn from_model(pos: Position, model: &AdaptationModel, digest: Digest) -> Self {
        let mut shapes = vec![(1, 2)];
        let mut payload = vec![pos.stage as f64, pos.epoch as f64];
        for (_, a) in model.arrays() {
            shapes.push(pair(&a));
            payload.extend_from_slice(a.data());
        }
        Self { version: VERSION, shapes, payload, digest }
    }

    /// Fills a model with the layout of `template`.
    pub fn to_model(&self, template: &AdaptationModel) -> Result<(Position, AdaptationModel), CheckpointError> {
        let layout = template.arrays();
        if self.shapes.len() != layout.len() + 1 || self.shapes[0] != (1, 2) {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{} arrays for a model with {}",
                self.shapes.len(),
                layout.len() + 1
            )));
        }
        let pos = Position {
            stage: self.payload[0] as usize,
            epoch: self.payload[1] as usize,
        };
        let mut offset = 2;
        let mut arrays = Vec::with_capacity(layout.len());
        for ((name, a), &shape) in layout.iter().zip(&self.shapes[1..]) {
            if pair(a) != shape {
                return Err(CheckpointError::ShapeMismatch(format!("{name}: {shape:?} vs {:?}", pair(a))));
            }
            let len = a.len();
            let arr = Array::new(a.shape().to_vec(), self.payload[offset..offset + len].to_vec())
                .map_err(|e| CheckpointError::ShapeMismatch(format!("{name}: {e}")))?;
            arrays.push(arr);
            offset += len;
        }
        let mut model = template.clone();
        model
            .set_arrays(&arrays)
            .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
        Ok((pos, model))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.shapes.len() + 8 * self.payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.shapes.len() as u32).to_le_bytes());
        for &(r, c) in &self.shapes {
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(CheckpointError::Truncated { need: n, found: bytes.len() })
            } else {
                Ok(())
            }
        };
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        need(8)?;
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        need(16)?;
        let version = u32_at(8);
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = u32_at(12) as usize;
        let mut at = 16;
        need(at + 8 * count)?;
        let shapes: Vec<(u32, u32)> = (0..count).map(|i| (u32_at(at + 8 * i), u32_at(at + 8 * i + 4))).collect();
        at += 8 * count;
        let values: usize = shapes.iter().map(|&(r, c)| r as usize * c as usize).sum();
        let end = at + 8 * values + 32;
        need(end)?;
        if bytes.len() > end {
            return Err(CheckpointError::Trailing(bytes.len() - end));
        }
        let payload = (0..values)
            .map(|i| f64::from_le_bytes(bytes[at + 8 * i..at + 8 * i + 8].try_into().expect("8 bytes")))
            .collect();
        at += 8 * values;
        let digest: Digest = bytes[at..at + 32].try_into().expect("32 bytes");
        Ok(Self { version, shapes, payload, digest })
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Checkpoint::from_bytes(&bytes).map_err(|source| CliError::Checkpoint { path: path.into(), source })
}

/// Loads and checks the digest against the expected config.
pub fn load_verified(path: &Path, digest: &Digest) -> CliResult<Checkpoint> {
    let ckpt = load(path)?;
    if &ckpt.digest != digest {
        return Err(CliError::Checkpoint {
            path: path.into(),
            source: CheckpointError::DigestMismatch,
        });
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradshift::objectives::Architecture;

    fn model() -> AdaptationModel {
        AdaptationModel::init(4, &Architecture::new(2, 3), true).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = model();
        let c = Checkpoint::from_model(Position { stage: 3, epoch: 0 }, &m, digest_of(&[b"cfg"]));
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let (pos, restored) = back.to_model(&AdaptationModel::init(9, &Architecture::new(2, 3), true).unwrap()).unwrap();
        assert_eq!(pos, Position { stage: 3, epoch: 0 });
        assert_eq!(restored, m);
    }

    #[test]
    fn layout_is_fixed() {
        let c = Checkpoint::new(vec![(1, 2)], vec![1.5, -2.0], [7; 32]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..8], b"GSHIFT01");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..24], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[24..32], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 16 + 8 + 16 + 32);
        assert_eq!(&b[b.len() - 32..], &[7; 32]);
    }

    #[test]
    fn distinct_failures() {
        let b = Checkpoint::new(vec![(2, 2)], vec![0.0; 4], [0; 32]).unwrap().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&b[..b.len() - 1]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).unwrap_err().to_string().contains("truncated payload"));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic));
        let mut v2 = b.clone();
        v2[8] = 2;
        assert_eq!(Checkpoint::from_bytes(&v2), Err(CheckpointError::UnsupportedVersion(2)));
        let mut long = b.clone();
        long.push(0);
        assert_eq!(Checkpoint::from_bytes(&long), Err(CheckpointError::Trailing(1)));
        assert!(matches!(
            Checkpoint::new(vec![(2, 2)], vec![0.0; 3], [0; 32]),
            Err(CheckpointError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn wrong_model_layout() {
        let c = Checkpoint::from_model(Position { stage: 0, epoch: 0 }, &model(), [0; 32]);
        let other = AdaptationModel::init(1, &Architecture::new(2, 3), false).unwrap();
        assert!(matches!(c.to_model(&other), Err(CheckpointError::ShapeMismatch(_))));
    }

    #[test]
    fn digest_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &Checkpoint::new(vec![], vec![], digest_of(&[b"a"])).unwrap()).unwrap();
        assert!(load_verified(&path, &digest_of(&[b"a"])).is_ok());
        match load_verified(&path, &digest_of(&[b"b"])) {
            Err(CliError::Checkpoint { source, .. }) => assert_eq!(source, CheckpointError::DigestMismatch),
            other => panic!("{other:?}"),
        }
    }
}
