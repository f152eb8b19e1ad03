//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "H2FP"
//! 4       4     format version (1)
//! 8       4     element type: 1 = f32, 2 = f64
//! 12      4     input_dim
//! 16      4     hidden_dim
//! 20      4     output_dim
//! 24      8     round the snapshot was taken after
//! 32      8     parameter count
//! 40      ...   parameters in ParamVector order, little-endian
//! ```
//!
//! Round snapshots use f32; pretrained models use f64 so that reloading them
//! reproduces the in-memory vector exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModelArchitecture, ModelError, ParamVector};

pub const MAGIC: &[u8; 4] = b"H2FP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn code(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a model snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("unknown element type code {0}")]
    ElementType(u32),
    #[error("snapshot truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub round: u64,
    pub params: ParamVector,
}

pub fn encode(params: &ParamVector, round: u64, precision: Precision) -> Vec<u8> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(HEADER_LEN + params.len() * precision.width());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, precision.code(), arch.input_dim as u32, arch.hidden_dim as u32, arch.output_dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in params.as_slice() {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[0..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let precision = match u32_at(bytes, 8) {
        1 => Precision::F32,
        2 => Precision::F64,
        other => return Err(SnapshotError::ElementType(other)),
    };
    let arch = ModelArchitecture::new(u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize, u32_at(bytes, 20) as usize)?;
    let round = u64_at(bytes, 24);
    let count = u64_at(bytes, 32) as usize;
    let expected = HEADER_LEN + count * precision.width();
    if bytes.len() < expected {
        return Err(SnapshotError::Truncated { expected, found: bytes.len() });
    }
    let body = &bytes[HEADER_LEN..expected];
    let values = match precision {
        Precision::F32 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Precision::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Snapshot { round, params: ParamVector::from_values(arch, values)? })
}

pub fn write(path: &Path, params: &ParamVector, round: u64, precision: Precision) -> Result<(), SnapshotError> {
    fs::write(path, encode(params, round, precision)).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })
}

pub fn read(path: &Path) -> Result<Snapshot, SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let p = init_params(ModelArchitecture::new(3, 2, 2).unwrap(), 1);
        let bytes = encode(&p, 7, Precision::F32);
        assert_eq!(&bytes[..4], b"H2FP");
        assert_eq!(bytes.len(), 40 + 4 * p.len());
        assert_eq!(u64_at(&bytes, 24), 7);
        assert_eq!(u64_at(&bytes, 32), p.len() as u64);
    }

    #[test]
    fn corrupt_inputs() {
        let p = init_params(ModelArchitecture::new(3, 2, 2).unwrap(), 1);
        let mut bytes = encode(&p, 0, Precision::F64);
        assert!(matches!(decode(&bytes[..50]), Err(SnapshotError::Truncated { .. })));
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(SnapshotError::ElementType(9))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(SnapshotError::BadMagic)));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(seed in any::<u64>(), round in any::<u64>()) {
            let p = init_params(ModelArchitecture::new(5, 3, 4).unwrap(), seed);
            let s = decode(&encode(&p, round, Precision::F64)).unwrap();
            prop_assert_eq!(s.round, round);
            prop_assert_eq!(s.params, p);
        }

        #[test]
        fn f32_round_trip_within_single_precision(seed in any::<u64>()) {
            let p = init_params(ModelArchitecture::new(5, 3, 4).unwrap(), seed);
            let s = decode(&encode(&p, 0, Precision::F32)).unwrap();
            for (a, b) in s.params.as_slice().iter().zip(p.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-7 * b.abs().max(1e-30));
            }
        }
    }
}
