//! `MDQW` weight files: a JSON header echoing the architecture and the
//! preprocessing the weights were trained under, then raw `f64` arrays.
//!
//! ```text
//! "MDQW" | u32 version | u32 header_len | header JSON
//! per parameter: u32 name_len | name | u32 ndim | u64 dims.. | f64 data..
//! u32 CRC-32 of everything before it
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::dataset::{StftEcho, Standardization, Task};
use crate::error::{Error, Result};
use crate::models::{ArchitectureSpec, Network, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDQW";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Input pipeline the weights expect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub task: Task,
    pub standardization: Standardization,
    pub stft: StftEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: ArchitectureSpec,
    pub preprocessing: Option<Preprocessing>,
    pub params: Vec<ParamInfo>,
    /// Training epoch the weights were taken from, if any.
    pub epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub preprocessing: Option<Preprocessing>,
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(network: Network, preprocessing: Option<Preprocessing>, epoch: Option<usize>) -> Self {
        Self { network, preprocessing, epoch }
    }

    /// Fails unless the stored architecture equals `expected`.
    pub fn require_architecture(&self, expected: &ArchitectureSpec) -> Result<()> {
        if &self.network.spec != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint holds a {:?}/{}-class model, expected {:?}/{}-class",
                self.network.spec.kind, self.network.spec.classes, expected.kind, expected.classes
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let params = &self.network.params;
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.network.spec.clone(),
            preprocessing: self.preprocessing,
            params: params
                .names
                .iter()
                .zip(&params.values)
                .map(|(name, v)| ParamInfo { name: name.clone(), shape: v.shape().to_vec() })
                .collect(),
            epoch: self.epoch,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 8 * params.scalar_count() + 64 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, value) in params.names.iter().zip(&params.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
            for d in value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("missing magic".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated("missing version".into()));
        }
        let stored_crc_at = bytes.len().checked_sub(4).filter(|&at| at >= 12);
        let mut r = Reader { bytes, at: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_FORMAT_VERSION });
        }
        let Some(crc_at) = stored_crc_at else {
            return Err(Error::Truncated("file too short for header and checksum".into()));
        };
        let stored = u32::from_le_bytes(bytes[crc_at..].try_into().expect("four bytes"));
        let computed = crc32fast::hash(&bytes[..crc_at]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: &bytes[..crc_at], at: 8 };
        let json_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(json_len)?)?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version { found: header.format_version, expected: CHECKPOINT_FORMAT_VERSION });
        }

        let mut names = Vec::with_capacity(header.params.len());
        let mut values = Vec::with_capacity(header.params.len());
        for info in &header.params {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != info.name || shape != info.shape {
                return Err(Error::Format(format!("parameter record {name} {shape:?} disagrees with header {info:?}")));
            }
            let n: usize = shape.iter().product();
            let data = r.take(n * 8)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes"))).collect();
            names.push(name);
            values.push(Array::new(shape, data)?);
        }
        if r.at != crc_at {
            return Err(Error::Format(format!("{} unread bytes before checksum", crc_at - r.at)));
        }
        let network = Network::from_parts(header.architecture, ParamStore { names, values })?;
        Ok(Self { network, preprocessing: header.preprocessing, epoch: header.epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!("need {n} bytes at offset {}, have {}", self.at, self.bytes.len()))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        Network::build(ArchitectureSpec::hqnn(2).with_input([2, 8, 12]), 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = Checkpoint::new(small(), None, Some(4));
        let back = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = Checkpoint::new(small(), None, None).encode().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Checksum { .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 9]), Err(Error::Checksum { .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..6]), Err(Error::Truncated(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 7;
        assert!(matches!(Checkpoint::decode(&wrong), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn architecture_mismatch_is_refused() {
        let ckpt = Checkpoint::new(small(), None, None);
        let other = ArchitectureSpec::cnn(2).with_input([2, 8, 12]);
        assert!(matches!(ckpt.require_architecture(&other), Err(Error::Mismatch(_))));
        assert!(ckpt.require_architecture(&ckpt.network.spec.clone()).is_ok());
    }
}
