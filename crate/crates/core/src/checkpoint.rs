//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMLK" | u16 version | u32 descriptor_len | descriptor (UTF-8 JSON)
//! u32 entry_count | entries | payload
//! entry   = u32 name_len | name | u32 rank | rank x u32 dims | u64 byte_offset
//! payload = little-endian f32 values, offsets relative to payload start
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::micronet::SgdConfig;
use crate::model::BackboneConfig;

pub const MAGIC: &[u8; 4] = b"EMLK";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape,
            data: values.iter().map(|v| *v as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Encoder {
        backbone: BackboneConfig,
        head_bias: bool,
    },
    Decoder {
        tap_channels: Vec<usize>,
        bias: bool,
        backbones: Vec<BackboneConfig>,
        /// Digests of the encoder checkpoints the decoder was trained on.
        encoder_digests: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub architecture: Architecture,
    pub input_width: usize,
    pub input_height: usize,
    pub training: TrainMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub descriptor: Descriptor,
    pub tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let descriptor = serde_json::to_vec(&self.descriptor).expect("descriptor serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(&descriptor);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dlen = r.u32()? as usize;
        let descriptor: Descriptor = serde_json::from_slice(r.take(dlen)?)
            .map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            entries.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let expected: usize = entries
            .iter()
            .map(|(_, s, _)| 4 * s.iter().product::<usize>())
            .sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, manifest describes {expected}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let start = offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` overruns payload"
                )));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self {
            descriptor,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_bytes())
    }

    /// Hex SHA-256 over tensor names and payload only.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        to_hex(&h.finalize())
    }

    pub fn source(&self) -> TensorSource<'_> {
        TensorSource {
            tensors: &self.tensors,
            used: vec![false; self.tensors.len()],
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Hands out tensors by name while checking shapes.
pub struct TensorSource<'a> {
    tensors: &'a [NamedTensor],
    used: Vec<bool>,
}

impl TensorSource<'_> {
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let idx = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::ArchitectureMismatch(format!("missing tensor `{name}`")))?;
        let t = &self.tensors[idx];
        if t.shape != shape {
            return Err(Error::ArchitectureMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        self.used[idx] = true;
        Ok(t.data.iter().map(|v| f64::from(*v)).collect())
    }

    /// Fails if some stored tensor was never requested.
    pub fn finish(self) -> Result<()> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(Error::ArchitectureMismatch(format!(
                "unexpected tensor `{}`",
                self.tensors[i].name
            ))),
            None => Ok(()),
        }
    }
}
