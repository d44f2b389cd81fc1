//! Binary checkpoint layout:
//!
//! ```text
//! magic   8 bytes  "GCXCKPT1"
//! version u32 LE
//! hlen    u64 LE   length of the JSON header
//! header  hlen bytes of UTF-8 JSON (CheckpointHeader)
//! payload little-endian f32 values, tensors back to back
//! ```
//!
//! Tensor offsets in the header count `f32` elements from the payload start.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::model::{build_nin, HyperConfig, Network};
use crate::tensor::Rng;
use crate::train::{ModelRecord, TrainingTrace};

pub const MAGIC: &[u8; 8] = b"GCXCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub manifest_hash: String,
    pub index: usize,
    pub config: HyperConfig,
    pub seed: u64,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub converged: bool,
    pub trace: TrainingTrace,
    pub train_error: f64,
    pub test_error: f64,
    pub gap: f64,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

/// A model record tagged with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest_hash: String,
    pub index: usize,
    pub record: ModelRecord,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn input_shape(&self) -> [usize; 3] {
        self.record.network.input_shape
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let r = &self.record;
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut offset = 0;
        for (prefix, net) in [("final", &r.network), ("init", &r.init)] {
            for (name, shape, data) in net.state_tensors() {
                tensors.push(TensorEntry {
                    name: format!("{prefix}/{name}"),
                    shape,
                    offset,
                });
                offset += data.len();
                for v in data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = CheckpointHeader {
            version: VERSION,
            manifest_hash: self.manifest_hash.clone(),
            index: self.index,
            config: r.config.clone(),
            seed: r.seed,
            input_shape: r.network.input_shape,
            num_classes: r.network.num_classes,
            converged: r.trace.converged,
            trace: r.trace.clone(),
            train_error: r.train_error,
            test_error: r.test_error,
            gap: r.gap,
            tensors,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    /// Header and payload slice, with magic, version and payload hash checked.
    pub fn parse_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(CheckpointHeader, &'a [u8])> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(corrupt(path, "truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(path, e.to_string()))?;
        let payload = &body[hlen..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt(path, "payload hash mismatch"));
        }
        if !payload.len().is_multiple_of(4) {
            return Err(corrupt(path, "payload not a whole number of f32 values"));
        }
        Ok((header, payload))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (h, payload) = Self::parse_header(bytes, path)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // architecture only; every tensor is overwritten below
        let (mut network, mut init) = build_nin(&h.config, h.input_shape, h.num_classes, &mut Rng::new(0))
            .map_err(|e| corrupt(path, e.to_string()))?;
        let expected = network.state_tensors().len() * 2;
        if h.tensors.len() != expected {
            return Err(corrupt(path, format!("expected {expected} tensors, found {}", h.tensors.len())));
        }
        for t in &h.tensors {
            let len: usize = t.shape.iter().product();
            let data = values
                .get(t.offset..t.offset + len)
                .ok_or_else(|| corrupt(path, format!("tensor {} out of range", t.name)))?;
            let (net, name): (&mut Network, &str) = match t.name.split_once('/') {
                Some(("final", n)) => (&mut network, n),
                Some(("init", n)) => (&mut init, n),
                _ => return Err(corrupt(path, format!("unknown tensor {}", t.name))),
            };
            net.set_state_tensor(name, data).map_err(|e| corrupt(path, e.to_string()))?;
        }
        Ok(Checkpoint {
            manifest_hash: h.manifest_hash,
            index: h.index,
            record: ModelRecord {
                config: h.config,
                seed: h.seed,
                network,
                init,
                trace: h.trace,
                train_error: h.train_error,
                test_error: h.test_error,
                gap: h.gap,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn load_header(path: &Path) -> Result<CheckpointHeader> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse_header(&bytes, path)?.0)
    }
}
