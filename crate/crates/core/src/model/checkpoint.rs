// Copyright 2026 The IPLT Authors
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

//! Binary checkpoint format.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic    8 bytes  "IPLTCKPT"
//! version  u32      currently 1
//! name     u32 length + UTF-8 bytes
//! input    3 x u32  C, H, W
//! seed     u64
//! epoch    u32
//! layers   u32 count, then per layer a u8 tag, tag-specific u32 fields and
//!          its tensors (u32 rank, rank x u32 dims, f64 values)
//! rng      32-byte seed, u64 stream, u128 word position
//! mask     u32 count, then per conv layer u32 index, u32 length, one byte
//!          per filter (1 alive, 0 pruned)
//! crc32    u32 over every preceding byte
//! ```
//!
//! The checksum is verified before anything else is parsed, so a truncated
//! or altered file is reported as a checksum failure rather than as garbage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{BatchNorm, Layer, Linear, ModelGraph, PruneMask};
use crate::tensor::{ConvParams, RngState, Tensor};

pub const MAGIC: &[u8; 8] = b"IPLTCKPT";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_BATCHNORM: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_MAXPOOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_LINEAR: u8 = 6;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated ({0} bytes)")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// A model together with the generator position of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelGraph,
    pub rng: RngState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field exceeds u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank());
        for &d in t.shape() {
            self.u32(d);
        }
        for &v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.u32(m.name.len());
    w.0.extend_from_slice(m.name.as_bytes());
    for d in m.input_shape {
        w.u32(d);
    }
    w.u64(m.seed);
    w.u32(m.epoch as usize);
    w.u32(m.layers.len());
    for layer in &m.layers {
        match layer {
            Layer::Conv(p) => {
                w.u8(TAG_CONV);
                w.u32(p.stride);
                w.u32(p.padding);
            }
            Layer::BatchNorm(_) => w.u8(TAG_BATCHNORM),
            Layer::Relu => w.u8(TAG_RELU),
            Layer::MaxPool { window, stride } => {
                w.u8(TAG_MAXPOOL);
                w.u32(*window);
                w.u32(*stride);
            }
            Layer::Flatten => w.u8(TAG_FLATTEN),
            Layer::Linear(_) => w.u8(TAG_LINEAR),
        }
        for t in layer.tensors() {
            w.tensor(t);
        }
    }
    w.0.extend_from_slice(&ckpt.rng.seed);
    w.u64(ckpt.rng.stream);
    w.0.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    let mask: Vec<_> = m.mask().iter().collect();
    w.u32(mask.len());
    for (layer, flags) in mask {
        w.u32(layer);
        w.u32(flags.len());
        w.0.extend(flags.iter().map(|&a| u8::from(a)));
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Malformed(format!(
                "field at byte {} runs past the payload",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()?;
        if rank == 0 || rank > 4 {
            return Err(CheckpointError::Malformed(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = len
            .and_then(|l| l.checked_mul(8))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor shape {shape:?}")))?;
        let raw = self.take(bytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

fn malformed(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Malformed(e.to_string())
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: payload,
        pos: MAGIC.len(),
    };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let name_len = r.u32()?;
    let name = std::str::from_utf8(r.take(name_len)?).map_err(malformed)?.to_string();
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let seed = r.u64()?;
    let epoch = r.u32()? as u32;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for i in 0..n_layers {
        let layer = match r.u8()? {
            TAG_CONV => {
                let (stride, padding) = (r.u32()?, r.u32()?);
                let (weights, bias) = (r.tensor()?, r.tensor()?);
                Layer::Conv(ConvParams::new(weights, bias, stride, padding).map_err(malformed)?)
            }
            TAG_BATCHNORM => Layer::BatchNorm(BatchNorm {
                gamma: r.tensor()?,
                beta: r.tensor()?,
                running_mean: r.tensor()?,
                running_var: r.tensor()?,
            }),
            TAG_RELU => Layer::Relu,
            TAG_MAXPOOL => Layer::MaxPool {
                window: r.u32()?,
                stride: r.u32()?,
            },
            TAG_FLATTEN => Layer::Flatten,
            TAG_LINEAR => Layer::Linear(Linear {
                weights: r.tensor()?,
                bias: r.tensor()?,
            }),
            tag => return Err(malformed(format!("layer {i}: unknown tag {tag}"))),
        };
        layers.push(layer);
    }
    let rng = RngState {
        seed: r.take(32)?.try_into().unwrap(),
        stream: r.u64()?,
        word_pos: u128::from_le_bytes(r.take(16)?.try_into().unwrap()),
    };
    let n_mask = r.u32()?;
    let mut mask = BTreeMap::new();
    for _ in 0..n_mask {
        let layer = r.u32()?;
        let len = r.u32()?;
        let flags = r
            .take(len)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(malformed(format!("mask byte {b}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        mask.insert(layer, flags);
    }
    if r.pos != payload.len() {
        return Err(malformed(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    let mut model = ModelGraph::new(name, input_shape, layers, seed).map_err(malformed)?;
    model.epoch = epoch;
    model.set_mask(PruneMask::from_layers(mask)).map_err(malformed)?;
    Ok(Checkpoint { model, rng })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
