use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffengine::ParamSet;
use crate::error::{Error, Result};
use crate::nets::{Architecture, ENCODER_PREFIX, HEAD_PREFIX};
use crate::rng::{derive_seed, STREAM_INIT};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MIRG";

/// One point of the in-training MI curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiPoint {
    pub step: usize,
    pub bits: f64,
}

/// JSON metadata block of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub seed: u64,
    pub config_hash: String,
    pub k_tr: usize,
    pub temperature: f64,
    pub steps_completed: usize,
    /// `None` before the first step.
    pub final_loss: Option<f64>,
    pub mi_curve: Vec<MiPoint>,
}

/// Encoder and projection-head parameters plus what is needed to rebuild them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderCheckpoint {
    pub meta: CheckpointMeta,
    /// `enc.*` followed by `proj.*` tensors.
    pub params: ParamSet<f32>,
}

impl EncoderCheckpoint {
    pub fn encoder_params(&self) -> ParamSet<f32> {
        self.params.subset(ENCODER_PREFIX)
    }

    pub fn head_params(&self) -> ParamSet<f32> {
        self.params.subset(HEAD_PREFIX)
    }

    pub fn repr_dim(&self) -> usize {
        self.meta.architecture.encoder.repr_dim()
    }

    /// Rejects checkpoints whose encoder output width differs from `expected`.
    pub fn require_repr_dim(&self, expected: usize) -> Result<()> {
        let found = self.repr_dim();
        if found != expected {
            return Err(Error::Shape(format!(
                "checkpoint encoder emits {found}-d representations, consumer expects {expected}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(12 + meta.len() + 4 * self.params.num_scalars() + 64 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(meta.len())
                .map_err(|_| Error::Format("metadata too large".into()))?
                .to_le_bytes(),
        );
        out.extend_from_slice(&meta);
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Format("rank too large".into()))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a MIRG checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        // same seed as the initializer in `init_checkpoint`
        let mut params = ParamSet::new(derive_seed(meta.seed, 0, STREAM_INIT));
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let expected = meta.architecture.init_params(0)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Shape(format!(
                        "tensor `{name}` has shape {:?}, architecture needs {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::MissingParam(name.to_string())),
            }
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &EncoderCheckpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderCheckpoint> {
    EncoderCheckpoint::load(path)
}
