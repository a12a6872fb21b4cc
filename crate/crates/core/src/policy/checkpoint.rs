//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "NSLAMCKP" | version u32 | variant (u16 len + utf8)
//! hidden u32 | memory h, w, c u32 | prior sigma f64 | boundary u8
//! step u64 | seed count u32 | seeds u64...
//! param count u32 | per param: name (u16 len + utf8), ndim u8, dims u32..., f32 values
//! ```

use std::path::Path;

use super::{AgentVariant, ModelConfig, ModelParams};
use crate::autodiff::{Boundary, Tensor};
use crate::error::{Error, Result};
use crate::memory::MemoryShape;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NSLAMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus the training position they were saved at.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Global training step.
    pub step: u64,
    /// Seeds needed to resume or reproduce the run.
    pub seeds: Vec<u64>,
}

impl Checkpoint {
    pub fn new(params: ModelParams, step: u64, seeds: Vec<u64>) -> Self {
        Checkpoint { params, step, seeds }
    }

    pub fn variant(&self) -> AgentVariant {
        self.params.variant()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.params.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, cfg.variant.name());
        for n in [cfg.hidden, cfg.memory.height, cfg.memory.width, cfg.memory.channels] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&cfg.prior_sigma.to_le_bytes());
        out.push(match cfg.boundary {
            Boundary::Circular => 0,
            Boundary::Zero => 1,
        });
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.seeds.len() as u32).to_le_bytes());
        for s in &self.seeds {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.params().len() as u32).to_le_bytes());
        for p in self.params.iter() {
            put_str(&mut out, &p.name);
            out.push(p.value.shape().len() as u8);
            for d in p.value.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let variant: AgentVariant = r.string()?.parse()?;
        let hidden = r.u32()? as usize;
        let memory = MemoryShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let prior_sigma = f64::from_le_bytes(r.array()?);
        let boundary = match r.u8()? {
            0 => Boundary::Circular,
            1 => Boundary::Zero,
            b => return Err(Error::Checkpoint(format!("unknown boundary tag {b}"))),
        };
        let step = r.u64()?;
        let seeds = (0..r.u32()?).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            variant,
            hidden,
            memory,
            prior_sigma,
            boundary,
        };
        let mut params = ModelParams::zeros(config)?;
        let count = r.u32()? as usize;
        if count != params.params().len() {
            return Err(Error::Checkpoint(format!(
                "{count} parameters stored, {variant} expects {}",
                params.params().len()
            )));
        }
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len)
                .map(|_| r.array().map(|b| f32::from_le_bytes(b) as f64))
                .collect::<Result<Vec<_>>>()?;
            let idx = params
                .params()
                .index_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let slot = params.params_mut().get_mut(idx);
            if slot.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {shape:?}, expected {:?}",
                    slot.value.shape()
                )));
            }
            slot.value = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { params, step, seeds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads and rejects a checkpoint of a different variant.
    pub fn load_as(path: &Path, variant: AgentVariant) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.variant() != variant {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} model, not {variant}",
                path.display(),
                ck.variant()
            )));
        }
        Ok(ck)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not utf-8".into()))
    }
}
