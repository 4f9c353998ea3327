//! Binary checkpoints:
//!
//! ```text
//! "IMAGO1\n"
//! u32 version, u64 step                     (little-endian)
//! u32 length + UTF-8 config text
//! u32 parameter count
//! per parameter: u32 length + name, u8 dtype (1 = f64), u32 rank, u64 extents
//! payloads: raw little-endian f64, in manifest order
//! ```

use std::path::Path;

use crate::agent::Model;
use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::flows::BnafInit;

use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8] = b"IMAGO1\n";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(step: u64, config: String, store: &ParamStore) -> Self {
        Checkpoint {
            step,
            config,
            params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Overwrite parameters of `store` by name. Every name must exist on both sides.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store.id(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            store.set_value(id, value.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len32 = |n: usize| u32::try_from(n).map_err(|_| Error::Format("field too long for checkpoint".into()));
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend(self.step.to_le_bytes());
        out.extend(len32(self.config.len())?.to_le_bytes());
        out.extend(self.config.as_bytes());
        out.extend(len32(self.params.len())?.to_le_bytes());
        for (name, t) in &self.params {
            out.extend(len32(name.len())?.to_le_bytes());
            out.extend(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend(len32(t.rank())?.to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("not a checkpoint: magic bytes {magic:02x?}")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let step = r.u64()?;
        let config = r.string()?;
        let n = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Format(format!("parameter `{name}` has unknown dtype {dtype}")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            manifest.push((name, shape));
        }
        let mut params = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("parameter too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Length {
                expected: r.pos,
                found: bytes.len(),
            });
        }
        Ok(Checkpoint { step, config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Rebuild the model described by the checkpoint's config and load its parameters.
pub fn model_from_checkpoint(checkpoint: &Checkpoint) -> Result<(TrainConfig, Model)> {
    let config = TrainConfig::parse(&checkpoint.config)?;
    let mut model = Model::new(config.model_config(), config.seed, BnafInit::training())?;
    checkpoint.restore_into(&mut model.store)?;
    Ok((config, model))
}
