//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "CVFCKPT\0"
//! version      u32       1
//! endianness   u32       0x01020304
//! meta_len     u64
//! meta         meta_len bytes of JSON (model config, normalization, schema)
//! n_params     u64
//! per parameter:
//!   name_len   u32, name (UTF-8)
//!   group      u8
//!   trainable  u8 (0 or 1)
//!   rows, cols u64, u64
//!   data       rows·cols f64, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, NormStats};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamGroup;
use crate::autodiff::Matrix;

pub const MAGIC: &[u8; 8] = b"CVFCKPT\0";
pub const VERSION: u32 = 1;
pub const ENDIAN_MARKER: u32 = 0x0102_0304;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    #[serde(default)]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub schema: Option<DatasetSchema>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub norm: Option<NormStats>,
    pub schema: Option<DatasetSchema>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            norm: None,
            schema: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            config: self.model.cfg.clone(),
            norm: self.norm.clone(),
            schema: self.schema.clone(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut out = Vec::with_capacity(meta.len() + self.model.store.count() * 8 + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.model.store.len() as u64).to_le_bytes());
        for (_, p) in self.model.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.group.as_u8());
            out.push(p.trainable as u8);
            let (r, c) = p.value.dim();
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        if r.u32()? != ENDIAN_MARKER {
            return Err(Error::Checkpoint("endianness marker mismatch".into()));
        }
        let meta_len = r.len()?;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut model = Model::new(meta.config, 0)?;
        let n = r.len()?;
        if n != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {n} tensors, the configured model has {}",
                model.store.len()
            )));
        }
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let group = ParamGroup::from_u8(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("unknown group tag for {name}")))?;
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::Checkpoint(format!("bad trainable flag {other} for {name}"))),
            };
            let (rows, cols) = (r.len()?, r.len()?);
            let count = rows
                .checked_mul(cols)
                .filter(|c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for {name}")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
            let p = model.store.get_mut(id);
            if p.group != group || p.value.dim() != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} is {group} {rows}×{cols}, model expects {} {:?}",
                    p.group,
                    p.value.dim()
                )));
            }
            p.value = Matrix::from_shape_vec((rows, cols), data).expect("length checked");
            p.trainable = trainable;
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            model,
            norm: meta.norm,
            schema: meta.schema,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
