//! Self-describing weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HFREID-CKPT\n"          magic, 12 bytes
//! u32                       format version (1)
//! u64                       header length in bytes
//! header                    UTF-8 TOML: epoch, identities, tensor count, [config]
//! tensor * count:
//!   u32 name length, name (UTF-8)
//!   u32 rows, u32 cols
//!   rows*cols f64, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::ReidModel;
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::params::ParamStore;

const MAGIC: &[u8; 12] = b"HFREID-CKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Training identities in classifier-label order.
    pub identities: Vec<String>,
    /// Epochs completed when the weights were written.
    pub epoch: usize,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    tensors: usize,
    identities: Vec<String>,
    config: TrainConfig,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Input("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &ReidModel, config: &TrainConfig, identities: &[String], epoch: usize) -> Self {
        Checkpoint {
            config: config.clone(),
            identities: identities.to_vec(),
            epoch,
            store: model.store.clone(),
        }
    }

    pub fn model(&self) -> Result<ReidModel> {
        ReidModel::from_store(self.config.model(), self.store.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = toml::to_string(&Header {
            epoch: self.epoch,
            tensors: self.store.len(),
            identities: self.identities.clone(),
            config: self.config.clone(),
        })
        .expect("header serialises");
        let mut out = Vec::with_capacity(64 + header.len() + self.store.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (name, m) in self.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Input("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Input(format!("checkpoint version {version} not supported")));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Input(format!("checkpoint header: {e}")))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Input(format!("checkpoint header: {e}")))?;
        let mut store = ParamStore::new();
        for _ in 0..header.tensors {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|e| Error::Input(format!("tensor name: {e}")))?
                .to_owned();
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Mat::from_shape_vec((rows, cols), data).expect("length matches shape");
            if store.id(&name).is_some() {
                return Err(Error::Input(format!("tensor {name} appears twice")));
            }
            store.add(name, m);
        }
        if r.pos != bytes.len() {
            return Err(Error::Input("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            identities: header.identities,
            epoch: header.epoch,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Input(m) => Error::Decode {
                path: path.to_path_buf(),
                message: m,
            },
            other => other,
        })
    }
}
