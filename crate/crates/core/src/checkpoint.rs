//! Little-endian parameter dump.
//!
//! Layout:
//!
//! ```text
//! magic       8 bytes  "CTRCKPT1"
//! n_params    u32
//! input_dim   u32
//! hidden_dim  u32
//! embed_dim   u32
//! depth       u32
//! seed        u64
//! per parameter:
//!   name_len u32, name (UTF-8), rows u32, cols u32, trainable u8
//! per parameter, in the same order:
//!   rows * cols f64 values, row-major
//! ```

use std::path::Path;

use crate::autodiff::ParamStore;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"CTRCKPT1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(config: EncoderConfig, store: ParamStore) -> Self {
        Self { config, store }
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::attach(self.config.clone(), &self.store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let u32_of = |v: usize| u32::try_from(v).expect("checkpoint field fits in u32");
        out.extend_from_slice(&u32_of(self.store.len()).to_le_bytes());
        for v in [
            self.config.input_dim,
            self.config.hidden_dim,
            self.config.embed_dim,
            self.config.depth,
        ] {
            out.extend_from_slice(&u32_of(v).to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        for p in self.store.iter() {
            out.extend_from_slice(&u32_of(p.name.len()).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&u32_of(p.value.rows()).to_le_bytes());
            out.extend_from_slice(&u32_of(p.value.cols()).to_le_bytes());
            out.push(u8::from(p.trainable));
        }
        for p in self.store.iter() {
            for x in p.value.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::InvalidCheckpoint("bad magic".into()));
        }
        let n = r.u32()? as usize;
        let config = EncoderConfig {
            input_dim: r.u32()? as usize,
            hidden_dim: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            depth: r.u32()? as usize,
            seed: r.u64()?,
        };
        let mut headers = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::InvalidCheckpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let trainable = r.take(1)?[0] != 0;
            headers.push((name, rows, cols, trainable));
        }
        let mut store = ParamStore::new();
        for (name, rows, cols, trainable) in headers {
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::InvalidCheckpoint("parameter too large".into()))?;
            let mut data = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            store.add(name, Matrix::from_vec(rows, cols, data)?, trainable);
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Self { config, store };
        ckpt.encoder()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::InvalidCheckpoint("unexpected end of file".into()))?;
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
}
