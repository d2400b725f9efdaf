//! `CKP1` checkpoints.
//!
//! Layout (little-endian): `"CKP1"`, 32-byte config digest, `u64` step,
//! `u32` length plus UTF-8 config text, `u32` tensor count, then per tensor
//! a `u32`-prefixed name, `u32` rank, `u32` extents and `f32` values.

use std::path::Path;

use spikefuse_tensor::Tensor;

use super::config::Config;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub step: u64,
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(config: &Config, store: &ParamStore, step: u64) -> Self {
        Self {
            digest: config.model.digest(),
            step,
            config_text: config.to_text(),
            tensors: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.config_text);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a CKP1 checkpoint (bad magic)".into()));
        }
        let digest = r.take(32, "config digest")?.try_into().expect("32 bytes");
        let step = u64::from_le_bytes(r.take(8, "step counter")?.try_into().expect("8 bytes"));
        let config_text = r.string("config text")?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let name = r.string(&format!("name of tensor {i}"))?;
            let rank = r.u32(&format!("rank of `{name}`"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&format!("shape of `{name}`"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4, &format!("values of `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push((name, Tensor::from_vec(shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes at offset {}", bytes.len() - r.pos, r.pos)));
        }
        Ok(Self {
            digest,
            step,
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies every tensor into `store`. Returns warnings (a digest that
    /// differs from `config`); missing, extra or misshapen tensors are errors.
    pub fn restore(&self, config: &Config, store: &mut ParamStore) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.digest != config.model.digest() {
            warnings.push("checkpoint config digest differs from the current model config".to_string());
        }
        for (name, _) in store.iter() {
            if !self.tensors.iter().any(|(n, _)| n == name) {
                return Err(Error::Checkpoint(format!("checkpoint has no tensor for parameter `{name}`")));
            }
        }
        for (name, t) in &self.tensors {
            store.set(name, t.clone())?;
        }
        Ok(warnings)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte offset {} while reading {what} ({n} bytes needed, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} at offset {} is not UTF-8", self.pos - n)))
    }
}
