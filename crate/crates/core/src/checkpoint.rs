//! Binary model checkpoints.
//!
//! Layout (little endian): `"SDFF"`, `u32` version, `u32` length + UTF-8
//! `model.key=value` text, `u32` tensor count, then per tensor `u32` name
//! length, name, `u8` dtype (0 = f32), `u32` rank, `u64` dims, f32 data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ModelConfig, SdformerFlow};

pub const MAGIC: &[u8; 4] = b"SDFF";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                "checkpoint",
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Checkpoint {
    pub fn from_model(model: &SdformerFlow) -> Self {
        Self {
            config: model.config.clone(),
            tensors: model
                .state()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config.to_kv();
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.push(DTYPE_F32);
            b.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?)
            .map_err(|_| Error::format("checkpoint", "config is not UTF-8"))?;
        let config = ModelConfig::from_kv(cfg_text)?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(r.remaining() / 9));
        for i in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::format("checkpoint", format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::format("checkpoint", format!("{name}: unsupported dtype {dtype}")));
            }
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::format("checkpoint", format!("{name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: u64 = 1;
            for _ in 0..rank {
                let d = r.u64("dim")?;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::format("checkpoint", format!("{name}: shape overflows")))?;
                shape.push(d as usize);
            }
            if numel > (r.remaining() / 4) as u64 {
                return Err(Error::format("checkpoint", format!("{name}: data truncated")));
            }
            let data = r
                .take(numel as usize * 4, "data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.remaining() != 0 {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, tensors })
    }

    /// Rebuilds the model and copies every tensor in by name.
    pub fn into_model(self) -> Result<SdformerFlow> {
        let model = SdformerFlow::new(self.config.clone(), 0)?;
        self.load_into(&model)?;
        Ok(model)
    }

    pub fn load_into(&self, model: &SdformerFlow) -> Result<()> {
        if model.config != self.config {
            return Err(Error::Config(format!(
                "checkpoint config {} does not match model config {}",
                self.config.fingerprint(),
                model.config.fingerprint()
            )));
        }
        let params = model.state();
        if params.len() != self.tensors.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors stored, model has {}", self.tensors.len(), params.len()),
            ));
        }
        for ((name, t), stored) in params.iter().zip(&self.tensors) {
            if *name != stored.name || t.shape() != stored.shape.as_slice() {
                return Err(Error::format(
                    "checkpoint",
                    format!("{name} {:?} does not match stored {} {:?}", t.shape(), stored.name, stored.shape),
                ));
            }
            t.set_data(&stored.data)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_restores_parameters() {
        let model = SdformerFlow::new(ModelConfig::tiny(), 11).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes();
        let restored = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        for ((na, a), (nb, b)) in model.state().iter().zip(restored.state()) {
            assert_eq!(na, &nb);
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn rejects_corruption() {
        let model = SdformerFlow::new(ModelConfig::tiny(), 1).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(Checkpoint::from_bytes(&ver).is_err());
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let a = SdformerFlow::new(ModelConfig::tiny(), 1).unwrap();
        let mut cfg = ModelConfig::tiny();
        cfg.shortcut = crate::net::ShortcutKind::Sew;
        let b = SdformerFlow::new(cfg, 1).unwrap();
        assert!(Checkpoint::from_model(&a).load_into(&b).is_err());
    }
}
