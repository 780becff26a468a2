//! Binary model snapshots.
//!
//! Layout (little-endian): the 8-byte magic `KGRCKPT1`, the number of
//! completed epochs (`u64`), the training config as `key = value` text
//! (`u32` length + UTF-8), then per tensor its name (`u16` length + UTF-8),
//! `rows` and `cols` (`u64`), and `rows · cols` `f64` values.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"KGRCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epochs_done: usize,
    pub config: TrainConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.epochs_done as u64).to_le_bytes());
        let cfg = self.config.to_kv_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for &id in &ParamId::ALL {
            let t = self.params.tensor(id);
            let name = id.name();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let epochs_done = r.u64()? as usize;
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = TrainConfig::from_kv_text(cfg_text)?;
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for &id in &ParamId::ALL {
            let name_len = r.u16()? as usize;
            let name = r.take(name_len)?;
            if name != id.name().as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{}`, found `{}`",
                    id.name(),
                    String::from_utf8_lossy(name)
                )));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let count = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor `{}`", id.name())))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { rows, cols, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        let params = ParamStore::from_tensors(tensors)?;
        if params.dim != config.dim {
            return Err(Error::Checkpoint(format!(
                "tensor dimension {} disagrees with config dim {}",
                params.dim, config.dim
            )));
        }
        Ok(Self {
            epochs_done,
            config,
            params,
        })
    }

    /// Writes via a temporary sibling and a rename, so an interrupted write
    /// never clobbers an existing snapshot.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
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
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{init_params, Shapes};

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            dim: 3,
            lr: 0.1 + 0.2,
            ..TrainConfig::default()
        };
        let shapes = Shapes {
            num_users: 2,
            num_items: 5,
            num_relations: 3,
            dim: 3,
        };
        let mut params = init_params(shapes, 4, 0.3).unwrap();
        params.tensor_mut(ParamId::AggB).data[1] = -0.0;
        params.tensor_mut(ParamId::AggB).data[2] = f64::MIN_POSITIVE / 3.0;
        Checkpoint {
            epochs_done: 7,
            config,
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.epochs_done, 7);
        for &id in &ParamId::ALL {
            let a: Vec<u64> = c.params.tensor(id).data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.tensor(id).data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{}", id.name());
        }
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn rejects_dim_mismatch() {
        let mut c = sample();
        c.config.dim = 4;
        assert!(matches!(Checkpoint::from_bytes(&c.to_bytes()), Err(Error::Checkpoint(_))));
    }
}
