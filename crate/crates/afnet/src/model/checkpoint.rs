//! Versioned binary checkpoints. Layout, all little-endian:
//! magic "AFN1", then the structural config as u32 fields (channels,
//! compression, units, groups, classes, frame_len, pool count, pool
//! positions), then every parameter block as raw f32 values in the
//! canonical block order. No padding, no trailing bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::NetParams;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::params::ParamBlocks;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AFN1";

/// Serializes config + parameters to the checkpoint byte layout.
pub fn checkpoint_bytes(cfg: &ModelConfig, params: &NetParams<f32>) -> Result<Vec<u8>> {
    cfg.validate()?;
    params.check_config(cfg)?;
    let mut out = Vec::with_capacity(64 + 4 * params.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for field in [
        cfg.channels,
        cfg.compression,
        cfg.units,
        cfg.groups,
        cfg.classes,
        cfg.frame_len,
        cfg.pool_after.len(),
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for &p in &cfg.pool_after {
        out.extend_from_slice(&(p as u32).to_le_bytes());
    }
    for (name, block) in params.blocks() {
        if !block.all_finite() {
            return Err(Error::NonFinite(format!("checkpoint block {name}")));
        }
        for &v in block.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// SHA-256 of the checkpoint bytes, as lowercase hex. Identifies the exact
/// parameter state (weight tables record it as provenance).
pub fn checkpoint_hash(cfg: &ModelConfig, params: &NetParams<f32>) -> Result<String> {
    let bytes = checkpoint_bytes(cfg, params)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &NetParams<f32>) -> Result<()> {
    let bytes = checkpoint_bytes(cfg, params)?;
    fs::write(path, bytes)
        .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                detail: format!(
                    "need {n} bytes for {what} at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, NetParams<f32>)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "AFN1",
        });
    }
    let channels = r.u32("channels")? as usize;
    let compression = r.u32("compression")? as usize;
    let units = r.u32("units")? as usize;
    let groups = r.u32("groups")? as usize;
    let classes = r.u32("classes")? as usize;
    let frame_len = r.u32("frame_len")? as usize;
    let pool_count = r.u32("pool count")? as usize;
    if pool_count > units {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("{pool_count} pool positions for {units} units"),
        });
    }
    let mut pool_after = Vec::with_capacity(pool_count);
    for _ in 0..pool_count {
        pool_after.push(r.u32("pool position")? as usize);
    }
    let cfg = ModelConfig {
        channels,
        compression,
        units,
        pool_after,
        groups,
        classes,
        frame_len,
    };
    cfg.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        detail: format!("stored config invalid: {e}"),
    })?;

    let mut params = NetParams::<f32>::zeros(&cfg)?;
    for (name, block) in params.blocks_mut() {
        let n = block.len();
        let raw = r.take(4 * n, &format!("block {name}"))?;
        for (dst, chunk) in block.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        if !block.all_finite() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                detail: format!("non-finite values in block {name}"),
            });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after last block", bytes.len() - r.pos),
        });
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> ModelConfig {
        ModelConfig {
            channels: 8,
            compression: 4,
            units: 2,
            pool_after: vec![1, 2],
            groups: 2,
            classes: 4,
            frame_len: 16,
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.afn");
        let cfg = small_config();
        let params = NetParams::<f32>::init(&cfg, 77).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn hash_tracks_parameter_changes() {
        let cfg = small_config();
        let a = NetParams::<f32>::init(&cfg, 1).unwrap();
        let mut b = a.clone();
        let h1 = checkpoint_hash(&cfg, &a).unwrap();
        assert_eq!(h1, checkpoint_hash(&cfg, &b).unwrap());
        assert_eq!(h1.len(), 64);
        b.head_bias.data_mut()[0] += 0.5;
        assert_ne!(h1, checkpoint_hash(&cfg, &b).unwrap());
    }

    #[test]
    fn bad_magic_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.afn");
        let cfg = small_config();
        let params = NetParams::<f32>::init(&cfg, 2).unwrap();
        let mut bytes = checkpoint_bytes(&cfg, &params).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.afn");
        let cfg = small_config();
        let params = NetParams::<f32>::init(&cfg, 3).unwrap();
        let bytes = checkpoint_bytes(&cfg, &params).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Corrupt { .. }) => {}
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.afn");
        let cfg = small_config();
        let params = NetParams::<f32>::init(&cfg, 4).unwrap();
        let mut bytes = checkpoint_bytes(&cfg, &params).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Corrupt { detail, .. }) => assert!(detail.contains("trailing")),
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }
}
