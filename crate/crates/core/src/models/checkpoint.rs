//! Versioned binary genotype files.
//!
//! ```text
//! magic      8 bytes  "NEVOGENO"
//! version    u32 LE
//! desc_len   u32 LE, followed by the UTF-8 layout descriptor
//! digest     32 bytes SHA-256 of descriptor + layout
//! count      u64 LE
//! values     count × f64 LE
//! ```

use std::fs;
use std::path::Path;

use super::{hex, ModelConfig};
use crate::plasticity::ModulationKind;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NEVOGENO";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub digest: [u8; 32],
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != config.param_count() {
            return Err(Error::shape("Checkpoint", config.param_count(), values.len()));
        }
        Ok(Checkpoint {
            descriptor: config.descriptor(),
            digest: config.digest(),
            values,
        })
    }

    /// Refuse genotypes written for a different layout.
    pub fn verify(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.digest();
        if expected != self.digest {
            return Err(Error::DigestMismatch {
                expected: format!("{} ({})", hex(&expected[..8]), config.descriptor()),
                found: format!("{} ({})", hex(&self.digest[..8]), self.descriptor),
            });
        }
        Ok(())
    }

    /// Rebuild the model configuration recorded in the descriptor.
    pub fn config(&self) -> Result<ModelConfig> {
        let err = |reason: String| Error::Parse {
            what: "layout descriptor",
            reason,
        };
        let mut arch = None;
        let mut hidden = None;
        let mut modulation = ModulationKind::None;
        let mut retro_init = false;
        for part in self.descriptor.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| err(format!("bad entry `{part}`")))?;
            match k {
                "arch" => arch = Some(v.parse()?),
                "hidden" => hidden = Some(v.parse().map_err(|e| err(format!("hidden: {e}")))?),
                "modulation" => modulation = v.parse()?,
                "retro_init" => retro_init = v == "true",
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let mut cfg = ModelConfig::new(
            arch.ok_or_else(|| err("missing arch".into()))?,
            hidden.ok_or_else(|| err("missing hidden".into()))?,
            modulation,
        );
        cfg.retro_init_from_genotype = retro_init;
        self.verify(&cfg)?;
        Ok(cfg)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.descriptor.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "checkpoint",
            reason: reason.to_string(),
        };
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(err("truncated file"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let desc_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let descriptor = String::from_utf8(take(desc_len)?.to_vec()).map_err(|_| err("descriptor is not UTF-8"))?;
        let digest: [u8; 32] = take(32)?.try_into().unwrap();
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let body = take(count.checked_mul(8).ok_or_else(|| err("length overflow"))?)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(err("trailing bytes"));
        }
        Ok(Checkpoint {
            descriptor,
            digest,
            values,
        })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;

    #[test]
    fn bytes_round_trip_and_config_recovery() {
        let mut c = ModelConfig::new(Arch::RetroPrnn, 3, ModulationKind::PostDn);
        c.retro_init_from_genotype = true;
        let values: Vec<f64> = (0..c.param_count()).map(|k| k as f64 * -0.37).collect();
        let ck = Checkpoint::new(&c, values.clone()).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config().unwrap(), c);
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let a = ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::PostDn);
        let b = ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::None);
        let ck = Checkpoint::new(&a, vec![0.0; a.param_count()]).unwrap();
        assert!(matches!(ck.verify(&b), Err(Error::DigestMismatch { .. })));
        assert!(ck.verify(&a).is_ok());
    }

    #[test]
    fn corrupt_files_rejected() {
        let a = ModelConfig::new(Arch::MetaRnn, 2, ModulationKind::None);
        let bytes = Checkpoint::new(&a, vec![1.0; a.param_count()]).unwrap().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
