//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `SPKN` |
//! | 1 | version (1) |
//! | 1 | variant: 0 free, 1 sparse, 2 mu |
//! | 1 | mu placement: 0 encoder, 1 decoder, 2 both |
//! | 1 | reserved (0) |
//! | 6 × 4 | u32 `n_features, hidden, n_units, enc_kernel, dec_kernel, mu_levels` |
//! | 8 × P | f64 parameters in [`ToyAutoencoder::params`] order, each row-major |
//! | 8 × 2N | f64 running mean then running variance of the normalization |

use std::path::Path;

use super::model::{ModelConfig, MuPlacement, ToyAutoencoder, Variant, MU_LEVELS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPKN";
pub const CHECKPOINT_VERSION: u8 = 1;
const HEADER_BYTES: usize = 8 + 6 * 4;

pub fn to_bytes(model: &ToyAutoencoder) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * model.n_parameters());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&[CHECKPOINT_VERSION, model.variant.code(), c.mu_placement.code(), 0]);
    for v in [c.n_features, c.hidden, c.n_units, c.enc_kernel, c.dec_kernel, MU_LEVELS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in model.params() {
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in model.bn.running_mean.iter().chain(&model.bn.running_var) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ToyAutoencoder> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Truncated {
            position: 0,
            needed: HEADER_BYTES * 8,
            available: bytes.len() * 8,
        });
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: bytes[4],
        });
    }
    let variant = Variant::from_code(bytes[5])?;
    let mu_placement = MuPlacement::from_code(bytes[6])?;
    if bytes[7] != 0 {
        return Err(Error::Corrupt("reserved header byte is not zero".into()));
    }
    let field = |k: usize| {
        let o = 8 + 4 * k;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let config = ModelConfig {
        n_features: field(0),
        hidden: field(1),
        n_units: field(2),
        enc_kernel: field(3),
        dec_kernel: field(4),
        mu_placement,
    };
    if field(5) != MU_LEVELS {
        return Err(Error::Corrupt(format!("expected {MU_LEVELS} prompt levels, found {}", field(5))));
    }
    if [config.n_features, config.hidden, config.n_units].contains(&0)
        || config.enc_kernel.is_multiple_of(2)
        || config.dec_kernel.is_multiple_of(2)
        || config.n_features.max(config.hidden).max(config.n_units) > 1 << 16
        || config.enc_kernel.max(config.dec_kernel) > 1 << 10
    {
        return Err(Error::Corrupt(format!("implausible model shape {config:?}")));
    }
    let mut model = ToyAutoencoder::new(config, variant, 0);
    let expected = HEADER_BYTES + 8 * (model.n_parameters() + 2 * config.n_units);
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "checkpoint is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_BYTES..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    for v in model.bn.running_mean.iter_mut().chain(model.bn.running_var.iter_mut()) {
        *v = values.next().expect("length checked");
    }
    if model.params().iter().any(|p| p.value.iter().any(|v| !v.is_finite()))
        || model.bn.running_var.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        || model.bn.running_mean.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Corrupt("non-finite parameter in checkpoint".into()));
    }
    Ok(model)
}

pub fn save(model: &ToyAutoencoder, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ToyAutoencoder> {
    from_bytes(&std::fs::read(path)?)
}
