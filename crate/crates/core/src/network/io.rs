//! DLSN parameter files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DLSN"  u32 version
//! u32 × 8 glaffm_count lffb_blocks trunk_channels gla_channels
//!         bucket_size rounds hash_buckets scale
//! u64     master_seed
//! f32 …   every tensor in declaration order
//! ```

use std::path::Path;

use super::{DlsnParams, NetworkConfig};
use crate::binio::{put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::params::Parameters;

pub const MAGIC: &[u8; 4] = b"DLSN";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_params(params: &DlsnParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(48 + 4 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [
        c.glaffm_count,
        c.lffb_blocks,
        c.trunk_channels,
        c.gla_channels,
        c.bucket_size,
        c.rounds,
        c.hash_buckets,
        c.scale,
    ] {
        put_u32(&mut out, v as u32);
    }
    put_u64(&mut out, c.master_seed);
    for (_, t) in params.tensors() {
        put_f32s(&mut out, t);
    }
    out
}

pub fn save_params_file(params: &DlsnParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_params(params))?;
    Ok(())
}

pub fn load_params(bytes: &[u8]) -> Result<DlsnParams> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let offset = r.position();
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            offset,
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config_offset = r.position();
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = NetworkConfig {
        glaffm_count: dims[0],
        lffb_blocks: dims[1],
        trunk_channels: dims[2],
        gla_channels: dims[3],
        bucket_size: dims[4],
        rounds: dims[5],
        hash_buckets: dims[6],
        scale: dims[7],
        master_seed: r.u64()?,
    };
    let mut params = DlsnParams::zeros(config).map_err(|e| Error::Malformed {
        offset: config_offset,
        reason: e.to_string(),
    })?;
    let total: usize = params.tensors().iter().map(|(_, t)| t.len()).sum();
    if r.remaining() < 4 * total {
        return Err(Error::Truncated {
            offset: bytes.len(),
            expected: 4 * total - r.remaining(),
        });
    }
    for (_, t) in params.tensors_mut() {
        let values = r.f32s(t.len())?;
        t.copy_from_slice(&values);
    }
    r.finish()?;
    Ok(params)
}

pub fn load_params_file(path: impl AsRef<Path>) -> Result<DlsnParams> {
    load_params(&std::fs::read(path)?)
}
