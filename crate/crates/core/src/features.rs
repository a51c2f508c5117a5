//! `FMAP` feature files and bucket-occupancy statistics.
//!
//! Layout, little-endian: `"FMAP"`, `u32` channels, height, width, then
//! `c·h·w` single-precision values in channel-major order.

use std::io::Write;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::sblsh::{assign_buckets, round_bases};
use crate::tensor::FeatureMap;

pub const MAGIC: &[u8; 4] = b"FMAP";

pub fn write_fmap(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    let (c, h, w) = map.shape();
    for d in [c, h, w] {
        put_u32(&mut out, d as u32);
    }
    put_f32s(&mut out, map.data());
    out
}

pub fn write_fmap_file(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_fmap(map))?;
    Ok(())
}

pub fn read_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let dims_at = r.position();
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let len = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Malformed {
            offset: dims_at,
            reason: format!("invalid dimensions {c}x{h}x{w}"),
        })?;
    let data = r.f32s(len)?;
    r.finish()?;
    FeatureMap::new(c, h, w, data)
}

pub fn read_fmap_file(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_fmap(&std::fs::read(path)?)
}

/// `counts[r][k]`: features hashed to bucket `k` in round `r`, using the
/// feature vectors of `map` directly.
pub fn bucket_histogram(map: &FeatureMap, buckets: usize, rounds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let q = map.to_matrix();
    round_bases(buckets, map.channels(), seed, 0, rounds)?
        .iter()
        .map(|basis| {
            let mut counts = vec![0; buckets];
            for id in assign_buckets(&q, basis)? {
                counts[id] += 1;
            }
            Ok(counts)
        })
        .collect()
}

/// Writes `round,bucket,count` rows.
pub fn write_histogram_csv(counts: &[Vec<usize>], out: &mut impl Write) -> Result<()> {
    writeln!(out, "round,bucket,count")?;
    for (r, row) in counts.iter().enumerate() {
        for (k, n) in row.iter().enumerate() {
            writeln!(out, "{r},{k},{n}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn roundtrip_and_layout() {
        let mut rng = SeededRng::new(2);
        let map = FeatureMap::new(2, 3, 4, rng.normal_vec(24, 1.0)).unwrap();
        let bytes = write_fmap(&map);
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 96);
        let back = read_fmap(&bytes).unwrap();
        for (a, b) in map.data().iter().zip(back.data()) {
            assert_eq!(*b, *a as f32 as f64);
        }
    }

    #[test]
    fn read_errors() {
        let map = FeatureMap::zeros(1, 2, 2);
        let bytes = write_fmap(&map);
        assert!(matches!(read_fmap(&bytes[..10]), Err(Error::Truncated { .. })));
        assert!(matches!(read_fmap(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(read_fmap(b"PMAF\0\0\0\0"), Err(Error::BadMagic { .. })));
        let mut zero = bytes.clone();
        zero[4] = 0;
        assert!(matches!(read_fmap(&zero), Err(Error::Malformed { offset: 4, .. })));
    }

    #[test]
    fn histogram_counts_every_feature() {
        let mut rng = SeededRng::new(3);
        let map = FeatureMap::new(4, 5, 5, rng.normal_vec(100, 1.0)).unwrap();
        let h = bucket_histogram(&map, 3, 2, 7).unwrap();
        assert_eq!(h.len(), 2);
        for row in &h {
            assert_eq!(row.iter().sum::<usize>(), 25);
        }
        let mut csv = Vec::new();
        write_histogram_csv(&h, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(bucket_histogram(&map, 5, 1, 0).is_err());
    }
}
