//! Binary trajectory file.
//!
//! ```text
//! 0..4    b"SAKE"
//! 4       version (1)
//! 5       flags, bit 0 = mask present
//! 6..8    reserved, zero
//! 8..28   n_traj, T, C, H, W as little-endian u32
//! ..      n_traj*T*C*H*W little-endian f32, [traj][time][channel][h][w]
//! ..      H*W mask bytes in {0,1} if flagged
//! ..      u32 LE length, then that many bytes of UTF-8 JSON meta
//! ```

use std::fs;
use std::path::Path;

use super::{PoolMeta, PoolShape, TrajectoryPool};

pub const MAGIC: [u8; 4] = *b"SAKE";
pub const VERSION: u8 = 1;
const FLAG_MASK: u8 = 0b1;
const HEADER_LEN: usize = 28;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected \"SAKE\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (supported: {VERSION})")]
    UnsupportedVersion { found: u8 },
    #[error("truncated payload: needed {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid mask byte {value} at site {site}")]
    InvalidMask { site: usize, value: u8 },
    #[error("{0} trailing bytes after meta blob")]
    TrailingBytes(usize),
    #[error("meta blob: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_pool_bytes(pool: &TrajectoryPool) -> Result<Vec<u8>, FormatError> {
    let shape = pool.shape();
    let meta = serde_json::to_vec(pool.meta())?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * shape.total_len() + shape.sites() + 4 + meta.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(if pool.mask().is_some() { FLAG_MASK } else { 0 });
    out.extend_from_slice(&[0, 0]);
    for dim in [shape.n_traj, shape.t, shape.c, shape.h, shape.w] {
        let v = u32::try_from(dim)
            .map_err(|_| FormatError::InvalidHeader(format!("extent {dim} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in pool.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(mask) = pool.mask() {
        out.extend_from_slice(mask);
    }
    let len = u32::try_from(meta.len())
        .map_err(|_| FormatError::InvalidHeader("meta blob exceeds u32 length".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn write_pool(pool: &TrajectoryPool, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, write_pool_bytes(pool)?)?;
    Ok(())
}

pub fn read_pool(path: impl AsRef<Path>) -> Result<TrajectoryPool, FormatError> {
    read_pool_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let needed = self.pos.checked_add(n).ok_or(FormatError::Truncated {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?;
        if needed > self.bytes.len() {
            return Err(FormatError::Truncated {
                needed,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..needed];
        self.pos = needed;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_pool_bytes(bytes: &[u8]) -> Result<TrajectoryPool, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let head = cur.take(4)?;
    if head[0] != VERSION {
        return Err(FormatError::UnsupportedVersion { found: head[0] });
    }
    let flags = head[1];
    if flags & !FLAG_MASK != 0 || head[2] != 0 || head[3] != 0 {
        return Err(FormatError::InvalidHeader(format!(
            "unknown flags {flags:#04x} or nonzero reserved bytes"
        )));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = cur.u32()? as usize;
    }
    let shape = PoolShape {
        n_traj: dims[0],
        t: dims[1],
        c: dims[2],
        h: dims[3],
        w: dims[4],
    };
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::InvalidHeader(format!("extents overflow: {shape:?}")))?;
    let payload = cur.take(count.checked_mul(4).ok_or_else(|| {
        FormatError::InvalidHeader(format!("payload size overflows: {shape:?}"))
    })?)?;
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
        data.push(v);
    }
    let mask = if flags & FLAG_MASK != 0 {
        let raw = cur.take(shape.h * shape.w)?;
        if let Some((site, &value)) = raw.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(FormatError::InvalidMask { site, value });
        }
        Some(raw.to_vec())
    } else {
        None
    };
    let meta_len = cur.u32()? as usize;
    let meta: PoolMeta = serde_json::from_slice(cur.take(meta_len)?)?;
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    TrajectoryPool::with_mask(shape, data, mask, meta)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_linear_lag_system, perturb, LinearLagSpec, PerturbSpec};
    use super::*;

    fn sample_pool() -> TrajectoryPool {
        generate_linear_lag_system(&LinearLagSpec::new(3, 2, 4, 12, 0.1, 1)).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = write_pool_bytes(&sample_pool()).unwrap();
        assert_eq!(&bytes[0..4], b"SAKE");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        let first = f32::from_le_bytes(bytes[28..32].try_into().unwrap());
        assert_eq!(first.to_bits(), sample_pool().data()[0].to_bits());
    }

    #[test]
    fn round_trip_with_mask() {
        let pool = generate_linear_lag_system(&LinearLagSpec::new(2, 1, 3, 8, 0.1, 2)).unwrap();
        let masked = perturb(&pool, &PerturbSpec::random_mask(0.0, 1)).unwrap();
        assert!(masked.mask().is_some());
        let bytes = write_pool_bytes(&masked).unwrap();
        assert_eq!(bytes[5], 1);
        assert_eq!(read_pool_bytes(&bytes).unwrap(), masked);
    }

    #[test]
    fn altered_magic() {
        let mut bytes = write_pool_bytes(&sample_pool()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_pool_bytes(&bytes), Err(FormatError::BadMagic(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = write_pool_bytes(&sample_pool()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            read_pool_bytes(&bytes),
            Err(FormatError::UnsupportedVersion { found: 2 })
        ));
    }

    #[test]
    fn header_promising_more_payload() {
        let mut bytes = write_pool_bytes(&sample_pool()).unwrap();
        bytes[8..12].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(read_pool_bytes(&bytes), Err(FormatError::Truncated { .. })));
        let bytes = write_pool_bytes(&sample_pool()).unwrap();
        assert!(matches!(
            read_pool_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = write_pool_bytes(&sample_pool()).unwrap();
        bytes[32..36].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            read_pool_bytes(&bytes),
            Err(FormatError::NonFinite { index: 1 })
        ));
    }
}
