//! FMB1 binary feature matrices.
//!
//! Layout (all little endian):
//!
//! | offset | size        | content                     |
//! |--------|-------------|-----------------------------|
//! | 0      | 4           | magic `FMB1`                |
//! | 4      | 8           | rows, `u64`                 |
//! | 12     | 8           | cols, `u64`                 |
//! | 20     | 8·rows·cols | values, `f64`, row-major    |

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{FeatureSeries, Result, TrajError};

pub const FMB_MAGIC: [u8; 4] = *b"FMB1";
const HEADER: usize = 20;

pub fn encode_fmb(series: &FeatureSeries) -> Vec<u8> {
    let m = series.values();
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(HEADER + 8 * rows * cols);
    out.extend_from_slice(&FMB_MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_fmb(bytes: &[u8]) -> Result<FeatureSeries> {
    if bytes.len() < HEADER {
        return Err(TrajError::Truncated {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
    if magic != FMB_MAGIC {
        return Err(TrajError::BadMagic(magic));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().expect("8-byte slice"));
    let cols = u64::from_le_bytes(bytes[12..20].try_into().expect("8-byte slice"));
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .and_then(|n| n.checked_add(HEADER))
        .ok_or(TrajError::SizeOverflow { rows, cols })?;
    if rows < 2 || cols == 0 {
        return Err(TrajError::EmptySeries {
            rows: rows as usize,
            cols: cols as usize,
        });
    }
    if bytes.len() < payload {
        return Err(TrajError::Truncated {
            expected: payload,
            found: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(TrajError::TrailingBytes(bytes.len() - payload));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data = &bytes[HEADER..];
    let m = DMatrix::from_fn(rows, cols, |r, c| {
        let o = 8 * (r * cols + c);
        f64::from_le_bytes(data[o..o + 8].try_into().expect("8-byte slice"))
    });
    FeatureSeries::new(m, "", 1.0)
}

pub fn write_fmb(series: &FeatureSeries, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_fmb(series))?;
    Ok(())
}

pub fn read_fmb(path: impl AsRef<Path>) -> Result<FeatureSeries> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_fmb(&bytes)?.with_source(id))
}
