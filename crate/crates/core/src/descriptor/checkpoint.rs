//! `GDM1` layout, all little-endian:
//!
//! ```text
//! magic "GDM1"
//! u64 width, depth, n_rbf, n_elements
//! f64 cutoff
//! f64 weights, tensor by tensor in ParamSet order, each row-major
//! ```

use std::path::Path;

use super::{DescriptorConfig, DescriptorError, DescriptorModel, Result};
use crate::nn::ParamSet;

pub const GDM_MAGIC: &[u8; 4] = b"GDM1";

const HEADER: usize = 4 + 4 * 8 + 8;

pub fn encode_checkpoint(model: &DescriptorModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(HEADER + 8 * model.n_params());
    out.extend_from_slice(GDM_MAGIC);
    for v in [c.width, c.depth, c.n_rbf, c.n_elements] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.cutoff.to_le_bytes());
    for v in model.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DescriptorModel> {
    if bytes.len() < HEADER {
        return Err(DescriptorError::Checkpoint(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != GDM_MAGIC {
        return Err(DescriptorError::Checkpoint(format!("bad magic {:?}", &bytes[..4])));
    }
    let dims: Vec<usize> = (0..4)
        .map(|k| usize::try_from(u64_at(bytes, 4 + 8 * k)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| DescriptorError::Checkpoint("dimension overflows usize".into()))?;
    let cutoff = f64::from_le_bytes(bytes[36..44].try_into().expect("8 bytes"));
    let config = DescriptorConfig {
        width: dims[0],
        depth: dims[1],
        n_rbf: dims[2],
        n_elements: dims[3],
        cutoff,
    };
    let n = super::count_parameters(&config)?;
    let expected = n
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| DescriptorError::Checkpoint("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(DescriptorError::Checkpoint(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = DescriptorModel::zeros(config)?;
    model.assign_flat(&flat);
    Ok(model)
}

pub fn write_checkpoint(model: &DescriptorModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DescriptorModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = DescriptorModel::init(DescriptorConfig::new(7, 3, 4.25), 21).unwrap();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"GDM1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 7);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = DescriptorModel::init(DescriptorConfig::new(3, 1, 2.0), 1).unwrap();
        let mut bytes = encode_checkpoint(&m);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_checkpoint(&bytes).is_err());
        bytes.pop();
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
