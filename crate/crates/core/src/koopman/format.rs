//! `KPM1` layout, little-endian:
//!
//! ```text
//! magic "KPM1"
//! u64 k, k0, k1, r, tau, n_pairs
//! f64 rank_epsilon
//! f64 mu0[k], mu1[k], c00[k*k], c01[k*k], c11[k*k],
//!     f0[k*k0], f1[k*k1], kbar[k0*k1], u[k0*r], s[r], s_raw[r], v[k1*r]
//! ```
//!
//! Matrices are row-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{CovarianceSet, KoopmanError, KoopmanModel, Result};

pub const KPM_MAGIC: &[u8; 4] = b"KPM1";

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn put_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_model(m: &KoopmanModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(KPM_MAGIC);
    for v in [m.cov.dim(), m.f0.ncols(), m.f1.ncols(), m.rank(), m.cov.tau, m.cov.n_pairs] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&m.rank_epsilon.to_le_bytes());
    put_vector(&mut out, &m.cov.mu0);
    put_vector(&mut out, &m.cov.mu1);
    for mat in [&m.cov.c00, &m.cov.c01, &m.cov.c11, &m.f0, &m.f1, &m.kbar, &m.u] {
        put_matrix(&mut out, mat);
    }
    put_vector(&mut out, &m.singular_values);
    put_vector(&mut out, &m.raw_singular_values);
    put_matrix(&mut out, &m.v);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| KoopmanError::Format("truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| KoopmanError::Format("dimension overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| KoopmanError::Format("size overflow".into()))?;
        let data = self.take(n)?;
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.matrix(n, 1)?.as_slice()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<KoopmanModel> {
    let mut rd = Reader { bytes, at: 0 };
    if rd.take(4)? != KPM_MAGIC {
        return Err(KoopmanError::Format("bad magic".into()));
    }
    let k = rd.u64()?;
    let k0 = rd.u64()?;
    let k1 = rd.u64()?;
    let r = rd.u64()?;
    let tau = rd.u64()?;
    let n_pairs = rd.u64()?;
    let rank_epsilon = rd.f64()?;
    let mu0 = rd.vector(k)?;
    let mu1 = rd.vector(k)?;
    let c00 = rd.matrix(k, k)?;
    let c01 = rd.matrix(k, k)?;
    let c11 = rd.matrix(k, k)?;
    let f0 = rd.matrix(k, k0)?;
    let f1 = rd.matrix(k, k1)?;
    let kbar = rd.matrix(k0, k1)?;
    let u = rd.matrix(k0, r)?;
    let singular_values = rd.vector(r)?;
    let raw_singular_values = rd.vector(r)?;
    let v = rd.matrix(k1, r)?;
    if rd.at != bytes.len() {
        return Err(KoopmanError::Format("trailing bytes".into()));
    }
    Ok(KoopmanModel {
        cov: CovarianceSet {
            mu0,
            mu1,
            c00,
            c01,
            c11,
            n_pairs,
            tau,
        },
        rank_epsilon,
        f0,
        f1,
        kbar,
        u,
        singular_values,
        raw_singular_values,
        v,
    })
}

pub fn write_model(m: &KoopmanModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(m))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<KoopmanModel> {
    decode_model(&std::fs::read(path)?)
}
