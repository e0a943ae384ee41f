//! Per-frame token mixers and their reverse passes.
//!
//! Tokens arrive as an `m x w` matrix `X`.
//!
//! ```text
//! sum:            z = Σ_t X[t]
//! mlp_mixer:      X1 = X + U2 silu(U1 X + b1) + b2      (mixes across tokens)
//!                 X2 = X1 + silu(X1 V1 + c1) V2 + c2    (mixes across channels)
//!                 z  = mean_t X2[t]
//! self_attention: per head P = softmax(Q Kᵀ / sqrt(dh)), O = P V
//!                 X1 = X + concat(O) Wo,  z = mean_t X1[t]
//! ```

use nalgebra::{DMatrix, DVector};

use crate::nn::{silu, silu_grad};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpMixerParams {
    /// `token_hidden x m`
    pub u1: DMatrix<f64>,
    /// `token_hidden x 1`
    pub b1: DMatrix<f64>,
    /// `m x token_hidden`
    pub u2: DMatrix<f64>,
    /// `m x 1`, one bias per token position
    pub b2: DMatrix<f64>,
    /// `w x channel_hidden`
    pub v1: DMatrix<f64>,
    /// `1 x channel_hidden`
    pub c1: DMatrix<f64>,
    /// `channel_hidden x w`
    pub v2: DMatrix<f64>,
    /// `1 x w`
    pub c2: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub n_heads: usize,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MixerParams {
    Sum,
    MlpMixer(MlpMixerParams),
    SelfAttention(AttentionParams),
}

impl MixerParams {
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        match self {
            MixerParams::Sum => vec![],
            MixerParams::MlpMixer(p) => vec![&p.u1, &p.b1, &p.u2, &p.b2, &p.v1, &p.c1, &p.v2, &p.c2],
            MixerParams::SelfAttention(p) => vec![&p.wq, &p.wk, &p.wv, &p.wo],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        match self {
            MixerParams::Sum => vec![],
            MixerParams::MlpMixer(p) => vec![
                &mut p.u1, &mut p.b1, &mut p.u2, &mut p.b2, &mut p.v1, &mut p.c1, &mut p.v2, &mut p.c2,
            ],
            MixerParams::SelfAttention(p) => vec![&mut p.wq, &mut p.wk, &mut p.wv, &mut p.wo],
        }
    }
}

pub(crate) enum MixCache {
    Sum,
    Mlp {
        x: DMatrix<f64>,
        a: DMatrix<f64>,
        sa: DMatrix<f64>,
        x1: DMatrix<f64>,
        b: DMatrix<f64>,
        sb: DMatrix<f64>,
    },
    Attention {
        x: DMatrix<f64>,
        q: DMatrix<f64>,
        k: DMatrix<f64>,
        v: DMatrix<f64>,
        probs: Vec<DMatrix<f64>>,
        o: DMatrix<f64>,
    },
}

fn broadcast_cols(m: &mut DMatrix<f64>, col: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        m.row_mut(r).add_scalar_mut(col[(r, 0)]);
    }
}

fn broadcast_rows(m: &mut DMatrix<f64>, row: &DMatrix<f64>) {
    for c in 0..m.ncols() {
        m.column_mut(c).add_scalar_mut(row[(0, c)]);
    }
}

fn mean_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n)
}

fn softmax_rows(s: &mut DMatrix<f64>) {
    for r in 0..s.nrows() {
        let max = s.row(r).max();
        let mut row = s.row_mut(r);
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub(crate) fn mix_forward(params: &MixerParams, x: DMatrix<f64>) -> (DVector<f64>, MixCache) {
    match params {
        MixerParams::Sum => {
            let z = DVector::from_fn(x.ncols(), |c, _| x.column(c).sum());
            (z, MixCache::Sum)
        }
        MixerParams::MlpMixer(p) => {
            let mut a = &p.u1 * &x;
            broadcast_cols(&mut a, &p.b1);
            let sa = a.map(silu);
            let mut x1 = &x + &p.u2 * &sa;
            broadcast_cols(&mut x1, &p.b2);
            let mut b = &x1 * &p.v1;
            broadcast_rows(&mut b, &p.c1);
            let sb = b.map(silu);
            let mut x2 = &x1 + &sb * &p.v2;
            broadcast_rows(&mut x2, &p.c2);
            (mean_rows(&x2), MixCache::Mlp { x, a, sa, x1, b, sb })
        }
        MixerParams::SelfAttention(p) => {
            let q = &x * &p.wq;
            let k = &x * &p.wk;
            let v = &x * &p.wv;
            let w = x.ncols();
            let dh = w / p.n_heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut o = DMatrix::zeros(x.nrows(), w);
            let mut probs = Vec::with_capacity(p.n_heads);
            for h in 0..p.n_heads {
                let qh = q.columns(h * dh, dh);
                let kh = k.columns(h * dh, dh);
                let mut s = qh * kh.transpose() * scale;
                softmax_rows(&mut s);
                o.columns_mut(h * dh, dh).copy_from(&(&s * v.columns(h * dh, dh)));
                probs.push(s);
            }
            let x1 = &x + &o * &p.wo;
            (mean_rows(&x1), MixCache::Attention { x, q, k, v, probs, o })
        }
    }
}

/// Accumulate parameter gradients for one frame given `dz`.
pub(crate) fn mix_backward(params: &MixerParams, cache: &MixCache, dz: &DVector<f64>, grad: &mut MixerParams) {
    match (params, cache, grad) {
        (MixerParams::Sum, MixCache::Sum, MixerParams::Sum) => {}
        (MixerParams::MlpMixer(p), MixCache::Mlp { x, a, sa, x1, b, sb }, MixerParams::MlpMixer(g)) => {
            let m = x.nrows();
            let dx2 = DMatrix::from_fn(m, dz.len(), |_, c| dz[c] / m as f64);
            g.v2 += sb.transpose() * &dx2;
            g.c2 += DMatrix::from_fn(1, dz.len(), |_, c| dx2.column(c).sum());
            let db = (&dx2 * p.v2.transpose()).zip_map(b, |d, bv| d * silu_grad(bv));
            g.v1 += x1.transpose() * &db;
            g.c1 += DMatrix::from_fn(1, db.ncols(), |_, c| db.column(c).sum());
            let dx1 = &dx2 + &db * p.v1.transpose();
            g.u2 += &dx1 * sa.transpose();
            g.b2 += DMatrix::from_fn(m, 1, |r, _| dx1.row(r).sum());
            let da = (p.u2.transpose() * &dx1).zip_map(a, |d, av| d * silu_grad(av));
            g.u1 += &da * x.transpose();
            g.b1 += DMatrix::from_fn(da.nrows(), 1, |r, _| da.row(r).sum());
        }
        (MixerParams::SelfAttention(p), MixCache::Attention { x, q, k, v, probs, o }, MixerParams::SelfAttention(g)) => {
            let m = x.nrows();
            let w = x.ncols();
            let dh = w / p.n_heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let dy = DMatrix::from_fn(m, w, |_, c| dz[c] / m as f64);
            g.wo += o.transpose() * &dy;
            let d_o = &dy * p.wo.transpose();
            let mut dq = DMatrix::zeros(m, w);
            let mut dk = DMatrix::zeros(m, w);
            let mut dv = DMatrix::zeros(m, w);
            for (h, pr) in probs.iter().enumerate() {
                let doh = d_o.columns(h * dh, dh);
                let dp = doh * v.columns(h * dh, dh).transpose();
                dv.columns_mut(h * dh, dh).copy_from(&(pr.transpose() * doh));
                let mut ds = pr.component_mul(&dp);
                for r in 0..m {
                    let dot = ds.row(r).sum();
                    for c in 0..m {
                        ds[(r, c)] -= pr[(r, c)] * dot;
                    }
                }
                ds *= scale;
                dq.columns_mut(h * dh, dh).copy_from(&(&ds * k.columns(h * dh, dh)));
                dk.columns_mut(h * dh, dh).copy_from(&(ds.transpose() * q.columns(h * dh, dh)));
            }
            g.wq += x.transpose() * dq;
            g.wk += x.transpose() * dk;
            g.wv += x.transpose() * dv;
        }
        _ => unreachable!("gradient layout matches the model"),
    }
}
