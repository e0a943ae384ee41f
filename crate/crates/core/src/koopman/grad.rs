//! Exact derivative of the VAMP-2 score with respect to paired batch data.
//!
//! With the symmetric truncated inverse root `S = Σ_r λ^{-1/2} v vᵀ` the
//! matrix `S0 C01 S1` has the same singular values as `K̄`. Its gradient is
//! `2 U diag(σ 1[σ ≤ 1]) Vᵀ`, which is pulled back through `S0`, `S1` by the
//! divided-difference formula for spectral functions and then through the
//! batch covariances to the rows of `x` and `y`.

use nalgebra::{DMatrix, DVector};

use super::{covariances_from_pairs, retained_rank, sorted_eigen, sorted_svd, KoopmanError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradient {
    /// `1 + Σ σ_i²` with clipped singular values.
    pub score: f64,
    /// `d score / d x`, same shape as `x`.
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
}

struct Spectral {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
}

fn spectral(m: &DMatrix<f64>, rank_epsilon: f64) -> Result<Spectral> {
    let (values, vectors) = sorted_eigen(m);
    let r = retained_rank(&values, rank_epsilon);
    if r == 0 {
        return Err(KoopmanError::RankZero);
    }
    let g = (0..values.len())
        .map(|i| if i < r { values[i].powf(-0.5) } else { 0.0 })
        .collect();
    let dg = (0..values.len())
        .map(|i| if i < r { -0.5 * values[i].powf(-1.5) } else { 0.0 })
        .collect();
    Ok(Spectral { values, vectors, g, dg })
}

impl Spectral {
    fn apply(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |r, c| self.vectors[(r, c)] * self.g[c]);
        scaled * self.vectors.transpose()
    }

    /// Pull a gradient on `S = g(C)` back to `C`.
    fn pullback(&self, grad_s: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.values.len();
        let sym = (grad_s + grad_s.transpose()) * 0.5;
        let mut inner = self.vectors.transpose() * sym * &self.vectors;
        let scale = self.values.amax().max(f64::MIN_POSITIVE);
        for i in 0..k {
            for j in 0..k {
                let (li, lj) = (self.values[i], self.values[j]);
                let gamma = if (li - lj).abs() > 1e-12 * scale {
                    (self.g[i] - self.g[j]) / (li - lj)
                } else {
                    0.5 * (self.dg[i] + self.dg[j])
                };
                inner[(i, j)] *= gamma;
            }
        }
        &self.vectors * inner * self.vectors.transpose()
    }
}

/// Score and gradient for a batch of pairs; rows of `x` are instantaneous
/// frames and rows of `y` the lagged partners. Covariances use the batch
/// means.
pub fn vamp2_score_and_grad(x: &DMatrix<f64>, y: &DMatrix<f64>, rank_epsilon: f64) -> Result<ScoreGradient> {
    let cov = covariances_from_pairs(x, y, 0)?;
    let n = x.nrows() as f64;
    let s0 = spectral(&cov.c00, rank_epsilon)?;
    let s1 = spectral(&cov.c11, rank_epsilon)?;
    let m0 = s0.apply();
    let m1 = s1.apply();
    let kt = &m0 * &cov.c01 * &m1;
    let (u, sv, v) = sorted_svd(&kt);
    let score = 1.0 + sv.iter().map(|s| s.clamp(0.0, 1.0).powi(2)).sum::<f64>();
    let weights = DVector::from_fn(sv.len(), |i, _| if sv[i] <= 1.0 { 2.0 * sv[i] } else { 0.0 });
    let gk = &u * DMatrix::from_diagonal(&weights) * v.transpose();

    let g01 = &m0 * &gk * &m1;
    let gs0 = &gk * &m1 * cov.c01.transpose();
    let gs1 = cov.c01.transpose() * &m0 * &gk;
    let g00 = s0.pullback(&gs0);
    let g11 = s1.pullback(&gs1);

    let mut xc = x.clone();
    let mut yc = y.clone();
    for c in 0..x.ncols() {
        xc.column_mut(c).add_scalar_mut(-cov.mu0[c]);
        yc.column_mut(c).add_scalar_mut(-cov.mu1[c]);
    }
    let grad_x = (&xc * (&g00 + g00.transpose()) + &yc * g01.transpose()) / n;
    let grad_y = (&yc * (&g11 + g11.transpose()) + &xc * &g01) / n;
    Ok(ScoreGradient { score, grad_x, grad_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{half_weighted, vamp2_score};
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let noise = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let y = &x * 0.7 + noise * 0.6;
        (x, y)
    }

    #[test]
    fn score_matches_the_model() {
        let (x, y) = data(64, 4, 1);
        let g = vamp2_score_and_grad(&x, &y, 1e-9).unwrap();
        let m = half_weighted(&covariances_from_pairs(&x, &y, 1).unwrap(), 1e-9).unwrap();
        assert!((g.score - vamp2_score(&m)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = data(64, 4, 2);
        let g = vamp2_score_and_grad(&x, &y, 1e-9).unwrap();
        let h = 1e-5;
        let f = |x: &DMatrix<f64>, y: &DMatrix<f64>| vamp2_score_and_grad(x, y, 1e-9).unwrap().score;
        let mut worst = 0.0f64;
        for (which, analytic) in [(0, &g.grad_x), (1, &g.grad_y)] {
            for i in 0..x.len() {
                let (mut xp, mut yp) = (x.clone(), y.clone());
                let (mut xm, mut ym) = (x.clone(), y.clone());
                if which == 0 {
                    xp[i] += h;
                    xm[i] -= h;
                } else {
                    yp[i] += h;
                    ym[i] -= h;
                }
                let fd = (f(&xp, &yp) - f(&xm, &ym)) / (2.0 * h);
                let a = analytic[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn rank_deficient_batch_still_differentiates() {
        let (x0, y0) = data(40, 3, 3);
        // duplicate a column: C00 and C11 have a null direction
        let x = DMatrix::from_fn(40, 4, |r, c| x0[(r, c.min(2))]);
        let y = DMatrix::from_fn(40, 4, |r, c| y0[(r, c.min(2))]);
        let g = vamp2_score_and_grad(&x, &y, 1e-8).unwrap();
        assert!(g.grad_x.iter().all(|v| v.is_finite()));
        let reduced = vamp2_score_and_grad(&x0, &y0, 1e-8).unwrap();
        assert!((g.score - reduced.score).abs() < 1e-10);
    }
}
