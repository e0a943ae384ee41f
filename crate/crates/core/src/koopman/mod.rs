//! Time-lagged covariance estimation, truncated inverse square roots,
//! Koopman matrices and the VAMP-2 score.
//!
//! Pairs are `(t, t + τ)` for `t = 0 .. T - τ - 1` inside each series, so a
//! series of length `T` contributes exactly `T - τ` pairs. `μ0` averages
//! the instantaneous frames and `μ1` the lagged frames. Means and
//! covariances are normalized by the total pair count.
//!
//! The half-weighted matrix `K̄ = C00^{-1/2} C01 C11^{-1/2}` is formed from
//! rank-truncated factors `F = V_r diag(λ_r^{-1/2})`, so `K̄` is
//! `k0 x k1` where `k0`, `k1` are the retained ranks. Singular values are
//! clipped into `[0, 1]`; the unclipped values are kept for diagnostics.

mod format;
mod grad;

pub use format::{decode_model, encode_model, read_model, write_model, KPM_MAGIC};
pub use grad::{vamp2_score_and_grad, ScoreGradient};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajio::FeatureSeries;

pub const DEFAULT_RANK_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("lag {tau} needs series longer than {tau} frames, got {len}")]
    InvalidLag { tau: usize, len: usize },
    #[error("no series given")]
    Empty,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("no eigenvalue above the truncation threshold")]
    RankZero,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested {requested} components but only {rank} are available")]
    RankTooSmall { requested: usize, rank: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KoopmanError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub tau: usize,
}

impl LagSpec {
    pub fn new(tau: usize) -> Self {
        Self { tau }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSet {
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
    pub c00: DMatrix<f64>,
    pub c01: DMatrix<f64>,
    pub c11: DMatrix<f64>,
    pub n_pairs: usize,
    pub tau: usize,
}

impl CovarianceSet {
    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n)
}

fn centered(m: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for c in 0..out.ncols() {
        out.column_mut(c).add_scalar_mut(-mu[c]);
    }
    out
}

/// Covariances from paired rows: row `t` of `x` is the instantaneous frame
/// and row `t` of `y` its lagged partner. `tau` is stored as given.
pub fn covariances_from_pairs(x: &DMatrix<f64>, y: &DMatrix<f64>, tau: usize) -> Result<CovarianceSet> {
    if x.shape() != y.shape() {
        return Err(KoopmanError::DimensionMismatch {
            expected: x.ncols(),
            found: y.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(KoopmanError::Empty);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(KoopmanError::NonFinite);
    }
    let n = x.nrows() as f64;
    let mu0 = column_means(x);
    let mu1 = column_means(y);
    let xc = centered(x, &mu0);
    let yc = centered(y, &mu1);
    let c00 = symmetrize(&(xc.transpose() * &xc / n));
    let c11 = symmetrize(&(yc.transpose() * &yc / n));
    let c01 = xc.transpose() * &yc / n;
    Ok(CovarianceSet {
        mu0,
        mu1,
        c00,
        c01,
        c11,
        n_pairs: x.nrows(),
        tau,
    })
}

/// Stack the instantaneous and lagged frames of all series.
pub fn paired_frames(series: &[FeatureSeries], lag: LagSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = series.first().ok_or(KoopmanError::Empty)?;
    let k = first.dim();
    let tau = lag.tau;
    let mut n = 0;
    for s in series {
        if s.dim() != k {
            return Err(KoopmanError::DimensionMismatch {
                expected: k,
                found: s.dim(),
            });
        }
        if tau == 0 || s.len() <= tau {
            return Err(KoopmanError::InvalidLag { tau, len: s.len() });
        }
        n += s.len() - tau;
    }
    let mut x = DMatrix::zeros(n, k);
    let mut y = DMatrix::zeros(n, k);
    let mut at = 0;
    for s in series {
        let m = s.len() - tau;
        x.rows_mut(at, m).copy_from(&s.values().rows(0, m));
        y.rows_mut(at, m).copy_from(&s.values().rows(tau, m));
        at += m;
    }
    Ok((x, y))
}

pub fn estimate_covariances(series: &[FeatureSeries], lag: LagSpec) -> Result<CovarianceSet> {
    let (x, y) = paired_frames(series, lag)?;
    covariances_from_pairs(&x, &y, lag.tau)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(KoopmanError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(KoopmanError::NotSymmetric(asym));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(KoopmanError::NonFinite);
    }
    Ok(())
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(order.len(), |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Number of leading eigenvalues kept by the relative threshold.
pub(crate) fn retained_rank(values: &DVector<f64>, rank_epsilon: f64) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return 0;
    }
    values.iter().filter(|&&l| l > 0.0 && l >= rank_epsilon * max).count()
}

/// Truncated half-inverse `F = V_r diag(λ_r^{-1/2})` with `Fᵀ m F = I`.
/// Columns follow decreasing eigenvalue. Returns `F` and the kept rank.
pub fn inv_sqrt(m: &DMatrix<f64>, rank_epsilon: f64) -> Result<(DMatrix<f64>, usize)> {
    check_symmetric(m)?;
    let (values, vectors) = sorted_eigen(m);
    let r = retained_rank(&values, rank_epsilon);
    if r == 0 {
        return Err(KoopmanError::RankZero);
    }
    let mut f = vectors.columns(0, r).into_owned();
    for c in 0..r {
        f.column_mut(c).scale_mut(1.0 / values[c].sqrt());
    }
    Ok((f, r))
}

/// Truncated Moore-Penrose inverse of a symmetric PSD matrix.
pub fn pinv_sym(m: &DMatrix<f64>, rank_epsilon: f64) -> Result<DMatrix<f64>> {
    let (f, _) = inv_sqrt(m, rank_epsilon)?;
    Ok(&f * f.transpose())
}

/// `K = C00^+ C01`.
pub fn koopman_matrix(cov: &CovarianceSet, rank_epsilon: f64) -> Result<DMatrix<f64>> {
    Ok(pinv_sym(&cov.c00, rank_epsilon)? * &cov.c01)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    pub cov: CovarianceSet,
    pub rank_epsilon: f64,
    /// `k x k0` factor of `C00^{-1/2}`.
    pub f0: DMatrix<f64>,
    /// `k x k1` factor of `C11^{-1/2}`.
    pub f1: DMatrix<f64>,
    pub kbar: DMatrix<f64>,
    /// `k0 x r`
    pub u: DMatrix<f64>,
    /// Clipped to `[0, 1]`, descending.
    pub singular_values: DVector<f64>,
    /// Before clipping.
    pub raw_singular_values: DVector<f64>,
    /// `k1 x r`
    pub v: DMatrix<f64>,
}

impl KoopmanModel {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Thin SVD with descending singular values and the sign convention that
/// each left vector's largest-magnitude entry is positive.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u0 = svd.u.expect("requested u");
    let v0 = svd.v_t.expect("requested v").transpose();
    let s0 = svd.singular_values;
    let mut order: Vec<usize> = (0..s0.len()).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = DMatrix::from_fn(u0.nrows(), order.len(), |r, c| u0[(r, order[c])]);
    let mut v = DMatrix::from_fn(v0.nrows(), order.len(), |r, c| v0[(r, order[c])]);
    let s = DVector::from_fn(order.len(), |i, _| s0[order[i]]);
    for c in 0..u.ncols() {
        let col = u.column(c);
        let mut best = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
    (u, s, v)
}

pub fn half_weighted(cov: &CovarianceSet, rank_epsilon: f64) -> Result<KoopmanModel> {
    let (f0, _) = inv_sqrt(&cov.c00, rank_epsilon)?;
    let (f1, _) = inv_sqrt(&cov.c11, rank_epsilon)?;
    let kbar = f0.transpose() * &cov.c01 * &f1;
    let (u, raw, v) = sorted_svd(&kbar);
    let clipped = raw.map(|s| s.clamp(0.0, 1.0));
    Ok(KoopmanModel {
        cov: cov.clone(),
        rank_epsilon,
        f0,
        f1,
        kbar,
        u,
        singular_values: clipped,
        raw_singular_values: raw,
        v,
    })
}

/// `1 + Σ σ_i²` over the clipped singular values.
pub fn vamp2_score(model: &KoopmanModel) -> f64 {
    1.0 + vamp2_raw(model)
}

/// `Σ σ_i²` without the constant mode.
pub fn vamp2_raw(model: &KoopmanModel) -> f64 {
    model.singular_values.iter().map(|s| s * s).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tau: usize,
    pub n_pairs: usize,
    pub feature_dim: usize,
    pub rank: usize,
    pub score: f64,
    pub raw_score: f64,
    pub singular_values: Vec<f64>,
    pub unclipped_singular_values: Vec<f64>,
}

pub fn score_report(model: &KoopmanModel) -> ScoreReport {
    ScoreReport {
        tau: model.cov.tau,
        n_pairs: model.cov.n_pairs,
        feature_dim: model.cov.dim(),
        rank: model.rank(),
        score: vamp2_score(model),
        raw_score: vamp2_raw(model),
        singular_values: model.singular_values.iter().copied().collect(),
        unclipped_singular_values: model.raw_singular_values.iter().copied().collect(),
    }
}

/// `ψ(t) = Uᵀ F0ᵀ (χ(t) - μ0)` for every row of `frames`.
pub fn project_left(model: &KoopmanModel, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    project(frames, &model.cov.mu0, &(&model.f0 * &model.u))
}

/// `φ(t) = Vᵀ F1ᵀ (χ(t) - μ1)` for every row of `frames`.
pub fn project_right(model: &KoopmanModel, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    project(frames, &model.cov.mu1, &(&model.f1 * &model.v))
}

fn project(frames: &DMatrix<f64>, mu: &DVector<f64>, map: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if frames.ncols() != mu.len() {
        return Err(KoopmanError::DimensionMismatch {
            expected: mu.len(),
            found: frames.ncols(),
        });
    }
    Ok(centered(frames, mu) * map)
}

/// Singular functions over one series: `psi` on frames `0 .. T - τ` and
/// `phi` on frames `τ .. T`, row `t` of each belonging to the same pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSeries {
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub psi_frames: std::ops::Range<usize>,
    pub phi_frames: std::ops::Range<usize>,
}

pub fn singular_functions(model: &KoopmanModel, series: &FeatureSeries) -> Result<ProjectedSeries> {
    let tau = model.cov.tau;
    if series.len() <= tau {
        return Err(KoopmanError::InvalidLag { tau, len: series.len() });
    }
    let m = series.len() - tau;
    let psi = project_left(model, &series.values().rows(0, m).into_owned())?;
    let phi = project_right(model, &series.values().rows(tau, m).into_owned())?;
    Ok(ProjectedSeries {
        psi,
        phi,
        psi_frames: 0..m,
        phi_frames: tau..series.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearVamp {
    pub model: KoopmanModel,
    pub d: usize,
    /// `1 + Σ_{i<d} σ_i²`
    pub score: f64,
    /// `k x d` map applied to centered features.
    pub projection: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl LinearVamp {
    pub fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        project(frames, &self.mean, &self.projection)
    }
}

/// Closed-form linear VAMP: the top `d` left singular functions.
pub fn linear_vamp(series: &[FeatureSeries], lag: LagSpec, d: usize, rank_epsilon: f64) -> Result<LinearVamp> {
    let cov = estimate_covariances(series, lag)?;
    let model = half_weighted(&cov, rank_epsilon)?;
    if d == 0 || d > model.rank() {
        return Err(KoopmanError::RankTooSmall {
            requested: d,
            rank: model.rank(),
        });
    }
    let score = 1.0 + model.singular_values.rows(0, d).iter().map(|s| s * s).sum::<f64>();
    let projection = &model.f0 * model.u.columns(0, d);
    Ok(LinearVamp {
        mean: model.cov.mu0.clone(),
        d,
        score,
        projection,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::trajio::{sample_markov, MarkovSpec};
    use rand_distr::{Distribution, StandardNormal};

    fn series(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> FeatureSeries {
        FeatureSeries::new(DMatrix::from_fn(rows, cols, f), "t", 1.0).unwrap()
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn constant_series_has_zero_covariance() {
        let cov = estimate_covariances(&[series(50, 2, |_, c| c as f64 + 3.0)], LagSpec::new(2)).unwrap();
        assert_eq!(cov.c00.amax(), 0.0);
        assert_eq!(cov.c01.amax(), 0.0);
        assert_eq!(cov.n_pairs, 48);
        assert!(matches!(half_weighted(&cov, 1e-6), Err(KoopmanError::RankZero)));
    }

    #[test]
    fn alternating_series() {
        let s = series(10_000, 1, |t, _| if t % 2 == 0 { 1.0 } else { -1.0 });
        let cov = estimate_covariances(&[s], LagSpec::new(1)).unwrap();
        // 9999 pairs, 5000 instantaneous +1 frames: mean 1/9999
        let m0 = 1.0 / 9999.0;
        assert!((cov.mu0[0] - m0).abs() < 1e-15);
        assert!((cov.mu1[0] + m0).abs() < 1e-15);
        assert!((cov.c00[(0, 0)] - (1.0 - m0 * m0)).abs() < 1e-12);
        assert!((cov.c01[(0, 0)] + 1.0).abs() < 1e-3);
        let k = koopman_matrix(&cov, 1e-6).unwrap();
        assert!((k[(0, 0)] + 1.0).abs() < 1e-3);
        let m = half_weighted(&cov, 1e-6).unwrap();
        assert!((m.singular_values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_pairs_are_excluded() {
        let a = gaussian(30, 2, 1);
        let b = gaussian(20, 2, 2);
        let sa = FeatureSeries::new(a.clone(), "a", 1.0).unwrap();
        let sb = FeatureSeries::new(b.clone(), "b", 1.0).unwrap();
        let tau = 3;
        let joint = estimate_covariances(&[sa, sb], LagSpec::new(tau)).unwrap();
        assert_eq!(joint.n_pairs, 27 + 17);
        // explicit pair list
        let mut pairs = Vec::new();
        for t in 0..27 {
            pairs.push((a.row(t).into_owned(), a.row(t + tau).into_owned()));
        }
        for t in 0..17 {
            pairs.push((b.row(t).into_owned(), b.row(t + tau).into_owned()));
        }
        let n = pairs.len() as f64;
        let mu0 = pairs.iter().fold(nalgebra::RowDVector::zeros(2), |acc, p| acc + &p.0) / n;
        let mu1 = pairs.iter().fold(nalgebra::RowDVector::zeros(2), |acc, p| acc + &p.1) / n;
        let c01 = pairs
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, p| acc + (&p.0 - &mu0).transpose() * (&p.1 - &mu1))
            / n;
        assert!((c01 - &joint.c01).amax() < 1e-14);
        // naive concatenation includes 3 extra cross-boundary pairs
        let mut cat = DMatrix::zeros(50, 2);
        cat.rows_mut(0, 30).copy_from(&a);
        cat.rows_mut(30, 20).copy_from(&b);
        let naive = estimate_covariances(&[FeatureSeries::new(cat, "c", 1.0).unwrap()], LagSpec::new(tau)).unwrap();
        assert_eq!(naive.n_pairs, joint.n_pairs + tau);
        assert!((naive.c01 - &joint.c01).amax() > 1e-6);
    }

    #[test]
    fn series_shorter_than_lag() {
        let s = series(3, 1, |t, _| t as f64);
        assert!(matches!(
            estimate_covariances(&[s], LagSpec::new(3)),
            Err(KoopmanError::InvalidLag { tau: 3, len: 3 })
        ));
    }

    #[test]
    fn inv_sqrt_examples() {
        let (f, r) = inv_sqrt(&DMatrix::identity(3, 3), 1e-6).unwrap();
        assert_eq!(r, 3);
        assert!((&f.transpose() * &f - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        let (f, _) = inv_sqrt(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])), 1e-6).unwrap();
        // descending eigenvalues: 9 first
        assert!((f[(1, 0)].abs() - 1.0 / 3.0).abs() < 1e-15);
        assert!((f[(0, 1)].abs() - 0.5).abs() < 1e-15);
        assert!(matches!(inv_sqrt(&DMatrix::zeros(2, 2), 1e-6), Err(KoopmanError::RankZero)));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(inv_sqrt(&bad, 1e-6), Err(KoopmanError::NotSymmetric(_))));
    }

    #[test]
    fn inv_sqrt_truncates_rank_deficient() {
        let a = gaussian(2, 5, 4);
        let m = a.transpose() * a;
        let (f, r) = inv_sqrt(&m, 1e-6).unwrap();
        assert_eq!(r, 2);
        assert!((f.transpose() * m * f - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn koopman_identity_when_c01_equals_c00() {
        let a = gaussian(10, 3, 5);
        let c = a.transpose() * &a / 10.0;
        let cov = CovarianceSet {
            mu0: DVector::zeros(3),
            mu1: DVector::zeros(3),
            c00: c.clone(),
            c01: c.clone(),
            c11: c,
            n_pairs: 10,
            tau: 1,
        };
        let k = koopman_matrix(&cov, 1e-9).unwrap();
        assert!((k - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        let zero = CovarianceSet {
            c01: DMatrix::zeros(3, 3),
            ..cov
        };
        assert_eq!(koopman_matrix(&zero, 1e-9).unwrap().amax(), 0.0);
    }

    #[test]
    fn identity_dynamics_reach_the_ceiling() {
        // χ(t + τ) = χ(t): constant-in-time coordinates drawn per series
        let x = gaussian(400, 3, 6);
        let cov = covariances_from_pairs(&x, &x, 1).unwrap();
        let m = half_weighted(&cov, 1e-6).unwrap();
        for s in m.singular_values.iter() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!((vamp2_score(&m) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn svd_reconstructs_kbar_and_signs_are_fixed() {
        let x = gaussian(200, 4, 7);
        let y = &x * 0.6 + gaussian(200, 4, 8);
        let m = half_weighted(&covariances_from_pairs(&x, &y, 1).unwrap(), 1e-6).unwrap();
        let rec = &m.u * DMatrix::from_diagonal(&m.raw_singular_values) * m.v.transpose();
        assert!((rec - &m.kbar).amax() < 1e-10);
        for w in m.raw_singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for c in 0..m.u.ncols() {
            let col = m.u.column(c);
            let big = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn iid_noise_scores_near_one() {
        let x = gaussian(1_000_000, 3, 9);
        let s = FeatureSeries::new(x, "n", 1.0).unwrap();
        let m = half_weighted(&estimate_covariances(&[s], LagSpec::new(1)).unwrap(), 1e-6).unwrap();
        assert!(m.singular_values.iter().all(|&s| s <= 0.01));
        assert!((vamp2_score(&m) - 1.0).abs() < 0.05);
    }

    #[test]
    fn markov_chain_oracle_and_separation() {
        let spec = MarkovSpec::two_state(0.1, 0.1, 1_000_000, 3);
        let s = sample_markov(&spec).unwrap();
        let lv = linear_vamp(std::slice::from_ref(&s), LagSpec::new(1), 1, DEFAULT_RANK_EPSILON).unwrap();
        // eigenvalue 1 - p01 - p10 of the transition matrix
        let lambda: f64 = 1.0 - 0.1 - 0.1;
        assert!((lv.score - (1.0 + lambda * lambda)).abs() < 0.01, "{}", lv.score);
        assert!((vamp2_score(&lv.model) - lv.score).abs() < 1e-12);
        let proj = singular_functions(&lv.model, &s).unwrap();
        let states = crate::trajio::sample_markov_states(&spec).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for t in proj.psi_frames.clone() {
            if states[t] == 0 { a.push(proj.psi[(t, 0)]) } else { b.push(proj.psi[(t, 0)]) }
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let gap = (a[0] - b[0]).abs();
        assert!(var(&a) < 1e-20 && var(&b) < 1e-20 && gap > 1.0);
    }

    #[test]
    fn estimator_error_shrinks_with_length() {
        let err = |len: usize| {
            let mut total = 0.0;
            for seed in 0..8 {
                let s = sample_markov(&MarkovSpec::two_state(0.1, 0.1, len, seed)).unwrap();
                let m = half_weighted(&estimate_covariances(&[s], LagSpec::new(1)).unwrap(), 1e-6).unwrap();
                total += (m.singular_values[0] - 0.8).abs();
            }
            total / 8.0
        };
        let short = err(10_000);
        let long = err(640_000);
        // 64x the data: O(1/sqrt T) predicts an 8x drop
        assert!(long < short / 3.0, "{short} {long}");
        assert!(short < 0.05);
    }

    #[test]
    fn psi_is_whitened() {
        let x = gaussian(5000, 3, 10);
        let s = FeatureSeries::new(&x * 2.0 + gaussian(5000, 3, 11) * 0.5, "w", 1.0).unwrap();
        let m = half_weighted(&estimate_covariances(std::slice::from_ref(&s), LagSpec::new(2)).unwrap(), 1e-6).unwrap();
        let p = singular_functions(&m, &s).unwrap();
        let n = p.psi.nrows() as f64;
        let c = p.psi.transpose() * &p.psi / n;
        assert!((c - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn linear_vamp_limits() {
        let x = gaussian(300, 3, 12);
        let s = FeatureSeries::new(x, "x", 1.0).unwrap();
        let full = linear_vamp(std::slice::from_ref(&s), LagSpec::new(1), 3, 1e-6).unwrap();
        assert!((full.score - vamp2_score(&full.model)).abs() < 1e-14);
        assert!(matches!(
            linear_vamp(&[s], LagSpec::new(1), 4, 1e-6),
            Err(KoopmanError::RankTooSmall { requested: 4, rank: 3 })
        ));
    }

    fn ar_process(len: usize, seed: u64) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, -0.2, 0.5, 0.1, 0.0, 0.3, 0.2]);
        let noise = gaussian(len, 3, seed);
        let mut x = DMatrix::zeros(len, 3);
        for t in 1..len {
            let next = &a * x.row(t - 1).transpose() + noise.row(t).transpose();
            x.row_mut(t).copy_from(&next.transpose());
        }
        x
    }

    #[test]
    fn projection_is_idempotent_on_reversible_data() {
        // a trajectory together with its time reversal has symmetric C01 and C00 = C11
        let x = ar_process(4000, 13);
        let rev = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(x.nrows() - 1 - r, c)]);
        let set = [FeatureSeries::new(x, "f", 1.0).unwrap(), FeatureSeries::new(rev, "r", 1.0).unwrap()];
        let lv = linear_vamp(&set, LagSpec::new(1), 2, 1e-9).unwrap();
        let projected: Vec<FeatureSeries> = set
            .iter()
            .map(|s| FeatureSeries::new(lv.transform(s.values()).unwrap(), "p", 1.0).unwrap())
            .collect();
        let again = half_weighted(&estimate_covariances(&projected, LagSpec::new(1)).unwrap(), 1e-9).unwrap();
        for i in 0..2 {
            assert!((again.raw_singular_values[i] - lv.model.raw_singular_values[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn full_rank_projection_is_idempotent() {
        let s = FeatureSeries::new(ar_process(3000, 14), "a", 1.0).unwrap();
        let lv = linear_vamp(std::slice::from_ref(&s), LagSpec::new(2), 3, 1e-9).unwrap();
        let p = FeatureSeries::new(lv.transform(s.values()).unwrap(), "p", 1.0).unwrap();
        let again = half_weighted(&estimate_covariances(&[p], LagSpec::new(2)).unwrap(), 1e-9).unwrap();
        assert!((again.raw_singular_values - &lv.model.raw_singular_values).amax() < 1e-6);
    }
}
