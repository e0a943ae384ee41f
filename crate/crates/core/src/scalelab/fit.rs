//! Power-law fits `L(N) = a N^{-α} + c` in log-residual space.
//!
//! The floored fit scans a coarse `(α, c)` grid, takes `log a` as the mean
//! of `log(L - c) + α log N` at each grid point, and refines the best point
//! with Levenberg-Marquardt on `(log a, α, c)`. The pure fit (`c = 0`) is
//! ordinary least squares on `log L` against `log N`.

use serde::{Deserialize, Serialize};

use super::{Result, ScaleError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub alpha: f64,
    pub c: f64,
    /// RMS of `log L - log L_fit` over the fitted points.
    pub residual: f64,
    pub n_points: usize,
    pub fitted_range: (f64, f64),
    pub floored: bool,
}

impl PowerLawFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.a * n.powf(-self.alpha) + self.c
    }
}

fn rms_log_residual(points: &[(f64, f64)], log_a: f64, alpha: f64, c: f64) -> f64 {
    let a = log_a.exp();
    let ss: f64 = points
        .iter()
        .map(|&(n, l)| (l.ln() - (a * n.powf(-alpha) + c).ln()).powi(2))
        .sum();
    (ss / points.len() as f64).sqrt()
}

fn select(points: &[(f64, f64)], range: Option<(f64, f64)>) -> Result<Vec<(f64, f64)>> {
    for &(n, l) in points {
        if !(n > 0.0 && l > 0.0 && n.is_finite() && l.is_finite()) {
            return Err(ScaleError::InvalidRecord(format!("N = {n}, L = {l}")));
        }
    }
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(n, _)| range.is_none_or(|(lo, hi)| n >= lo && n <= hi))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts)
}

/// Fit `L = a N^{-α} + c`. With `floored = false`, `c` is fixed at 0 and two
/// points suffice; otherwise at least three are needed. `range` restricts
/// the fit to `N` inside `[lo, hi]`.
pub fn fit_power_law(points: &[(f64, f64)], range: Option<(f64, f64)>, floored: bool) -> Result<PowerLawFit> {
    let pts = select(points, range)?;
    let need = if floored { 3 } else { 2 };
    if pts.len() < need {
        return Err(ScaleError::InsufficientPoints { found: pts.len(), need });
    }
    let fitted_range = (pts[0].0, pts[pts.len() - 1].0);
    let (log_a, alpha, c) = if floored { floored_fit(&pts)? } else { pure_fit(&pts) };
    let residual = rms_log_residual(&pts, log_a, alpha, c);
    Ok(PowerLawFit {
        a: log_a.exp(),
        alpha,
        c,
        residual,
        n_points: pts.len(),
        fitted_range,
        floored,
    })
}

fn pure_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    // α >= 0: a rising curve is reported as flat
    let alpha = (-slope).max(0.0);
    let log_a = my + alpha * mx;
    (log_a, alpha, 0.0)
}

fn floored_fit(pts: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let l_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let log_a_for = |alpha: f64, c: f64| {
        pts.iter().map(|&(n, l)| (l - c).ln() + alpha * n.ln()).sum::<f64>() / pts.len() as f64
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    const N_C: usize = 100;
    // c descending so a flat series settles on the largest floor
    for ci in (0..N_C).rev() {
        let c = l_min * 0.999 * ci as f64 / (N_C - 1) as f64;
        for ai in 0..=300 {
            let alpha = ai as f64 * 0.01;
            let la = log_a_for(alpha, c);
            let r = rms_log_residual(pts, la, alpha, c);
            if r < best.0 - 1e-12 {
                best = (r, la, alpha, c);
            }
        }
    }
    let (r0, mut la, mut alpha, mut c) = best;
    if !r0.is_finite() {
        return Err(ScaleError::FitFailed {
            a: la.exp(),
            alpha,
            c,
        });
    }
    let cost = |la: f64, al: f64, c: f64| {
        let r = rms_log_residual(pts, la, al, c);
        r * r
    };
    let mut lambda = 1e-3;
    let mut current = cost(la, alpha, c);
    for _ in 0..500 {
        // residuals and Jacobian w.r.t. (log a, α, c)
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        let a = la.exp();
        for &(n, l) in pts {
            let p = a * n.powf(-alpha);
            let f = p + c;
            let r = l.ln() - f.ln();
            let j = [-p / f, p * n.ln() / f, -1.0 / f];
            for i in 0..3 {
                jtr[i] += j[i] * r;
                for k in 0..3 {
                    jtj[i][k] += j[i] * j[k];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(step) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let cand = (la + step[0], (alpha + step[1]).max(0.0), (c + step[2]).clamp(0.0, l_min * 0.999_999));
            let val = cost(cand.0, cand.1, cand.2);
            if val.is_finite() && val < current {
                (la, alpha, c) = cand;
                let gain = current - val;
                current = val;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-16 * current.max(1e-300);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(la.is_finite() && alpha.is_finite() && c.is_finite()) {
        return Err(ScaleError::FitFailed { a: best.1.exp(), alpha: best.2, c: best.3 });
    }
    Ok((la, alpha, c))
}

/// Solve a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for k in col..3 {
                m[r][k] -= f * m[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    /// `log L_obs - log L_fit` per point, in input order.
    pub deviations: Vec<f64>,
    pub threshold: f64,
    /// Smallest `N` whose loss exceeds the fit by more than the threshold.
    pub onset: Option<f64>,
}

/// Flag the first point whose observed loss sits above the fitted curve by
/// more than three times the fit residual (in log space).
pub fn detect_saturation(points: &[(f64, f64)], fit: &PowerLawFit) -> SaturationReport {
    let deviations: Vec<f64> = points.iter().map(|&(n, l)| l.ln() - fit.predict(n).ln()).collect();
    let threshold = (3.0 * fit.residual).max(1e-9);
    let onset = points
        .iter()
        .zip(&deviations)
        .filter(|(_, &d)| d > threshold)
        .map(|(&(n, _), _)| n)
        .min_by(f64::total_cmp);
    SaturationReport {
        deviations,
        threshold,
        onset,
    }
}
