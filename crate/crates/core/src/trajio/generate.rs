//! Synthetic trajectories with known kinetics, used as oracles.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureSeries, Result, TrajError};
use crate::rng::rng_from_seed;

/// Discrete Markov chain sampled into one-hot features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovSpec {
    /// Row-stochastic `n x n` matrix, row-major rows.
    pub transition: Vec<Vec<f64>>,
    pub length: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial_state: usize,
}

impl MarkovSpec {
    pub fn two_state(p01: f64, p10: f64, length: usize, seed: u64) -> Self {
        Self {
            transition: vec![vec![1.0 - p01, p01], vec![p10, 1.0 - p10]],
            length,
            seed,
            initial_state: 0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.transition.len();
        if n == 0 {
            return Err(TrajError::NonStochastic("empty matrix".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(TrajError::NonStochastic(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(TrajError::NonStochastic(format!("row {i} has entry {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(TrajError::NonStochastic(format!("row {i} sums to {sum}")));
            }
        }
        if self.initial_state >= n {
            return Err(TrajError::InvalidSpec(format!(
                "initial state {} out of range for {n} states",
                self.initial_state
            )));
        }
        if self.length < 2 {
            return Err(TrajError::InvalidSpec("length must be at least 2".into()));
        }
        Ok(())
    }
}

/// State sequence of the chain; element 0 is the initial state.
pub fn sample_markov_states(spec: &MarkovSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = spec.n_states();
    let mut rng = rng_from_seed(spec.seed);
    let mut states = Vec::with_capacity(spec.length);
    let mut s = spec.initial_state;
    states.push(s);
    for _ in 1..spec.length {
        let u: f64 = rng.random();
        let row = &spec.transition[s];
        let mut acc = 0.0;
        // fall back to the last state with positive mass if rounding leaves u above the total
        let mut next = (0..n).rev().find(|&j| row[j] > 0.0).unwrap_or(s);
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        s = next;
        states.push(s);
    }
    Ok(states)
}

pub fn sample_markov(spec: &MarkovSpec) -> Result<FeatureSeries> {
    let states = sample_markov_states(spec)?;
    let n = spec.n_states();
    let m = DMatrix::from_fn(states.len(), n, |t, j| if states[t] == j { 1.0 } else { 0.0 });
    FeatureSeries::new(m, format!("markov{n}-seed{}", spec.seed), 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `V(x) = (x^2 - 1)^2`
    DoubleWell,
    /// `V(x, y) = (x^2 - 1)^2 + y^2 / 2`
    DoubleWell2d,
}

impl Potential {
    pub fn dim(self) -> usize {
        match self {
            Potential::DoubleWell => 1,
            Potential::DoubleWell2d => 2,
        }
    }

    pub fn energy(self, x: &[f64]) -> f64 {
        let dw = (x[0] * x[0] - 1.0).powi(2);
        match self {
            Potential::DoubleWell => dw,
            Potential::DoubleWell2d => dw + 0.5 * x[1] * x[1],
        }
    }

    fn gradient(self, x: &[f64], g: &mut [f64]) {
        g[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
        if let Potential::DoubleWell2d = self {
            g[1] = x[1];
        }
    }
}

/// Overdamped Langevin dynamics integrated with Euler–Maruyama.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinSpec {
    pub potential: Potential,
    pub step_size: f64,
    pub temperature: f64,
    /// Number of recorded frames (the initial point is frame 0).
    pub length: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Integration steps between recorded frames.
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl LangevinSpec {
    pub fn double_well(step_size: f64, temperature: f64, length: usize, seed: u64) -> Self {
        Self {
            potential: Potential::DoubleWell,
            step_size,
            temperature,
            length,
            seed,
            initial: None,
            stride: 1,
        }
    }
}

const DIVERGENCE: f64 = 1e6;

pub fn sample_langevin(spec: &LangevinSpec) -> Result<FeatureSeries> {
    if !(spec.step_size > 0.0 && spec.step_size.is_finite()) {
        return Err(TrajError::InvalidSpec("step_size must be positive".into()));
    }
    if !(spec.temperature >= 0.0 && spec.temperature.is_finite()) {
        return Err(TrajError::InvalidSpec("temperature must be non-negative".into()));
    }
    if spec.length < 2 || spec.stride == 0 {
        return Err(TrajError::InvalidSpec("length >= 2 and stride >= 1 required".into()));
    }
    let dim = spec.potential.dim();
    let mut x = match &spec.initial {
        Some(v) if v.len() == dim && v.iter().all(|a| a.is_finite()) => v.clone(),
        Some(v) => {
            return Err(TrajError::InvalidSpec(format!(
                "initial point has {} components, potential needs {dim}",
                v.len()
            )))
        }
        None => {
            let mut v = vec![0.0; dim];
            v[0] = -1.0;
            v
        }
    };
    let h = spec.step_size;
    let kick = (2.0 * spec.temperature * h).sqrt();
    let mut rng = rng_from_seed(spec.seed);
    let mut g = vec![0.0; dim];
    let mut out = DMatrix::zeros(spec.length, dim);
    out.row_mut(0).copy_from_slice(&x);
    let mut step = 0usize;
    for frame in 1..spec.length {
        for _ in 0..spec.stride {
            step += 1;
            spec.potential.gradient(&x, &mut g);
            for (xi, gi) in x.iter_mut().zip(&g) {
                let xi_noise: f64 = rng.sample(StandardNormal);
                *xi += -gi * h + kick * xi_noise;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
                return Err(TrajError::UnstableIntegration { step });
            }
        }
        out.row_mut(frame).copy_from_slice(&x);
    }
    FeatureSeries::new(
        out,
        format!("langevin-seed{}", spec.seed),
        h * spec.stride as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_chain_is_absorbing() {
        let spec = MarkovSpec {
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            length: 100,
            seed: 1,
            initial_state: 0,
        };
        let s = sample_markov(&spec).unwrap();
        assert!((0..100).all(|t| s.values()[(t, 0)] == 1.0 && s.values()[(t, 1)] == 0.0));
    }

    #[test]
    fn two_state_switch_frequency() {
        // oracle: count switches in the generated state sequence
        let spec = MarkovSpec::two_state(0.1, 0.1, 1_000_000, 11);
        let states = sample_markov_states(&spec).unwrap();
        let switches = states.windows(2).filter(|w| w[0] != w[1]).count();
        let freq = switches as f64 / (states.len() - 1) as f64;
        assert!((freq - 0.1).abs() < 0.002, "switch frequency {freq}");
    }

    #[test]
    fn markov_is_deterministic() {
        let spec = MarkovSpec::two_state(0.3, 0.2, 5000, 99);
        assert_eq!(sample_markov(&spec).unwrap(), sample_markov(&spec).unwrap());
        let other = MarkovSpec { seed: 100, ..spec.clone() };
        assert_ne!(sample_markov(&spec).unwrap(), sample_markov(&other).unwrap());
    }

    #[test]
    fn rejects_non_stochastic() {
        let spec = MarkovSpec {
            transition: vec![vec![0.5, 0.6], vec![0.5, 0.5]],
            length: 10,
            seed: 0,
            initial_state: 0,
        };
        assert!(matches!(sample_markov(&spec), Err(TrajError::NonStochastic(_))));
        let neg = MarkovSpec {
            transition: vec![vec![1.5, -0.5], vec![0.5, 0.5]],
            ..spec
        };
        assert!(matches!(sample_markov(&neg), Err(TrajError::NonStochastic(_))));
    }

    #[test]
    fn row_frequencies_converge_for_three_states() {
        let p = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.05, 0.9, 0.05],
            vec![0.3, 0.3, 0.4],
        ];
        let spec = MarkovSpec {
            transition: p.clone(),
            length: 200_000,
            seed: 5,
            initial_state: 2,
        };
        let states = sample_markov_states(&spec).unwrap();
        let mut counts = [[0usize; 3]; 3];
        for w in states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        let tol = 3.0 / (spec.length as f64).sqrt();
        for i in 0..3 {
            let tot: usize = counts[i].iter().sum();
            for j in 0..3 {
                let f = counts[i][j] as f64 / tot as f64;
                assert!((f - p[i][j]).abs() < tol, "({i},{j}) {f} vs {}", p[i][j]);
            }
        }
    }

    #[test]
    fn zero_temperature_descends_to_minimum() {
        let mut spec = LangevinSpec::double_well(0.01, 0.0, 1000, 0);
        spec.initial = Some(vec![0.5]);
        let s = sample_langevin(&spec).unwrap();
        assert!((s.values()[(999, 0)] - 1.0).abs() < 1e-6);
    }

    /// Equilibrium mass of `|x| > a` under `exp(-V/T)`, by trapezoid quadrature.
    fn boltzmann_tail(a: f64, temperature: f64) -> f64 {
        let n = 200_000;
        let (lo, hi) = (-4.0, 4.0);
        let h = (hi - lo) / n as f64;
        let (mut tot, mut tail) = (0.0, 0.0);
        for i in 0..=n {
            let x: f64 = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = w * (-(x * x - 1.0).powi(2) / temperature).exp();
            tot += p;
            if x.abs() > a {
                tail += p;
            }
        }
        tail / tot
    }

    #[test]
    fn double_well_is_bimodal() {
        let spec = LangevinSpec::double_well(1e-3, 0.4, 1_000_000, 3);
        let s = sample_langevin(&spec).unwrap();
        let col = s.values().column(0);
        let far = col.iter().filter(|x| x.abs() > 0.5).count() as f64 / col.len() as f64;
        let oracle = boltzmann_tail(0.5, 0.4);
        assert!((oracle - 0.8973).abs() < 1e-3, "oracle {oracle}");
        assert!((far - oracle).abs() < 0.015, "fraction beyond 0.5: {far} vs {oracle}");
        let pos = col.iter().filter(|x| **x > 0.0).count();
        assert!(pos > 0 && pos < col.len(), "both basins visited");
        // colder runs concentrate further into the wells
        let cold = sample_langevin(&LangevinSpec::double_well(1e-3, 0.3, 1_000_000, 3)).unwrap();
        let far_cold = cold.values().iter().filter(|x| x.abs() > 0.5).count() as f64 / 1e6;
        assert!(far_cold > 0.9, "cold fraction {far_cold}");
    }

    #[test]
    fn large_step_blows_up() {
        let mut spec = LangevinSpec::double_well(1.0, 0.0, 100, 0);
        spec.initial = Some(vec![0.5]);
        assert!(matches!(
            sample_langevin(&spec),
            Err(TrajError::UnstableIntegration { step }) if step > 0
        ));
        let noisy = LangevinSpec::double_well(1.0, 0.4, 100, 0);
        assert!(matches!(
            sample_langevin(&noisy),
            Err(TrajError::UnstableIntegration { .. })
        ));
    }

    #[test]
    fn langevin_is_deterministic_and_2d_works() {
        let mut spec = LangevinSpec::double_well(1e-3, 0.5, 2000, 8);
        spec.potential = Potential::DoubleWell2d;
        spec.initial = Some(vec![1.0, 0.0]);
        let a = sample_langevin(&spec).unwrap();
        assert_eq!(a.dim(), 2);
        assert_eq!(a, sample_langevin(&spec).unwrap());
    }
}
