//! Small building blocks shared by the descriptor and the VAMP head:
//! parameter containers, SiLU, uniform init and Adam.

use nalgebra::DMatrix;
use rand::Rng;

/// A model whose weights are an ordered list of dense tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&DMatrix<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Weights in tensor order, each tensor row-major.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in self.tensors() {
            for r in 0..t.nrows() {
                for c in 0..t.ncols() {
                    out.push(t[(r, c)]);
                }
            }
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`]. Panics on length mismatch.
    fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            for r in 0..t.nrows() {
                for c in 0..t.ncols() {
                    t[(r, c)] = *it.next().expect("length checked");
                }
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            *t *= s;
        }
    }

    /// `self += alpha * other`; both must share the same layout.
    fn axpy(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_apply(b, |x, y| *x += alpha * y);
        }
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d silu / dx
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Entries uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    // fill row-major so the stream order matches the serialized order
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.random_range(-bound..=bound);
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<P: ParamSet>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<DMatrix<f64>> = params
            .tensors()
            .iter()
            .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Central finite-difference gradient of `f` at `params`.
pub fn finite_difference<P, F>(params: &P, h: f64, mut f: F) -> Vec<f64>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let base = params.flatten();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut x = base.clone();
    for i in 0..base.len() {
        x[i] = base[i] + h;
        probe.assign_flat(&x);
        let fp = f(&probe);
        x[i] = base[i] - h;
        probe.assign_flat(&x);
        let fm = f(&probe);
        x[i] = base[i];
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest componentwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
