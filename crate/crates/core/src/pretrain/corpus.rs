//! Procedural clusters for pre-training experiments.
//!
//! Atoms interact through an all-pairs Morse potential
//! `V(r) = D (1 - exp(-a (r - r0)))^2 - D` with `D = 1`, `a = 1.5`,
//! `r0 = 1.2`. Clusters are grown by attaching atoms at bond length to
//! random existing atoms and are then relaxed by low-temperature overdamped
//! Langevin dynamics.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::child_rng;

pub const MORSE_R0: f64 = 1.2;
const MORSE_A: f64 = 1.5;
const ELEMENTS: [u8; 4] = [1, 6, 7, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub coords: Vec<[f64; 3]>,
    pub atomic_numbers: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_structures: usize,
    #[serde(default = "default_min_atoms")]
    pub min_atoms: usize,
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
    #[serde(default = "default_relax_temperature")]
    pub relax_temperature: f64,
    #[serde(default = "default_relax_steps")]
    pub relax_steps: usize,
    pub seed: u64,
}

fn default_min_atoms() -> usize {
    4
}
fn default_max_atoms() -> usize {
    16
}
fn default_relax_temperature() -> f64 {
    0.02
}
fn default_relax_steps() -> usize {
    300
}

impl CorpusSpec {
    pub fn new(n_structures: usize, seed: u64) -> Self {
        Self {
            n_structures,
            min_atoms: default_min_atoms(),
            max_atoms: default_max_atoms(),
            relax_temperature: default_relax_temperature(),
            relax_steps: default_relax_steps(),
            seed,
        }
    }
}

/// Total Morse energy of a geometry.
pub fn strain_energy(coords: &[[f64; 3]]) -> f64 {
    let mut e = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let r = dist(&coords[i], &coords[j]);
            let x = 1.0 - (-MORSE_A * (r - MORSE_R0)).exp();
            e += x * x - 1.0;
        }
    }
    e
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn morse_forces(coords: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut f = vec![[0.0; 3]; coords.len()];
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let r = dist(&coords[i], &coords[j]).max(1e-6);
            let ex = (-MORSE_A * (r - MORSE_R0)).exp();
            let dv = 2.0 * MORSE_A * ex * (1.0 - ex);
            for k in 0..3 {
                let u = (coords[j][k] - coords[i][k]) / r;
                // dV/dr > 0 pulls i towards j
                f[i][k] += dv * u;
                f[j][k] -= dv * u;
            }
        }
    }
    f
}

fn random_direction(rng: &mut crate::rng::Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut *rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-8 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn grow_cluster(n: usize, rng: &mut crate::rng::Rng) -> Vec<[f64; 3]> {
    let mut coords = vec![[0.0; 3]];
    while coords.len() < n {
        let anchor = coords[rng.random_range(0..coords.len())];
        let u = random_direction(rng);
        let p = [
            anchor[0] + MORSE_R0 * u[0],
            anchor[1] + MORSE_R0 * u[1],
            anchor[2] + MORSE_R0 * u[2],
        ];
        if coords.iter().all(|c| dist(c, &p) > 0.9 * MORSE_R0) {
            coords.push(p);
        }
    }
    coords
}

fn relax(coords: &mut [[f64; 3]], temperature: f64, steps: usize, rng: &mut crate::rng::Rng) {
    let h = 0.01;
    let kick = (2.0 * temperature * h).sqrt();
    for _ in 0..steps {
        let f = morse_forces(coords);
        for (c, fi) in coords.iter_mut().zip(&f) {
            for k in 0..3 {
                let z: f64 = StandardNormal.sample(&mut *rng);
                c[k] += h * fi[k] + kick * z;
            }
        }
    }
}

/// Overdamped Langevin frames of one cluster at `temperature`, recorded
/// every `stride` steps of size 0.01. Frame 0 is the input geometry.
pub fn cluster_dynamics(start: &Structure, temperature: f64, n_frames: usize, stride: usize, seed: u64) -> Vec<Vec<[f64; 3]>> {
    let mut rng = child_rng(seed, &[DYNAMICS_TAG]);
    let mut coords = start.coords.clone();
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        if f > 0 {
            relax(&mut coords, temperature, stride.max(1), &mut rng);
        }
        frames.push(coords.clone());
    }
    frames
}

const DYNAMICS_TAG: u64 = 0x6479_6e61;

/// Near-equilibrium clusters of H/C/N/O with 2 to 4 element types each.
pub fn toy_corpus(spec: &CorpusSpec) -> Vec<Structure> {
    let lo = spec.min_atoms.max(2);
    let hi = spec.max_atoms.max(lo);
    (0..spec.n_structures)
        .map(|s| {
            let mut rng = child_rng(spec.seed, &[s as u64]);
            let n = rng.random_range(lo..=hi);
            let n_types = rng.random_range(2..=4);
            let types: Vec<u8> = sample(&mut rng, ELEMENTS.len(), n_types)
                .into_iter()
                .map(|k| ELEMENTS[k])
                .collect();
            let atomic_numbers = (0..n).map(|_| types[rng.random_range(0..n_types)]).collect();
            let mut coords = grow_cluster(n, &mut rng);
            relax(&mut coords, spec.relax_temperature, spec.relax_steps, &mut rng);
            Structure {
                coords,
                atomic_numbers,
            }
        })
        .collect()
}

/// Planar C2H2 rhombus with side `MORSE_R0` and a 60 degree angle, each
/// coordinate jittered by `N(0, jitter^2)`.
pub fn rhombus_dataset(n: usize, jitter: f64, seed: u64) -> Vec<Structure> {
    let s = MORSE_R0;
    let h = s * 3f64.sqrt() / 2.0;
    let base = [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s / 2.0, h, 0.0], [s / 2.0, -h, 0.0]];
    (0..n)
        .map(|i| {
            let mut rng = child_rng(seed, &[i as u64]);
            let coords = base
                .iter()
                .map(|p| {
                    std::array::from_fn(|k| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p[k] + jitter * z
                    })
                })
                .collect();
            Structure {
                coords,
                atomic_numbers: vec![6, 6, 1, 1],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forces_are_negative_energy_gradient() {
        let c = vec![[0.0, 0.0, 0.0], [1.0, 0.3, 0.0], [0.2, 1.4, -0.5]];
        let f = morse_forces(&c);
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..3 {
                let mut p = c.clone();
                p[i][k] += h;
                let mut m = c.clone();
                m[i][k] -= h;
                let g = (strain_energy(&p) - strain_energy(&m)) / (2.0 * h);
                assert!((f[i][k] + g).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimer_minimum_at_r0() {
        assert!((strain_energy(&[[0.0; 3], [MORSE_R0, 0.0, 0.0]]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn corpus_is_deterministic_and_sane() {
        let spec = CorpusSpec::new(20, 3);
        let a = toy_corpus(&spec);
        assert_eq!(a, toy_corpus(&spec));
        for s in &a {
            assert!((4..=16).contains(&s.coords.len()));
            let mut kinds = s.atomic_numbers.clone();
            kinds.sort_unstable();
            kinds.dedup();
            assert!(kinds.len() <= 4);
            for i in 0..s.coords.len() {
                for j in 0..i {
                    assert!(dist(&s.coords[i], &s.coords[j]) > 0.6);
                }
            }
        }
    }
}
