//! Radius graphs over atomic coordinates and radial basis expansion of edge
//! lengths.
//!
//! Neighbor search is the plain all-pairs scan; systems here are at most a
//! few thousand atoms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("atoms {0} and {1} coincide")]
    DegenerateGeometry(usize, usize),
    #[error("no atoms")]
    Empty,
    #[error("non-finite coordinate on atom {0}")]
    NonFinite(usize),
    #[error("cutoff must be positive and finite, got {0}")]
    InvalidCutoff(f64),
    #[error("need at least one radial basis function")]
    InvalidRbf,
    #[error("distance {d} outside (0, {cutoff}]")]
    DistanceOutOfRange { d: f64, cutoff: f64 },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Directed radius graph. Edge `e = (i, j)` carries the message from atom
/// `j` into atom `i`; its unit vector points from `i` towards `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    pub unit_vectors: Vec<[f64; 3]>,
    pub cutoff: f64,
}

impl RadiusGraph {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|(a, _)| *a == i).count()
    }
}

pub fn build_radius_graph(coords: &[[f64; 3]], cutoff: f64) -> Result<RadiusGraph> {
    if coords.is_empty() {
        return Err(GraphError::Empty);
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(GraphError::InvalidCutoff(cutoff));
    }
    if let Some(i) = coords.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(GraphError::NonFinite(i));
    }
    let n = coords.len();
    let mut edges = Vec::new();
    let mut distances = Vec::new();
    let mut unit_vectors = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = [
                coords[j][0] - coords[i][0],
                coords[j][1] - coords[i][1],
                coords[j][2] - coords[i][2],
            ];
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if d == 0.0 {
                return Err(GraphError::DegenerateGeometry(i.min(j), i.max(j)));
            }
            if d <= cutoff {
                edges.push((i, j));
                distances.push(d);
                unit_vectors.push([v[0] / d, v[1] / d, v[2] / d]);
            }
        }
    }
    Ok(RadiusGraph {
        n_nodes: n,
        edges,
        distances,
        unit_vectors,
        cutoff,
    })
}

/// Gaussian radial basis with a cosine cutoff envelope.
///
/// Centers are evenly spaced on `[0, cutoff]` (a single function sits at 0
/// with spacing `cutoff`); the width is `gamma = 1 / (2 * spacing^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfSpec {
    pub n_rbf: usize,
    pub cutoff: f64,
    pub centers: Vec<f64>,
    pub gamma: f64,
}

impl RbfSpec {
    pub fn new(n_rbf: usize, cutoff: f64) -> Result<Self> {
        if n_rbf == 0 {
            return Err(GraphError::InvalidRbf);
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(GraphError::InvalidCutoff(cutoff));
        }
        let spacing = if n_rbf == 1 {
            cutoff
        } else {
            cutoff / (n_rbf - 1) as f64
        };
        let centers = (0..n_rbf).map(|k| k as f64 * spacing).collect();
        Ok(Self {
            n_rbf,
            cutoff,
            centers,
            gamma: 1.0 / (2.0 * spacing * spacing),
        })
    }

    pub fn envelope(&self, d: f64) -> f64 {
        0.5 * ((std::f64::consts::PI * d / self.cutoff).cos() + 1.0)
    }

    /// Write the expansion of `d` into `out` without range checks.
    pub fn expand_into(&self, d: f64, out: &mut [f64]) {
        let env = self.envelope(d);
        for (o, c) in out.iter_mut().zip(&self.centers) {
            let diff = d - c;
            *o = (-self.gamma * diff * diff).exp() * env;
        }
    }
}

pub fn rbf_expand(d: f64, spec: &RbfSpec) -> Result<Vec<f64>> {
    if !(d > 0.0 && d <= spec.cutoff) {
        return Err(GraphError::DistanceOutOfRange {
            d,
            cutoff: spec.cutoff,
        });
    }
    let mut out = vec![0.0; spec.n_rbf];
    spec.expand_into(d, &mut out);
    // cos(pi) leaves ~1e-17 of envelope behind
    if d == spec.cutoff {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_pairs(coords: &[[f64; 3]], cutoff: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..coords.len() {
            for j in 0..coords.len() {
                let d2: f64 = (0..3).map(|k| (coords[i][k] - coords[j][k]).powi(2)).sum();
                if i != j && d2.sqrt() <= cutoff {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn far_pair_has_no_edges() {
        let g = build_radius_graph(&[[0.0; 3], [6.0, 0.0, 0.0]], 5.0).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn close_pair_is_symmetric() {
        let g = build_radius_graph(&[[0.0; 3], [0.0, 1.0, 0.0]], 5.0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(g.distances, vec![1.0, 1.0]);
        assert_eq!(g.unit_vectors[0], [0.0, 1.0, 0.0]);
        assert_eq!(g.unit_vectors[1], [0.0, -1.0, 0.0]);
    }

    #[test]
    fn line_of_seven_degrees() {
        let coords: Vec<[f64; 3]> = (0..7).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g = build_radius_graph(&coords, 2.5).unwrap();
        let degrees: Vec<usize> = (0..7).map(|i| g.degree(i)).collect();
        let oracle: Vec<usize> = (0..7)
            .map(|i| brute_force_pairs(&coords, 2.5).iter().filter(|(a, _)| *a == i).count())
            .collect();
        assert_eq!(degrees, oracle);
        assert_eq!(degrees, vec![2, 3, 4, 4, 4, 3, 2]);
    }

    #[test]
    fn coincident_atoms_are_rejected() {
        let err = build_radius_graph(&[[1.0; 3], [0.0; 3], [1.0; 3]], 3.0).unwrap_err();
        assert_eq!(err, GraphError::DegenerateGeometry(0, 2));
    }

    #[test]
    fn rbf_vanishes_at_cutoff() {
        let spec = RbfSpec::new(32, 5.0).unwrap();
        assert!(rbf_expand(5.0, &spec).unwrap().iter().all(|v| *v == 0.0));
        assert!(rbf_expand(0.0, &spec).is_err());
        assert!(rbf_expand(5.0 + 1e-12, &spec).is_err());
    }

    #[test]
    fn rbf_peak_at_center() {
        let spec = RbfSpec::new(5, 4.0).unwrap();
        let d = spec.centers[2];
        let v = rbf_expand(d, &spec).unwrap();
        assert_eq!(v[2], spec.envelope(d));
    }

    #[test]
    fn rbf_matches_direct_formula() {
        let spec = RbfSpec::new(4, 4.0).unwrap();
        let v = rbf_expand(1.0, &spec).unwrap();
        // independent scalar evaluation: centers 0, 4/3, 8/3, 4 and gamma = 9/32
        let env = 0.5 * ((std::f64::consts::PI / 4.0).cos() + 1.0);
        let expected: Vec<f64> = [0.0, 4.0 / 3.0, 8.0 / 3.0, 4.0]
            .iter()
            .map(|c: &f64| (-(9.0 / 32.0) * (1.0 - c).powi(2)).exp() * env)
            .collect();
        for (a, b) in v.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn rbf_is_continuous_near_cutoff() {
        let spec = RbfSpec::new(8, 3.0).unwrap();
        let v = rbf_expand(3.0 - 1e-7, &spec).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    fn arb_points() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-4.0f64..4.0), 1..64)
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(points in arb_points(), cutoff in 0.5f64..4.0) {
            let g = build_radius_graph(&points, cutoff).unwrap();
            prop_assert_eq!(&g.edges, &brute_force_pairs(&points, cutoff));
            for (e, &(i, j)) in g.edges.iter().enumerate() {
                prop_assert!(g.edges.contains(&(j, i)));
                prop_assert!(g.distances[e] > 0.0 && g.distances[e] <= cutoff);
                let u = g.unit_vectors[e];
                let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn invariant_under_rigid_motion(
            points in arb_points(),
            angles in prop::array::uniform3(-3.0f64..3.0),
            shift in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let r = crate::rigid::Rotation::from_euler(angles);
            let moved: Vec<[f64; 3]> = points
                .iter()
                .map(|p| {
                    let q = r.apply(p);
                    [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
                })
                .collect();
            let a = build_radius_graph(&points, 2.0).unwrap();
            let b = build_radius_graph(&moved, 2.0).unwrap();
            // ignore pairs that sit within rounding of the cutoff
            prop_assume!(a.distances.iter().chain(&b.distances).all(|d| (d - 2.0).abs() > 1e-9));
            prop_assert_eq!(&a.edges, &b.edges);
            for e in 0..a.n_edges() {
                prop_assert!((a.distances[e] - b.distances[e]).abs() < 1e-12);
                let ru = r.apply(&a.unit_vectors[e]);
                for k in 0..3 {
                    prop_assert!((ru[k] - b.unit_vectors[e][k]).abs() < 1e-9);
                }
            }
        }
    }
}
