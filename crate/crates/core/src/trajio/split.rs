//! Train/validation partitions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FeatureSeries, Result, TrajError};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    Temporal,
    ByTrajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Train fraction in (0, 1).
    pub fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, fraction: f64, seed: u64) -> Self {
        Self {
            mode,
            fraction,
            seed,
        }
    }

    /// `ceil(fraction * n)`, tolerant to representation error in `fraction`.
    fn train_count(&self, n: usize) -> Result<usize> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(TrajError::InvalidSpec(format!(
                "split fraction {} outside (0, 1)",
                self.fraction
            )));
        }
        let k = (self.fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        if k == 0 || k >= n {
            return Err(TrajError::EmptySplit {
                train: k.min(n),
                validation: n.saturating_sub(k),
            });
        }
        Ok(k)
    }
}

/// Disjoint, exhaustive index partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Partition `n` items (frames, or whole trajectories for
/// [`SplitMode::ByTrajectory`]). Temporal keeps the leading prefix for
/// training; random and by-trajectory shuffle with the seeded generator and
/// return each part in ascending order.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Split> {
    let k = spec.train_count(n)?;
    match spec.mode {
        SplitMode::Temporal => Ok(Split {
            train: (0..k).collect(),
            validation: (k..n).collect(),
        }),
        SplitMode::Random | SplitMode::ByTrajectory => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng_from_seed(spec.seed));
            let mut train = idx[..k].to_vec();
            let mut validation = idx[k..].to_vec();
            train.sort_unstable();
            validation.sort_unstable();
            Ok(Split { train, validation })
        }
    }
}

/// Split a set of time series for kinetic estimation. Temporal mode cuts
/// every trajectory at its own prefix; by-trajectory assigns whole series.
/// Random frame shuffling would destroy lag pairs and is rejected.
pub fn split_series(
    series: &[FeatureSeries],
    spec: &SplitSpec,
) -> Result<(Vec<FeatureSeries>, Vec<FeatureSeries>)> {
    match spec.mode {
        SplitMode::Random => Err(TrajError::InvalidSplit(SplitMode::Random)),
        SplitMode::ByTrajectory => {
            let s = split_indices(series.len(), spec)?;
            Ok((
                s.train.iter().map(|&i| series[i].clone()).collect(),
                s.validation.iter().map(|&i| series[i].clone()).collect(),
            ))
        }
        SplitMode::Temporal => {
            let mut train = Vec::with_capacity(series.len());
            let mut val = Vec::with_capacity(series.len());
            for s in series {
                let k = spec.train_count(s.len())?;
                // parts shorter than two frames are not valid series
                if k < 2 || s.len() - k < 2 {
                    return Err(TrajError::EmptySplit {
                        train: k,
                        validation: s.len() - k,
                    });
                }
                train.push(s.slice(0, k)?);
                val.push(s.slice(k, s.len())?);
            }
            Ok((train, val))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn temporal_prefix() {
        let s = split_indices(10, &SplitSpec::new(SplitMode::Temporal, 0.8, 0)).unwrap();
        assert_eq!(s.train, (0..8).collect::<Vec<_>>());
        assert_eq!(s.validation, vec![8, 9]);
    }

    #[test]
    fn by_trajectory_halves() {
        let s = split_indices(4, &SplitSpec::new(SplitMode::ByTrajectory, 0.5, 3)).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.validation.len(), 2);
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn random_is_deterministic_and_exhaustive() {
        let spec = SplitSpec::new(SplitMode::Random, 0.7, 12345);
        let a = split_indices(50, &spec).unwrap();
        assert_eq!(a, split_indices(50, &spec).unwrap());
        assert_eq!(a.train.len(), 35);
        let mut all: Vec<_> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let b = split_indices(50, &SplitSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_parts_are_errors() {
        assert!(matches!(
            split_indices(3, &SplitSpec::new(SplitMode::Temporal, 0.99, 0)),
            Err(TrajError::EmptySplit { .. })
        ));
        assert!(matches!(
            split_indices(1, &SplitSpec::new(SplitMode::Random, 0.5, 0)),
            Err(TrajError::EmptySplit { .. })
        ));
        assert!(split_indices(10, &SplitSpec::new(SplitMode::Random, 1.0, 0)).is_err());
    }

    #[test]
    fn series_temporal_split_preserves_order() {
        let m = DMatrix::from_fn(20, 1, |r, _| r as f64);
        let s = FeatureSeries::new(m, "x", 1.0).unwrap();
        let (tr, va) =
            split_series(&[s.clone(), s], &SplitSpec::new(SplitMode::Temporal, 0.75, 0)).unwrap();
        for (t, v) in tr.iter().zip(&va) {
            assert_eq!(t.len(), 15);
            let max_train = t.values().max();
            let min_val = v.values().min();
            assert!(max_train < min_val);
        }
        let err = split_series(&tr, &SplitSpec::new(SplitMode::Random, 0.5, 0));
        assert!(matches!(err, Err(TrajError::InvalidSplit(SplitMode::Random))));
    }
}
