use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{head_forward, loss_and_grad, Result, VampError, VampHead};
use crate::koopman::{estimate_covariances, half_weighted, vamp2_score, KoopmanError, LagSpec, DEFAULT_RANK_EPSILON};
use crate::nn::{Adam, AdamConfig};
use crate::rng::child_rng;
use crate::trajio::FeatureSeries;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainVampConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many evaluations without validation improvement.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    /// Evaluate every this many batches; `None` evaluates once per epoch.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default = "default_rank_epsilon")]
    pub rank_epsilon: f64,
}

fn default_rank_epsilon() -> f64 {
    DEFAULT_RANK_EPSILON
}

impl TrainVampConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            seed,
            early_stop_patience: None,
            eval_every: None,
            rank_epsilon: DEFAULT_RANK_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Mean batch score since the previous evaluation.
    pub train_score: f64,
    pub val_score: f64,
}

#[derive(Clone, Debug)]
pub struct VampTrainOutcome {
    /// Head with the best validation score.
    pub head: VampHead,
    pub history: Vec<HistoryRow>,
    pub initial_val_score: f64,
    pub best_val_score: f64,
    pub stopped_early: bool,
}

impl VampTrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_score,val_score\n");
        for r in &self.history {
            s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_score, r.val_score));
        }
        s
    }
}

/// VAMP-2 score of the head outputs over whole series, as the koopman
/// module computes it.
pub fn validation_score(head: &VampHead, series: &[FeatureSeries], lag: LagSpec, rank_epsilon: f64) -> Result<f64> {
    let outputs = series
        .iter()
        .map(|s| {
            let y = head_forward(head, s.values())?;
            FeatureSeries::new(y, s.source_id(), s.dt()).map_err(|_| {
                VampError::Koopman(KoopmanError::NonFinite)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cov = estimate_covariances(&outputs, lag)?;
    Ok(vamp2_score(&half_weighted(&cov, rank_epsilon)?))
}

fn gather(series: &[FeatureSeries], pairs: &[(usize, usize)], offset: usize) -> DMatrix<f64> {
    let f = series[0].dim();
    let mut m = DMatrix::zeros(pairs.len(), f);
    for (r, &(s, t)) in pairs.iter().enumerate() {
        m.row_mut(r).copy_from(&series[s].values().row(t + offset));
    }
    m
}

struct Tracker {
    best: (f64, VampHead),
    history: Vec<HistoryRow>,
    stale: usize,
    patience: Option<usize>,
    acc: f64,
    n_acc: usize,
}

impl Tracker {
    /// Log an evaluation; true when early stopping triggers.
    fn record(&mut self, epoch: usize, val: f64, head: &VampHead) -> bool {
        self.history.push(HistoryRow {
            epoch,
            train_score: self.acc / self.n_acc.max(1) as f64,
            val_score: val,
        });
        self.acc = 0.0;
        self.n_acc = 0;
        if val > self.best.0 {
            self.best = (val, head.clone());
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.patience.is_some_and(|p| self.stale >= p)
        }
    }
}

/// Train a head on `(t, t + τ)` pairs drawn within each training series.
/// The head's input standardization is fitted on the training frames.
pub fn train_vamp(
    mut head: VampHead,
    train: &[FeatureSeries],
    validation: &[FeatureSeries],
    lag: LagSpec,
    config: &TrainVampConfig,
) -> Result<VampTrainOutcome> {
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate >= 0.0) {
        return Err(VampError::InvalidConfig("epochs, batch_size must be >= 1 and learning_rate >= 0".into()));
    }
    if config.eval_every == Some(0) {
        return Err(VampError::InvalidConfig("eval_every must be >= 1".into()));
    }
    if train.is_empty() || validation.is_empty() {
        return Err(VampError::InsufficientFrames("need training and validation series".into()));
    }
    let d = head.config.out_dim;
    let mut pairs = Vec::new();
    for (s, series) in train.iter().enumerate() {
        if series.len() > lag.tau {
            pairs.extend((0..series.len() - lag.tau).map(|t| (s, t)));
        }
    }
    let min_batch = (d + 1).max(2);
    if pairs.len() < min_batch {
        return Err(VampError::InsufficientFrames(format!(
            "{} training pairs at lag {}, need at least {min_batch}",
            pairs.len(),
            lag.tau
        )));
    }
    head.fit_standardization(train.iter().map(|s| s.values()))?;

    let initial = validation_score(&head, validation, lag, config.rank_epsilon)?;
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate), &head);
    let mut tracker = Tracker {
        best: (initial, head.clone()),
        history: Vec::new(),
        stale: 0,
        patience: config.early_stop_patience,
        acc: 0.0,
        n_acc: 0,
    };
    let mut stopped_early = false;
    let mut step = 0usize;

    'outer: for epoch in 1..=config.epochs {
        let mut order = pairs.clone();
        order.shuffle(&mut child_rng(config.seed, &[epoch as u64]));
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            // a short trailing batch gives a noisy covariance estimate
            if chunk.len() < min_batch || (b > 0 && chunk.len() * 2 < config.batch_size) {
                continue;
            }
            let x = gather(train, chunk, 0);
            let y = gather(train, chunk, lag.tau);
            let (loss, grad) = loss_and_grad(&head, &x, &y, config.rank_epsilon).map_err(|e| match e {
                VampError::Koopman(source) => VampError::Training { epoch, step: b, source },
                other => other,
            })?;
            adam.step(&mut head, &grad);
            tracker.acc -= loss;
            tracker.n_acc += 1;
            step += 1;
            if config.eval_every.is_some_and(|k| step % k == 0) {
                let val = validation_score(&head, validation, lag, config.rank_epsilon)?;
                if tracker.record(epoch, val, &head) {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
        if config.eval_every.is_none() && tracker.n_acc > 0 {
            let val = validation_score(&head, validation, lag, config.rank_epsilon)?;
            if tracker.record(epoch, val, &head) {
                stopped_early = true;
                break;
            }
        }
    }
    if step == 0 {
        return Err(VampError::InsufficientFrames("no usable batch".into()));
    }
    let Tracker { best, history, .. } = tracker;
    Ok(VampTrainOutcome {
        best_val_score: best.0,
        head: best.1,
        history,
        initial_val_score: initial,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vamphead::HeadConfig;
    use crate::trajio::{sample_markov, MarkovSpec};

    fn markov(len: usize, seed: u64) -> FeatureSeries {
        sample_markov(&MarkovSpec::two_state(0.1, 0.1, len, seed)).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let head = VampHead::init(HeadConfig::linear(2, 1), 1).unwrap();
        let cfg = TrainVampConfig::new(3, 500, 0.0, 2);
        let out = train_vamp(head, &[markov(3000, 1)], &[markov(2000, 2)], LagSpec::new(1), &cfg).unwrap();
        assert_eq!(out.history.len(), 3);
        assert!(out.history.iter().all(|r| r.val_score == out.initial_val_score));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let head = VampHead::init(HeadConfig::linear(2, 1), 1).unwrap();
            let cfg = TrainVampConfig::new(2, 256, 1e-2, 9);
            train_vamp(head, &[markov(3000, 1)], &[markov(2000, 2)], LagSpec::new(1), &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.head, b.head);
        assert_eq!(a.history_csv().lines().count(), 3);
    }

    #[test]
    fn too_few_frames() {
        let head = VampHead::init(HeadConfig::linear(2, 1), 1).unwrap();
        let s = FeatureSeries::from_rows(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = TrainVampConfig::new(1, 8, 1e-2, 0);
        assert!(matches!(
            train_vamp(head, &[s], &[markov(100, 1)], LagSpec::new(1), &cfg),
            Err(VampError::InsufficientFrames(_))
        ));
    }
}
