//! Denoising pre-training: coordinate corruption, the mean squared noise
//! loss, exact batch gradients, an Adam training loop, and a scalar
//! fine-tuning head.
//!
//! The regression target is the unit-variance draw `ε`, not `σ·ε`, so the
//! all-zero predictor scores exactly 1 in expectation.

mod corpus;
mod finetune;

pub use corpus::{cluster_dynamics, rhombus_dataset, toy_corpus, strain_energy, CorpusSpec, Structure, MORSE_R0};
pub use finetune::{finetune_scalar, FinetuneConfig, FinetuneResult, ScalarHead};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{backward, forward_with_cache, DescriptorError, DescriptorModel};
use crate::geomgraph::build_radius_graph;
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rigid::Rotation;
use crate::rng::{child_rng, derive_seed};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: DescriptorError,
    },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

pub type Result<T> = std::result::Result<T, PretrainError>;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub clean: Vec<[f64; 3]>,
    pub noised: Vec<[f64; 3]>,
    /// Unit-variance regression target.
    pub noise: Vec<[f64; 3]>,
    pub noise_level: f64,
}

fn draw_noise(n: usize, seed: u64, rotation: &Rotation) -> Vec<[f64; 3]> {
    let mut rng = crate::rng::rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let e: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            rotation.apply(&e)
        })
        .collect()
}

fn corrupt_with(coords: &[[f64; 3]], noise_level: f64, noise: Vec<[f64; 3]>) -> NoiseSample {
    let noised = coords
        .iter()
        .zip(&noise)
        .map(|(r, e)| std::array::from_fn(|k| r[k] + noise_level * e[k]))
        .collect();
    NoiseSample {
        clean: coords.to_vec(),
        noised,
        noise,
        noise_level,
    }
}

/// `r̂ = r + σ ε` with `ε` standard normal per coordinate.
pub fn corrupt(coords: &[[f64; 3]], noise_level: f64, seed: u64) -> Result<NoiseSample> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(PretrainError::InvalidConfig(format!("noise level {noise_level}")));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PretrainError::ShapeMismatch("non-finite coordinates".into()));
    }
    Ok(corrupt_with(coords, noise_level, draw_noise(coords.len(), seed, &Rotation::identity())))
}

/// Mean over atoms and components of the squared error.
pub fn denoising_loss(pred: &[[f64; 3]], noise: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != noise.len() || pred.is_empty() {
        return Err(PretrainError::ShapeMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            noise.len()
        )));
    }
    let sq: f64 = pred
        .iter()
        .zip(noise)
        .map(|(p, e)| (0..3).map(|k| (p[k] - e[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sq / (3 * pred.len()) as f64)
}

/// One corrupted structure ready for the network.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub atomic_numbers: &'a [u8],
    pub sample: &'a NoiseSample,
}

/// Mean denoising loss of one sample.
pub fn sample_loss(model: &DescriptorModel, item: BatchItem<'_>) -> Result<f64> {
    let g = build_radius_graph(&item.sample.noised, model.config.cutoff).map_err(DescriptorError::from)?;
    let out = crate::descriptor::forward(model, &g, item.atomic_numbers)?;
    denoising_loss(&out.noise_pred, &item.sample.noise)
}

/// Mean loss over the batch and its exact gradient.
pub fn gradients(model: &DescriptorModel, batch: &[BatchItem<'_>]) -> Result<(f64, DescriptorModel)> {
    if batch.is_empty() {
        return Err(PretrainError::EmptyDataset("batch"));
    }
    let mut total = model.zeros_like();
    let mut loss = 0.0;
    for item in batch {
        let s = item.sample;
        if s.noised.len() != item.atomic_numbers.len() || s.noise.len() != s.noised.len() {
            return Err(PretrainError::ShapeMismatch("sample and atom list differ".into()));
        }
        let g = build_radius_graph(&s.noised, model.config.cutoff).map_err(DescriptorError::from)?;
        let (out, cache) = forward_with_cache(model, &g, item.atomic_numbers)?;
        loss += denoising_loss(&out.noise_pred, &s.noise)?;
        let scale = 2.0 / (3 * s.noise.len()) as f64;
        let d_noise: Vec<[f64; 3]> = out
            .noise_pred
            .iter()
            .zip(&s.noise)
            .map(|(p, e)| std::array::from_fn(|k| scale * (p[k] - e[k])))
            .collect();
        let grad = backward(model, &g, item.atomic_numbers, &cache, None, &d_noise);
        total.axpy(1.0, &grad);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    if !total.all_finite() {
        return Err(DescriptorError::NumericalFailure { layer: model.config.depth }.into());
    }
    Ok((loss * inv, total))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PretrainError::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(PretrainError::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        if !(self.noise_level > 0.0 && self.noise_level.is_finite()) {
            return Err(PretrainError::InvalidConfig("noise_level must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Deterministic summary of a run. Wall-clock timings live in
/// [`TrainOutcome::epoch_seconds`] so that records compare bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRow>,
    /// Validation loss after the first epoch.
    pub first_epoch_loss: f64,
    /// Best validation loss seen.
    pub converged_loss: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation loss.
    pub model: DescriptorModel,
    pub record: TrainRecord,
    pub epoch_seconds: Vec<f64>,
}

const NOISE_TAG: u64 = 0x6e6f_6973;
const VALIDATION_TAG: u64 = 0x7661_6c69;
const SHUFFLE_TAG: u64 = 0x7368_7566;

fn noisy_set(data: &[Structure], sigma: f64, seed: u64, rotation: &Rotation) -> Vec<NoiseSample> {
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            let noise = draw_noise(s.coords.len(), derive_seed(seed, &[i as u64]), rotation);
            corrupt_with(&s.coords, sigma, noise)
        })
        .collect()
}

fn mean_loss(model: &DescriptorModel, data: &[Structure], samples: &[NoiseSample]) -> Result<f64> {
    let mut total = 0.0;
    for (s, n) in data.iter().zip(samples) {
        total += sample_loss(
            model,
            BatchItem {
                atomic_numbers: &s.atomic_numbers,
                sample: n,
            },
        )?;
    }
    Ok(total / data.len() as f64)
}

/// Validation loss with the fixed validation noise used by [`train`].
pub fn validation_loss(model: &DescriptorModel, validation: &[Structure], config: &TrainConfig) -> Result<f64> {
    let samples = noisy_set(
        validation,
        config.noise_level,
        derive_seed(config.seed, &[VALIDATION_TAG]),
        &Rotation::identity(),
    );
    mean_loss(model, validation, &samples)
}

pub fn train(
    model: DescriptorModel,
    train_set: &[Structure],
    validation: &[Structure],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_rotated(model, train_set, validation, config, &Rotation::identity())
}

/// Training loop with every noise draw rotated by `rotation`. With the
/// identity this is [`train`]; with `R` and geometries rotated by `R` the
/// loss trajectory is unchanged.
pub(crate) fn train_rotated(
    mut model: DescriptorModel,
    train_set: &[Structure],
    validation: &[Structure],
    config: &TrainConfig,
    rotation: &Rotation,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(PretrainError::EmptyDataset("training"));
    }
    if validation.is_empty() {
        return Err(PretrainError::EmptyDataset("validation"));
    }
    let val_samples = noisy_set(
        validation,
        config.noise_level,
        derive_seed(config.seed, &[VALIDATION_TAG]),
        rotation,
    );
    let initial_val_loss = mean_loss(&model, validation, &val_samples)?;
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate), &model);
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut rows = Vec::new();
    let mut seconds = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut child_rng(config.seed, &[SHUFFLE_TAG, epoch as u64]));
        let noise_seed = derive_seed(config.seed, &[NOISE_TAG, epoch as u64]);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<NoiseSample> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let noise = draw_noise(s.coords.len(), derive_seed(noise_seed, &[i as u64]), rotation);
                    corrupt_with(&s.coords, config.noise_level, noise)
                })
                .collect();
            let batch: Vec<BatchItem> = chunk
                .iter()
                .zip(&samples)
                .map(|(&i, sample)| BatchItem {
                    atomic_numbers: &train_set[i].atomic_numbers,
                    sample,
                })
                .collect();
            let (loss, grad) = gradients(&model, &batch).map_err(|e| match e {
                PretrainError::Descriptor(source) => PretrainError::Training { epoch, step, source },
                other => other,
            })?;
            adam.step(&mut model, &grad);
            epoch_loss += loss;
            n_batches += 1;
        }
        let val_loss = mean_loss(&model, validation, &val_samples).map_err(|e| match e {
            PretrainError::Descriptor(source) => PretrainError::Training { epoch, step: 0, source },
            other => other,
        })?;
        rows.push(EpochRow {
            epoch,
            train_loss: epoch_loss / n_batches as f64,
            val_loss,
        });
        seconds.push(start.elapsed().as_secs_f64());
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }
    let record = TrainRecord {
        first_epoch_loss: rows[0].val_loss,
        converged_loss: best.0,
        final_loss: rows.last().expect("at least one epoch").val_loss,
        best_epoch: best.1,
        initial_val_loss,
        stopped_early,
        epochs: rows,
    };
    Ok(TrainOutcome {
        model: best.2,
        record,
        epoch_seconds: seconds,
    })
}
