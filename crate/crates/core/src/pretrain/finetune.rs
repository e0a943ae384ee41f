use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{PretrainError, Result, Structure};
use crate::descriptor::{backward, forward, forward_with_cache, DescriptorError, DescriptorModel};
use crate::geomgraph::{build_radius_graph, RadiusGraph};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Update descriptor weights as well as the head.
    #[serde(default)]
    pub train_descriptor: bool,
    /// Halve the learning rate after this many epochs without improvement.
    #[serde(default = "default_plateau")]
    pub plateau_patience: usize,
}

fn default_plateau() -> usize {
    5
}

/// Linear map from the standardized sum-pooled embedding to the label.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarHead {
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub label_shift: f64,
    pub label_scale: f64,
    /// `width x 1`
    pub weights: DMatrix<f64>,
    /// `1 x 1`
    pub bias: DMatrix<f64>,
}

impl ParamSet for ScalarHead {
    fn tensors(&self) -> Vec<&DMatrix<f64>> {
        vec![&self.weights, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        vec![&mut self.weights, &mut self.bias]
    }
}

impl ScalarHead {
    fn standardized(&self, pooled: &[f64]) -> Vec<f64> {
        pooled
            .iter()
            .zip(self.feature_shift.iter().zip(&self.feature_scale))
            .map(|(p, (m, s))| (p - m) / s)
            .collect()
    }

    /// Prediction in standardized label units.
    fn raw(&self, pooled: &[f64]) -> f64 {
        let z = self.standardized(pooled);
        z.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum::<f64>() + self.bias[(0, 0)]
    }

    pub fn predict(&self, pooled: &[f64]) -> f64 {
        self.label_shift + self.label_scale * self.raw(pooled)
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub head: ScalarHead,
    pub model: DescriptorModel,
    pub val_mae: f64,
    /// Validation MAE after each epoch.
    pub history: Vec<f64>,
}

fn pooled(model: &DescriptorModel, g: &RadiusGraph, z: &[u8]) -> Result<Vec<f64>> {
    let out = forward(model, g, z)?;
    Ok((0..out.embeddings.ncols()).map(|c| out.embeddings.column(c).sum()).collect())
}

fn graphs(model: &DescriptorModel, data: &[Structure]) -> Result<Vec<RadiusGraph>> {
    data.iter()
        .map(|s| build_radius_graph(&s.coords, model.config.cutoff).map_err(|e| DescriptorError::from(e).into()))
        .collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

fn mae(model: &DescriptorModel, head: &ScalarHead, data: &[Structure], g: &[RadiusGraph], labels: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for ((s, g), y) in data.iter().zip(g).zip(labels) {
        total += (head.predict(&pooled(model, g, &s.atomic_numbers)?) - y).abs();
    }
    Ok(total / data.len() as f64)
}

/// Fit a linear head on sum-pooled embeddings, optionally fine-tuning the
/// descriptor too. Returns the state with the lowest validation MAE.
pub fn finetune_scalar(
    mut model: DescriptorModel,
    train: &[Structure],
    train_labels: &[f64],
    validation: &[Structure],
    validation_labels: &[f64],
    config: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if train.len() != train_labels.len() || validation.len() != validation_labels.len() {
        return Err(PretrainError::ShapeMismatch(format!(
            "{} / {} graphs but {} / {} labels",
            train.len(),
            validation.len(),
            train_labels.len(),
            validation_labels.len()
        )));
    }
    if train.is_empty() {
        return Err(PretrainError::EmptyDataset("training"));
    }
    if validation.is_empty() {
        return Err(PretrainError::EmptyDataset("validation"));
    }
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(PretrainError::InvalidConfig("epochs, batch_size and learning_rate must be positive".into()));
    }
    let w = model.config.width;
    let train_graphs = graphs(&model, train)?;
    let val_graphs = graphs(&model, validation)?;

    let feats: Vec<Vec<f64>> = train
        .iter()
        .zip(&train_graphs)
        .map(|(s, g)| pooled(&model, g, &s.atomic_numbers))
        .collect::<Result<_>>()?;
    let (shift, scale): (Vec<f64>, Vec<f64>) = (0..w).map(|c| mean_std(feats.iter().map(|f| f[c]))).unzip();
    let (label_shift, label_scale) = mean_std(train_labels.iter().copied());
    let mut head = ScalarHead {
        feature_shift: shift,
        feature_scale: scale,
        label_shift,
        label_scale,
        weights: DMatrix::zeros(w, 1),
        bias: DMatrix::zeros(1, 1),
    };

    let mut head_opt = Adam::new(AdamConfig::new(config.learning_rate), &head);
    let mut model_opt = Adam::new(AdamConfig::new(config.learning_rate), &model);
    let mut lr = config.learning_rate;
    let mut best = (mae(&model, &head, validation, &val_graphs, validation_labels)?, head.clone(), model.clone());
    let mut stale = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut child_rng(config.seed, &[epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let mut g_head = ScalarHead {
                weights: DMatrix::zeros(w, 1),
                bias: DMatrix::zeros(1, 1),
                ..head.clone()
            };
            let mut g_model = model.zeros_like();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &train[i];
                let g = &train_graphs[i];
                let (out, cache) = forward_with_cache(&model, g, &s.atomic_numbers)?;
                let p: Vec<f64> = (0..w).map(|c| out.embeddings.column(c).sum()).collect();
                let target = (train_labels[i] - head.label_shift) / head.label_scale;
                let r = head.raw(&p) - target;
                let z = head.standardized(&p);
                for c in 0..w {
                    g_head.weights[(c, 0)] += inv * 2.0 * r * z[c];
                }
                g_head.bias[(0, 0)] += inv * 2.0 * r;
                if config.train_descriptor {
                    let d_row: Vec<f64> = (0..w)
                        .map(|c| inv * 2.0 * r * head.weights[(c, 0)] / head.feature_scale[c])
                        .collect();
                    let d_emb = DMatrix::from_fn(out.embeddings.nrows(), w, |_, c| d_row[c]);
                    let zero_noise = vec![[0.0; 3]; out.noise_pred.len()];
                    let grad = backward(&model, g, &s.atomic_numbers, &cache, Some(&d_emb), &zero_noise);
                    g_model.axpy(1.0, &grad);
                }
            }
            head_opt.step(&mut head, &g_head);
            if config.train_descriptor {
                model_opt.step(&mut model, &g_model);
            }
        }
        let val = mae(&model, &head, validation, &val_graphs, validation_labels)?;
        history.push(val);
        if val < best.0 {
            best = (val, head.clone(), model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr *= 0.5;
                head_opt.set_learning_rate(lr);
                model_opt.set_learning_rate(lr);
                stale = 0;
            }
        }
    }
    Ok(FinetuneResult {
        val_mae: best.0,
        head: best.1,
        model: best.2,
        history,
    })
}
