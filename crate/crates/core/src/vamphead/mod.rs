//! Trainable VAMP heads: a token mixer followed by an MLP that maps each
//! frame to a `d`-dimensional feature vector, trained by maximizing the
//! VAMP-2 score of time-lagged pairs.
//!
//! A frame is a row of `n_tokens * token_dim` values, token `t` occupying
//! columns `t * token_dim .. (t + 1) * token_dim`. Inputs are standardized
//! per channel with statistics shared across tokens.

mod checkpoint;
mod mixer;
mod train;

pub use checkpoint::{decode_head, encode_head, read_head, write_head, VHM_MAGIC};
pub use mixer::{AttentionParams, MixerParams, MlpMixerParams};
pub use train::{train_vamp, validation_score, HistoryRow, TrainVampConfig, VampTrainOutcome};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::TokenSet;
use crate::koopman::{vamp2_score_and_grad, KoopmanError};
use crate::nn::{silu, silu_grad, uniform_init, ParamSet};
use crate::rng::rng_from_seed;
use mixer::{mix_backward, mix_forward, MixCache};

#[derive(Debug, Error)]
pub enum VampError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} tokens, found {found}")]
    TokenCountMismatch { expected: usize, found: usize },
    #[error("frame has {found} values, not a multiple of token width {token_dim}")]
    InputDimMismatch { token_dim: usize, found: usize },
    #[error("not enough frames: {0}")]
    InsufficientFrames(String),
    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: KoopmanError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VampError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerMode {
    Sum,
    MlpMixer,
    SelfAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixerConfig {
    pub mode: MixerMode,
    pub n_tokens: usize,
    pub token_dim: usize,
    #[serde(default = "default_hidden")]
    pub token_hidden: usize,
    #[serde(default = "default_hidden")]
    pub channel_hidden: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
}

fn default_hidden() -> usize {
    16
}

fn default_heads() -> usize {
    1
}

impl MixerConfig {
    pub fn sum(n_tokens: usize, token_dim: usize) -> Self {
        Self {
            mode: MixerMode::Sum,
            n_tokens,
            token_dim,
            token_hidden: default_hidden(),
            channel_hidden: default_hidden(),
            n_heads: default_heads(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub mixer: MixerConfig,
    /// Widths of the SiLU layers between the mixer and the output map.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl HeadConfig {
    /// A single affine map from `input_dim` features to `out_dim`.
    pub fn linear(input_dim: usize, out_dim: usize) -> Self {
        Self {
            mixer: MixerConfig::sum(1, input_dim),
            hidden: vec![],
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mixer;
        let bad = |s: &str| Err(VampError::InvalidConfig(s.into()));
        if m.n_tokens == 0 || m.token_dim == 0 {
            return bad("n_tokens and token_dim must be >= 1");
        }
        if self.out_dim == 0 {
            return bad("out_dim must be >= 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        match m.mode {
            MixerMode::MlpMixer if m.token_hidden == 0 || m.channel_hidden == 0 => {
                bad("mlp_mixer needs token_hidden and channel_hidden >= 1")
            }
            MixerMode::SelfAttention if m.n_heads == 0 || m.token_dim % m.n_heads != 0 => {
                bad("n_heads must divide token_dim")
            }
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mixer.n_tokens * self.mixer.token_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    /// `1 x out`
    pub b: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VampHead {
    pub config: HeadConfig,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub mixer: MixerParams,
    pub layers: Vec<Dense>,
    pub output: Dense,
}

impl ParamSet for VampHead {
    fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = self.mixer.tensors();
        for l in self.layers.iter().chain(std::iter::once(&self.output)) {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = self.mixer.tensors_mut();
        for l in self.layers.iter_mut().chain(std::iter::once(&mut self.output)) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }
}

impl VampHead {
    pub fn zeros(config: HeadConfig) -> Result<Self> {
        config.validate()?;
        let m = config.mixer;
        let (n, w) = (m.n_tokens, m.token_dim);
        let z = DMatrix::zeros;
        let mixer = match m.mode {
            MixerMode::Sum => MixerParams::Sum,
            MixerMode::MlpMixer => MixerParams::MlpMixer(MlpMixerParams {
                u1: z(m.token_hidden, n),
                b1: z(m.token_hidden, 1),
                u2: z(n, m.token_hidden),
                b2: z(n, 1),
                v1: z(w, m.channel_hidden),
                c1: z(1, m.channel_hidden),
                v2: z(m.channel_hidden, w),
                c2: z(1, w),
            }),
            MixerMode::SelfAttention => MixerParams::SelfAttention(AttentionParams {
                n_heads: m.n_heads,
                wq: z(w, w),
                wk: z(w, w),
                wv: z(w, w),
                wo: z(w, w),
            }),
        };
        let mut width = w;
        let mut layers = Vec::new();
        for &h in &config.hidden {
            layers.push(Dense { w: z(width, h), b: z(1, h) });
            width = h;
        }
        let output = Dense {
            w: z(width, config.out_dim),
            b: z(1, config.out_dim),
        };
        Ok(Self {
            input_shift: vec![0.0; w],
            input_scale: vec![1.0; w],
            config,
            mixer,
            layers,
            output,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights drawn in tensor order.
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(config)?;
        let m = head.config.mixer;
        let mut fan_ins: Vec<usize> = match m.mode {
            MixerMode::Sum => vec![],
            MixerMode::MlpMixer => vec![m.n_tokens, m.n_tokens, m.token_hidden, m.token_hidden, m.token_dim, m.token_dim, m.channel_hidden, m.channel_hidden],
            MixerMode::SelfAttention => vec![m.token_dim; 4],
        };
        let mut width = m.token_dim;
        for &h in head.config.hidden.iter().chain(std::iter::once(&head.config.out_dim)) {
            fan_ins.extend([width, width]);
            width = h;
        }
        let mut rng = rng_from_seed(seed);
        for (t, f) in head.tensors_mut().into_iter().zip(fan_ins) {
            *t = uniform_init(t.nrows(), t.ncols(), f, &mut rng);
        }
        Ok(head)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.config.clone()).expect("validated config");
        z.input_shift.clone_from(&self.input_shift);
        z.input_scale.clone_from(&self.input_scale);
        z
    }

    /// Set per-channel input statistics from training frames.
    pub fn fit_standardization<'a>(&mut self, frames: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Result<()> {
        let w = self.config.mixer.token_dim;
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        let mut n = 0usize;
        for f in frames {
            self.check_width(f.ncols())?;
            for r in 0..f.nrows() {
                for (c, v) in f.row(r).iter().enumerate() {
                    sum[c % w] += v;
                    sq[c % w] += v * v;
                }
            }
            n += f.nrows() * f.ncols() / w;
        }
        if n == 0 {
            return Err(VampError::InsufficientFrames("no frames for standardization".into()));
        }
        for c in 0..w {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            self.input_shift[c] = mean;
            self.input_scale[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(())
    }

    fn check_width(&self, f: usize) -> Result<usize> {
        let m = &self.config.mixer;
        if f % m.token_dim != 0 || f == 0 {
            return Err(VampError::InputDimMismatch {
                token_dim: m.token_dim,
                found: f,
            });
        }
        let n = f / m.token_dim;
        if m.mode != MixerMode::Sum && n != m.n_tokens {
            return Err(VampError::TokenCountMismatch {
                expected: m.n_tokens,
                found: n,
            });
        }
        Ok(n)
    }

    fn tokens_of(&self, frame: &[f64]) -> DMatrix<f64> {
        let w = self.config.mixer.token_dim;
        DMatrix::from_fn(frame.len() / w, w, |t, c| {
            (frame[t * w + c] - self.input_shift[c]) / self.input_scale[c]
        })
    }
}

/// Mixer output for one token set, before the MLP.
pub fn mix_tokens(head: &VampHead, tokens: &TokenSet) -> Result<DVector<f64>> {
    let flat = tokens.flatten();
    head.check_width(flat.len())?;
    Ok(mix_forward(&head.mixer, head.tokens_of(&flat)).0)
}

pub struct BatchCache {
    mixes: Vec<MixCache>,
    /// Inputs of each dense layer, last entry feeds the output map.
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

fn dense(x: &DMatrix<f64>, d: &Dense) -> DMatrix<f64> {
    let mut y = x * &d.w;
    for c in 0..y.ncols() {
        y.column_mut(c).add_scalar_mut(d.b[(0, c)]);
    }
    y
}

/// Map each row of `frames` to a `d`-vector.
pub fn head_forward(head: &VampHead, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    forward_with_cache(head, frames).map(|(y, _)| y)
}

pub fn forward_with_cache(head: &VampHead, frames: &DMatrix<f64>) -> Result<(DMatrix<f64>, BatchCache)> {
    head.check_width(frames.ncols())?;
    let b = frames.nrows();
    let w = head.config.mixer.token_dim;
    let mut z = DMatrix::zeros(b, w);
    let mut mixes = Vec::with_capacity(b);
    let mut row = vec![0.0; frames.ncols()];
    for r in 0..b {
        for (c, v) in row.iter_mut().enumerate() {
            *v = frames[(r, c)];
        }
        let (zr, cache) = mix_forward(&head.mixer, head.tokens_of(&row));
        z.row_mut(r).copy_from(&zr.transpose());
        mixes.push(cache);
    }
    let mut acts = vec![z];
    let mut pre = Vec::new();
    for l in &head.layers {
        let a = dense(acts.last().expect("non-empty"), l);
        acts.push(a.map(silu));
        pre.push(a);
    }
    let y = dense(acts.last().expect("non-empty"), &head.output);
    Ok((y, BatchCache { mixes, acts, pre }))
}

/// Parameter gradient given `d_out = d loss / d output` for every row.
pub fn head_backward(head: &VampHead, cache: &BatchCache, d_out: &DMatrix<f64>) -> VampHead {
    let mut g = head.zeros_like();
    let col_sum = |m: &DMatrix<f64>| DMatrix::from_fn(1, m.ncols(), |_, c| m.column(c).sum());
    let last = cache.acts.last().expect("non-empty");
    g.output.w = last.transpose() * d_out;
    g.output.b = col_sum(d_out);
    let mut dh = d_out * head.output.w.transpose();
    for (i, l) in head.layers.iter().enumerate().rev() {
        let da = dh.zip_map(&cache.pre[i], |d, a| d * silu_grad(a));
        g.layers[i].w = cache.acts[i].transpose() * &da;
        g.layers[i].b = col_sum(&da);
        dh = &da * l.w.transpose();
    }
    for (r, mc) in cache.mixes.iter().enumerate() {
        let dz = dh.row(r).transpose();
        mix_backward(&head.mixer, mc, &dz, &mut g.mixer);
    }
    g
}

/// `(-score, d(-score)/d x, d(-score)/d y)` for batch outputs.
pub fn vamp2_loss_and_grad(
    instant: &DMatrix<f64>,
    lagged: &DMatrix<f64>,
    rank_epsilon: f64,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let g = vamp2_score_and_grad(instant, lagged, rank_epsilon)?;
    Ok((-g.score, -g.grad_x, -g.grad_y))
}

/// Loss and parameter gradient for a batch of paired input frames.
pub fn loss_and_grad(
    head: &VampHead,
    instant: &DMatrix<f64>,
    lagged: &DMatrix<f64>,
    rank_epsilon: f64,
) -> Result<(f64, VampHead)> {
    let (yx, cx) = forward_with_cache(head, instant)?;
    let (yy, cy) = forward_with_cache(head, lagged)?;
    let (loss, gx, gy) = vamp2_loss_and_grad(&yx, &yy, rank_epsilon)?;
    let mut grad = head_backward(head, &cx, &gx);
    grad.axpy(1.0, &head_backward(head, &cy, &gy));
    Ok((loss, grad))
}
