//! Invariant message-passing descriptor with an equivariant noise readout.
//!
//! Node state starts from an element embedding. Each layer gathers
//! neighbor states through a radial filter and applies a residual
//! two-stage update:
//!
//! ```text
//! f_ij  = rbf(d_ij) · W_f
//! m_i   = Σ_j f_ij ⊙ h_j
//! h_i  <- h_i + silu((h_i + m_i) W_1 + b_1) W_2 + b_2
//! ```
//!
//! The denoising head is a scalar gate per edge multiplying the unit vector,
//! so its output rotates with the input:
//!
//! ```text
//! q_ij     = silu((h_i + h_j) W_p + b_p)
//! g_ij     = Σ_c w_g[c] · (rbf(d_ij) · W_r)[c] · q_ij[c]
//! noise_i  = Σ_j g_ij û_ij
//! ```
//!
//! Every radial quantity carries the cosine envelope, so outputs are
//! continuous as atoms cross the cutoff.

mod checkpoint;
mod forward;
mod pool;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, GDM_MAGIC};
pub use forward::{backward, forward, forward_with_cache, ForwardCache, ForwardOutput};
pub use pool::{pool, residue_windows, whole_graph, PoolMode, TokenSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomgraph::{GraphError, RbfSpec};
use crate::nn::{uniform_init, ParamSet};
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("atom {atom} has atomic number {z}, embedding table holds {n_elements}")]
    UnknownElement { atom: usize, z: u8, n_elements: usize },
    #[error("graph has {graph} nodes but {atoms} atomic numbers were given")]
    NodeCountMismatch { graph: usize, atoms: usize },
    #[error("graph cutoff {graph} differs from model cutoff {model}")]
    CutoffMismatch { graph: f64, model: f64 },
    #[error("non-finite activation in layer {layer}")]
    NumericalFailure { layer: usize },
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DescriptorError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorConfig {
    pub width: usize,
    pub depth: usize,
    pub cutoff: f64,
    #[serde(default = "default_n_rbf")]
    pub n_rbf: usize,
    #[serde(default = "default_n_elements")]
    pub n_elements: usize,
}

fn default_n_rbf() -> usize {
    32
}

fn default_n_elements() -> usize {
    18
}

impl DescriptorConfig {
    pub fn new(width: usize, depth: usize, cutoff: f64) -> Self {
        Self {
            width,
            depth,
            cutoff,
            n_rbf: default_n_rbf(),
            n_elements: default_n_elements(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(DescriptorError::InvalidConfig("width must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(DescriptorError::InvalidConfig("depth must be >= 1".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(DescriptorError::InvalidConfig(format!(
                "cutoff must be positive, got {}",
                self.cutoff
            )));
        }
        if self.n_rbf == 0 || self.n_elements == 0 {
            return Err(DescriptorError::InvalidConfig(
                "n_rbf and n_elements must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn rbf(&self) -> Result<RbfSpec> {
        Ok(RbfSpec::new(self.n_rbf, self.cutoff)?)
    }
}

/// Closed-form number of trainable scalars.
pub fn count_parameters(config: &DescriptorConfig) -> Result<usize> {
    config.validate()?;
    let w = config.width;
    let r = config.n_rbf;
    let per_layer = r * w + 2 * w * w + 2 * w;
    let readout = w * w + w + r * w + w;
    Ok(config.n_elements * w + config.depth * per_layer + readout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpLayer {
    /// `n_rbf x width`
    pub filter: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    pub pair_w: DMatrix<f64>,
    pub pair_b: DMatrix<f64>,
    /// `n_rbf x width`
    pub filter: DMatrix<f64>,
    /// `width x 1`
    pub gate: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorModel {
    pub config: DescriptorConfig,
    /// `n_elements x width`, indexed by atomic number.
    pub element_embedding: DMatrix<f64>,
    pub layers: Vec<MpLayer>,
    pub readout: Readout,
}

impl ParamSet for DescriptorModel {
    fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = vec![&self.element_embedding];
        for l in &self.layers {
            out.extend([&l.filter, &l.w1, &l.b1, &l.w2, &l.b2]);
        }
        let r = &self.readout;
        out.extend([&r.pair_w, &r.pair_b, &r.filter, &r.gate]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = vec![&mut self.element_embedding];
        for l in &mut self.layers {
            out.extend([&mut l.filter, &mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2]);
        }
        let r = &mut self.readout;
        out.extend([&mut r.pair_w, &mut r.pair_b, &mut r.filter, &mut r.gate]);
        out
    }
}

impl DescriptorModel {
    /// All-zero weights with the layout of `config`.
    pub fn zeros(config: DescriptorConfig) -> Result<Self> {
        config.validate()?;
        let (w, r) = (config.width, config.n_rbf);
        let z = DMatrix::zeros;
        Ok(Self {
            config,
            element_embedding: z(config.n_elements, w),
            layers: (0..config.depth)
                .map(|_| MpLayer {
                    filter: z(r, w),
                    w1: z(w, w),
                    b1: z(1, w),
                    w2: z(w, w),
                    b2: z(1, w),
                })
                .collect(),
            readout: Readout {
                pair_w: z(w, w),
                pair_b: z(1, w),
                filter: z(r, w),
                gate: z(w, 1),
            },
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, drawn tensor by tensor in
    /// [`ParamSet::tensors`] order. Embedding rows use fan-in 1.
    pub fn init(config: DescriptorConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = rng_from_seed(seed);
        let (w, r) = (config.width, config.n_rbf);
        let fan_ins: Vec<usize> = std::iter::once(1)
            .chain((0..config.depth).flat_map(|_| [r, w, w, w, w]))
            .chain([w, w, r, w])
            .collect();
        for (t, fan_in) in model.tensors_mut().into_iter().zip(fan_ins) {
            *t = uniform_init(t.nrows(), t.ncols(), fan_in, &mut rng);
        }
        Ok(model)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }
}
