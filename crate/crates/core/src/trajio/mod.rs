//! Trajectory and feature-series ingestion, synthetic generators and splits.

mod fmb;
mod generate;
mod split;
mod xyz;

pub use fmb::{decode_fmb, encode_fmb, read_fmb, write_fmb, FMB_MAGIC};
pub use generate::{
    sample_langevin, sample_markov, sample_markov_states, LangevinSpec, MarkovSpec, Potential,
};
pub use split::{split_indices, split_series, Split, SplitMode, SplitSpec};
pub use xyz::{element_symbol, parse_xyz, symbol_to_atomic_number, write_xyz};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),
    #[error("frame {frame} has {found} atoms, expected {expected}")]
    InconsistentFrames {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("matrix size {rows}x{cols} overflows addressable memory")]
    SizeOverflow { rows: u64, cols: u64 },
    #[error("feature series needs at least 2 frames and 1 column, got {rows}x{cols}")]
    EmptySeries { rows: usize, cols: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("transition matrix is not row-stochastic: {0}")]
    NonStochastic(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("integration diverged at step {step}")]
    UnstableIntegration { step: usize },
    #[error("split leaves an empty part ({train} train, {validation} validation)")]
    EmptySplit { train: usize, validation: usize },
    #[error("split mode {0:?} is not applicable here")]
    InvalidSplit(SplitMode),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrajError>;

/// A time-ordered sequence of atomic frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    frames: Vec<Vec<[f64; 3]>>,
    atomic_numbers: Vec<u8>,
    dt: f64,
    id: String,
}

impl Trajectory {
    pub fn new(
        frames: Vec<Vec<[f64; 3]>>,
        atomic_numbers: Vec<u8>,
        dt: f64,
        id: impl Into<String>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajError::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        if atomic_numbers.iter().any(|&z| z == 0) {
            return Err(TrajError::InvalidSpec("atomic numbers must be positive".into()));
        }
        for (f, frame) in frames.iter().enumerate() {
            if frame.len() != atomic_numbers.len() {
                return Err(TrajError::InconsistentFrames {
                    frame: f,
                    expected: atomic_numbers.len(),
                    found: frame.len(),
                });
            }
            for (i, c) in frame.iter().enumerate() {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(TrajError::NonFinite { row: f, col: i });
                }
            }
        }
        Ok(Self {
            frames,
            atomic_numbers,
            dt,
            id: id.into(),
        })
    }

    pub fn frames(&self) -> &[Vec<[f64; 3]>] {
        &self.frames
    }

    pub fn atomic_numbers(&self) -> &[u8] {
        &self.atomic_numbers
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajError::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        self.dt = dt;
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// A `T x k` matrix of per-frame features, rows in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    values: DMatrix<f64>,
    source_id: String,
    dt: f64,
}

impl FeatureSeries {
    pub fn new(values: DMatrix<f64>, source_id: impl Into<String>, dt: f64) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows < 2 || cols == 0 {
            return Err(TrajError::EmptySeries { rows, cols });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(TrajError::NonFinite {
                row: idx % rows,
                col: idx / rows,
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajError::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
            dt,
        })
    }

    /// Build from row-major data.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TrajError::MalformedInput(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data), "", 1.0)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Contiguous frame range `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(TrajError::MalformedInput(format!(
                "frame range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let rows = end - start;
        Self::new(
            self.values.rows(start, rows).into_owned(),
            self.source_id.clone(),
            self.dt,
        )
    }
}
