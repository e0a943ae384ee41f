//! Scaling sweeps over descriptor size and cutoff, with power-law fits and
//! saturation diagnostics on the resulting loss curves.

mod fit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{count_parameters, DescriptorConfig, DescriptorError, DescriptorModel};
use crate::pretrain::{train, PretrainError, Structure, TrainConfig};

pub use fit::{detect_saturation, fit_power_law, PowerLawFit, SaturationReport};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("no width at depth {depth} lands within 10% of {budget} parameters (closest: width {best_width}, {best_count})")]
    BudgetUnreachable {
        budget: usize,
        depth: usize,
        best_width: usize,
        best_count: usize,
    },
    #[error("{found} points in the fit range, need {need}")]
    InsufficientPoints { found: usize, need: usize },
    #[error("power-law fit did not converge (best a = {a}, alpha = {alpha}, c = {c})")]
    FitFailed { a: f64, alpha: f64, c: f64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("training failed at {axis} = {value}")]
    Training {
        axis: SweepAxis,
        value: f64,
        #[source]
        source: PretrainError,
    },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

pub type Result<T> = std::result::Result<T, ScaleError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Width,
    Depth,
    Cutoff,
    /// Values are depths; each width is solved against `param_budget`.
    AspectRatio,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Width => "width",
            SweepAxis::Depth => "depth",
            SweepAxis::Cutoff => "cutoff",
            SweepAxis::AspectRatio => "aspect_ratio",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Fields not on the swept axis.
    pub base: DescriptorConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub param_budget: Option<usize>,
    /// Weight initialization seed, shared by every grid point.
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub config: DescriptorConfig,
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(ScaleError::InvalidGrid(format!("{what} values must be positive integers, got {v}")))
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(ScaleError::InvalidGrid("no grid values".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ScaleError::InvalidGrid("values must be strictly increasing".into()));
        }
        if self.axis == SweepAxis::AspectRatio && self.param_budget.is_none() {
            return Err(ScaleError::InvalidGrid("aspect_ratio sweeps need param_budget".into()));
        }
        Ok(())
    }

    /// Resolve every grid value to a concrete descriptor configuration.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.validate()?;
        self.values
            .iter()
            .map(|&v| {
                let mut config = self.base;
                match self.axis {
                    SweepAxis::Width => config.width = as_count(v, "width")?,
                    SweepAxis::Depth => config.depth = as_count(v, "depth")?,
                    SweepAxis::Cutoff => config.cutoff = v,
                    SweepAxis::AspectRatio => {
                        config.depth = as_count(v, "depth")?;
                        let budget = self.param_budget.expect("validated");
                        config.width = solve_width_for_budget(config.depth, budget, &self.base)?;
                    }
                }
                config.validate()?;
                Ok(SweepPoint { axis_value: v, config })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub axis_value: f64,
    pub config: DescriptorConfig,
    /// Trainable parameter count `N`.
    pub n_params: usize,
    /// Training structures processed, `D`.
    pub samples_seen: usize,
    /// `C = N * D`.
    pub compute: f64,
    pub first_epoch_loss: f64,
    pub converged_loss: f64,
}

/// Train one grid point from the shared initialization seed.
pub fn run_point(
    grid: &SweepGrid,
    point: &SweepPoint,
    train_set: &[Structure],
    validation: &[Structure],
) -> Result<ScalingRecord> {
    let wrap = |source| ScaleError::Training {
        axis: grid.axis,
        value: point.axis_value,
        source,
    };
    let model = DescriptorModel::init(point.config, grid.init_seed).map_err(|e| wrap(e.into()))?;
    let outcome = train(model, train_set, validation, &grid.train).map_err(wrap)?;
    let n_params = count_parameters(&point.config)?;
    let samples_seen = outcome.record.epochs.len() * train_set.len();
    Ok(ScalingRecord {
        axis_value: point.axis_value,
        config: point.config,
        n_params,
        samples_seen,
        compute: n_params as f64 * samples_seen as f64,
        first_epoch_loss: outcome.record.first_epoch_loss,
        converged_loss: outcome.record.converged_loss,
    })
}

/// Run the grid serially, one record per value in grid order.
pub fn run_sweep(grid: &SweepGrid, train_set: &[Structure], validation: &[Structure]) -> Result<Vec<ScalingRecord>> {
    grid.points()?
        .iter()
        .map(|p| run_point(grid, p, train_set, validation))
        .collect()
}

/// Width at `depth` whose parameter count is closest to `budget`, ties to
/// the smaller width. Fails when the closest count is off by more than 10%.
pub fn solve_width_for_budget(depth: usize, budget: usize, fixed: &DescriptorConfig) -> Result<usize> {
    let count = |width| {
        count_parameters(&DescriptorConfig {
            width,
            depth,
            ..*fixed
        })
    };
    let mut best = (usize::MAX, 1, count(1)?);
    for width in 1.. {
        let n = count(width)?;
        let gap = n.abs_diff(budget);
        if gap < best.0 {
            best = (gap, width, n);
        }
        if n >= budget {
            break;
        }
    }
    let (gap, width, n) = best;
    if gap as f64 > 0.1 * budget as f64 {
        return Err(ScaleError::BudgetUnreachable {
            budget,
            depth,
            best_width: width,
            best_count: n,
        });
    }
    Ok(width)
}

pub const RECORD_CSV_HEADER: &str = "axis_value,width,depth,cutoff,N,first_epoch_loss,converged_loss";

pub fn records_csv(records: &[ScalingRecord]) -> String {
    let mut s = format!("{RECORD_CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{:?},{},{},{:?},{},{:?},{:?}\n",
            r.axis_value, r.config.width, r.config.depth, r.config.cutoff, r.n_params, r.first_epoch_loss, r.converged_loss
        ));
    }
    s
}

/// One row of a records CSV, as read back for fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub n_params: f64,
    pub first_epoch_loss: f64,
    pub converged_loss: f64,
}

/// Parse a CSV carrying at least the `N`, `first_epoch_loss` and
/// `converged_loss` columns, in any order.
pub fn parse_records_csv(text: &str) -> Result<Vec<LossPoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| ScaleError::InvalidRecord("empty CSV".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| ScaleError::InvalidRecord(format!("missing column {name}")))
    };
    let (cn, cf, cc) = (col("N")?, col("first_epoch_loss")?, col("converged_loss")?);
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| -> Result<f64> {
                cells
                    .get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ScaleError::InvalidRecord(format!("row {}: bad value in column {}", i + 1, header[c])))
            };
            Ok(LossPoint {
                n_params: get(cn)?,
                first_epoch_loss: get(cf)?,
                converged_loss: get(cc)?,
            })
        })
        .collect()
}
