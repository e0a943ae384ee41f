use kinemb::scalelab::{records_csv, run_point, ScalingRecord, SweepAxis, SweepGrid};
use rayon::prelude::*;

use super::{corpus_split, to_json, Common};
use crate::config::{load, SweepConfig};
use crate::error::{CliError, Result};
use crate::svg::{Mark, Plot, Series};

/// Grid points train in parallel on `jobs` threads; records keep grid order.
pub fn sweep(args: &Common, jobs: usize) -> Result<()> {
    let loaded = load::<SweepConfig>(&args.config)?;
    let c = &loaded.config;
    let mut bundle = args.bundle(&loaded, &c.output_dir)?;
    let grid = SweepGrid {
        axis: c.axis,
        values: c.values.clone(),
        base: c.base,
        train: c.train.with_seed(c.seed),
        param_budget: c.param_budget,
        init_seed: c.seed,
    };
    let points = grid.points()?;
    let (train_set, validation) = corpus_split(&c.data, c.seed, &args.config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs {jobs}: {e}")))?;
    let records = pool.install(|| {
        points
            .par_iter()
            .map(|p| run_point(&grid, p, &train_set, &validation))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    bundle.add("records.csv", records_csv(&records));
    bundle.add("records.json", to_json(&records));
    bundle.add("loss.svg", sweep_plot(c.axis, &records).render());
    bundle.finish("sweep", &loaded.raw)
}

fn sweep_plot(axis: SweepAxis, records: &[ScalingRecord]) -> Plot {
    // cutoff sweeps share N across points, so plot against the radius
    let by_cutoff = axis == SweepAxis::Cutoff;
    let x = |r: &ScalingRecord| if by_cutoff { r.axis_value } else { r.n_params as f64 };
    let curve = |label: &str, f: fn(&ScalingRecord) -> f64| Series {
        label: label.into(),
        points: records.iter().map(|r| (x(r), f(r))).collect(),
        mark: Mark::Line,
    };
    Plot {
        title: format!("{axis} sweep"),
        x_label: if by_cutoff { "cutoff".into() } else { "parameters N".into() },
        y_label: "validation loss".into(),
        log_x: !by_cutoff,
        log_y: !by_cutoff,
        series: vec![
            curve("first epoch", |r| r.first_epoch_loss),
            curve("converged", |r| r.converged_loss),
        ],
    }
}
