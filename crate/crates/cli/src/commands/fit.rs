use kinemb::scalelab::{detect_saturation, fit_power_law, parse_records_csv, LossPoint, PowerLawFit, SaturationReport, ScaleError};
use serde::Serialize;

use super::{read_input, to_json, Common};
use crate::config::{load, FitConfig};
use crate::error::{CliError, Result};
use crate::svg::{Mark, Plot, Series};

#[derive(Serialize)]
struct LossFits {
    /// `c = 0`
    pure: PowerLawFit,
    floored: Option<PowerLawFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    floored_error: Option<String>,
    /// Against the floored fit when there is one.
    saturation: SaturationReport,
}

#[derive(Serialize)]
struct FitReport {
    fit_range: Option<[f64; 2]>,
    first_epoch_loss: LossFits,
    converged_loss: LossFits,
}

pub fn fit(args: &Common) -> Result<()> {
    let loaded = load::<FitConfig>(&args.config)?;
    let c = &loaded.config;
    let mut bundle = args.bundle(&loaded, &c.output_dir)?;
    let bytes = read_input(&loaded, &mut bundle, &c.records)?;
    let malformed = |source| CliError::Records {
        path: c.records.clone(),
        source,
    };
    let text = String::from_utf8(bytes).map_err(|_| malformed(ScaleError::InvalidRecord("not UTF-8".into())))?;
    let rows = parse_records_csv(&text).map_err(malformed)?;
    let range = c.fit_range.map(|[lo, hi]| (lo, hi));

    let fit_one = |f: fn(&LossPoint) -> f64| -> Result<(Vec<(f64, f64)>, LossFits)> {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_params, f(r))).collect();
        let pure = fit_power_law(&pts, range, false).map_err(|e| match e {
            ScaleError::InvalidRecord(_) => malformed(e),
            other => other.into(),
        })?;
        let (floored, floored_error) = match fit_power_law(&pts, range, true) {
            Ok(fit) => (Some(fit), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let saturation = detect_saturation(&pts, floored.as_ref().unwrap_or(&pure));
        Ok((pts, LossFits { pure, floored, floored_error, saturation }))
    };
    let (first_pts, first) = fit_one(|r| r.first_epoch_loss)?;
    let (conv_pts, converged) = fit_one(|r| r.converged_loss)?;

    let mut series = Vec::new();
    for (label, pts, fits) in [("first epoch", &first_pts, &first), ("converged", &conv_pts, &converged)] {
        let best = fits.floored.as_ref().unwrap_or(&fits.pure);
        series.push(Series {
            label: label.into(),
            points: pts.clone(),
            mark: Mark::Points,
        });
        series.push(Series {
            label: format!("{label} fit"),
            points: curve(best, pts),
            mark: Mark::Dashed,
        });
    }
    let plot = Plot {
        title: "loss vs parameters".into(),
        x_label: "parameters N".into(),
        y_label: "validation loss".into(),
        log_x: true,
        log_y: true,
        series,
    };
    bundle.add(
        "fit.json",
        to_json(&FitReport {
            fit_range: c.fit_range,
            first_epoch_loss: first,
            converged_loss: converged,
        }),
    );
    bundle.add("fit.svg", plot.render());
    bundle.finish("fit", &loaded.raw)
}

/// Fitted curve at 50 log-spaced points across the data.
fn curve(fit: &PowerLawFit, pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ln();
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ln();
    (0..50)
        .map(|i| {
            let n = (lo + (hi - lo) * i as f64 / 49.0).exp();
            (n, fit.predict(n))
        })
        .collect()
}
