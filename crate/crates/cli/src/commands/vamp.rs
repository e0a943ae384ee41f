use kinemb::koopman::{
    encode_model, estimate_covariances, half_weighted, linear_vamp, score_report, singular_functions, vamp2_score,
    KoopmanModel, LagSpec, ScoreReport,
};
use kinemb::trajio::{decode_fmb, split_series, FeatureSeries, SplitSpec};
use kinemb::vamphead::{encode_head, head_forward, train_vamp, HeadConfig, MixerConfig, TrainVampConfig, VampHead};
use serde::Serialize;

use super::{read_input, to_json, Common};
use crate::config::{load, VampConfig, VampModel};
use crate::error::{CliError, Result};
use crate::svg::{thin, Mark, Plot, Series};

#[derive(Serialize)]
struct Scores {
    kind: &'static str,
    lag: usize,
    out_dim: usize,
    train_pairs: usize,
    /// Score of the fitted projection on the training split.
    train_score: f64,
    validation_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_validation_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopped_early: Option<bool>,
    /// Koopman model over the outputs on the training split.
    model: ScoreReport,
}

fn check_lag(series: &[FeatureSeries], lag: usize) -> Result<()> {
    for s in series {
        if lag >= s.len() {
            return Err(CliError::LagTooLarge {
                lag,
                len: s.len(),
                id: s.source_id().to_string(),
            });
        }
    }
    Ok(())
}

fn map_series(series: &[FeatureSeries], f: impl Fn(&FeatureSeries) -> Result<nalgebra::DMatrix<f64>>) -> Result<Vec<FeatureSeries>> {
    series
        .iter()
        .map(|s| Ok(FeatureSeries::new(f(s)?, s.source_id(), s.dt())?))
        .collect()
}

fn score_of(series: &[FeatureSeries], lag: LagSpec, eps: f64) -> Result<(KoopmanModel, f64)> {
    let model = half_weighted(&estimate_covariances(series, lag)?, eps)?;
    let score = vamp2_score(&model);
    Ok((model, score))
}

pub fn vamp(args: &Common) -> Result<()> {
    let loaded = load::<VampConfig>(&args.config)?;
    let c = &loaded.config;
    if c.lag == 0 {
        return Err(CliError::Config {
            path: args.config.clone(),
            message: "lag must be >= 1".into(),
        });
    }
    let mut bundle = args.bundle(&loaded, &c.output_dir)?;
    let mut series = Vec::with_capacity(c.features.len());
    for p in &c.features {
        let bytes = read_input(&loaded, &mut bundle, p)?;
        let s = decode_fmb(&bytes).map_err(|source| CliError::Input { path: p.clone(), source })?;
        series.push(s.with_source(p.to_string_lossy()));
    }
    if series.is_empty() {
        return Err(CliError::Config {
            path: args.config.clone(),
            message: "features is empty".into(),
        });
    }
    check_lag(&series, c.lag)?;
    let (train, validation) = split_series(&series, &SplitSpec::new(c.split.mode, c.split.fraction, c.seed))?;
    check_lag(&train, c.lag)?;
    check_lag(&validation, c.lag)?;
    let lag = LagSpec::new(c.lag);
    let eps = c.rank_epsilon;

    let (scores, train_out, val_out) = match &c.model {
        VampModel::Linear { out_dim } => {
            let lv = linear_vamp(&train, lag, *out_dim, eps)?;
            let train_out = map_series(&train, |s| Ok(lv.transform(s.values())?))?;
            let val_out = map_series(&validation, |s| Ok(lv.transform(s.values())?))?;
            let (model, _) = score_of(&train_out, lag, eps)?;
            let (_, val_score) = score_of(&val_out, lag, eps)?;
            bundle.add("linear.kpm", encode_model(&lv.model));
            let scores = Scores {
                kind: "linear",
                lag: c.lag,
                out_dim: *out_dim,
                train_pairs: model.cov.n_pairs,
                train_score: lv.score,
                validation_score: val_score,
                initial_validation_score: None,
                stopped_early: None,
                model: score_report(&model),
            };
            (scores, train_out, val_out)
        }
        VampModel::Head {
            out_dim,
            hidden,
            mixer,
            train: t,
        } => {
            let dim = train[0].dim();
            let config = HeadConfig {
                mixer: mixer.unwrap_or_else(|| MixerConfig::sum(1, dim)),
                hidden: hidden.clone(),
                out_dim: *out_dim,
            };
            let head = VampHead::init(config, c.seed)?;
            let tcfg = TrainVampConfig {
                epochs: t.epochs,
                batch_size: t.batch_size,
                learning_rate: t.learning_rate,
                seed: c.seed,
                early_stop_patience: t.early_stop_patience,
                eval_every: t.eval_every,
                rank_epsilon: eps,
            };
            let out = train_vamp(head, &train, &validation, lag, &tcfg)?;
            let train_out = map_series(&train, |s| Ok(head_forward(&out.head, s.values())?))?;
            let val_out = map_series(&validation, |s| Ok(head_forward(&out.head, s.values())?))?;
            let (model, train_score) = score_of(&train_out, lag, eps)?;
            bundle.add("head.vhm", encode_head(&out.head));
            bundle.add("history.csv", out.history_csv());
            let scores = Scores {
                kind: "head",
                lag: c.lag,
                out_dim: *out_dim,
                train_pairs: model.cov.n_pairs,
                train_score,
                validation_score: out.best_val_score,
                initial_validation_score: Some(out.initial_val_score),
                stopped_early: Some(out.stopped_early),
                model: score_report(&model),
            };
            (scores, train_out, val_out)
        }
    };
    let (model, _) = score_of(&train_out, lag, eps)?;
    bundle.add("koopman.kpm", encode_model(&model));
    bundle.add("scores.json", to_json(&scores));
    bundle.add("psi.svg", psi_plot(&model, &validation, &val_out)?.render());
    bundle.finish("vamp", &loaded.raw)
}

/// First left singular function against the first input feature, on the
/// validation frames.
fn psi_plot(model: &KoopmanModel, raw: &[FeatureSeries], outputs: &[FeatureSeries]) -> Result<Plot> {
    let mut points = Vec::new();
    for (r, o) in raw.iter().zip(outputs) {
        let proj = singular_functions(model, o)?;
        for t in proj.psi_frames.clone() {
            points.push((r.values()[(t, 0)], proj.psi[(t, 0)]));
        }
    }
    Ok(Plot {
        title: "first singular function".into(),
        x_label: "feature 0".into(),
        y_label: "psi_1".into(),
        series: vec![Series {
            label: "validation".into(),
            points: thin(&points, 2000),
            mark: Mark::Points,
        }],
        ..Plot::default()
    })
}
