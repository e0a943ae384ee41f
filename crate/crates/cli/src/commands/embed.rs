//! Row `t` of the output holds the pooled tokens of frame `t`, concatenated
//! in window order: columns `k * width .. (k + 1) * width` belong to window
//! `k`, which for residue windows is the window centred on residue `k`.

use kinemb::descriptor::{decode_checkpoint, forward, pool, residue_windows, whole_graph, DescriptorError, PoolMode};
use kinemb::geomgraph::build_radius_graph;
use kinemb::trajio::{encode_fmb, parse_xyz, FeatureSeries};
use nalgebra::DMatrix;
use serde::Serialize;

use super::{read_input, to_json, Common};
use crate::config::{load, EmbedConfig, Pooling};
use crate::error::{CliError, Result};

#[derive(Serialize)]
struct TokenLayout {
    n_frames: usize,
    n_tokens: usize,
    width: usize,
    windows: Vec<Vec<usize>>,
}

pub fn embed(args: &Common) -> Result<()> {
    let loaded = load::<EmbedConfig>(&args.config)?;
    let c = &loaded.config;
    let mut bundle = args.bundle(&loaded, &c.output_dir)?;
    let model = decode_checkpoint(&read_input(&loaded, &mut bundle, &c.checkpoint)?)?;
    let traj_bytes = read_input(&loaded, &mut bundle, &c.trajectory)?;
    let text = String::from_utf8(traj_bytes).map_err(|_| CliError::Usage(format!("{} is not UTF-8", c.trajectory.display())))?;
    let traj = parse_xyz(&text).map_err(|source| CliError::Input {
        path: c.trajectory.clone(),
        source,
    })?;
    let grouping = match &c.pooling {
        Pooling::WholeGraph => whole_graph(traj.n_atoms()),
        Pooling::ResidueWindows { residues, half_width } => {
            if residues.len() != traj.n_atoms() {
                return Err(CliError::Config {
                    path: args.config.clone(),
                    message: format!("{} residue ids for {} atoms", residues.len(), traj.n_atoms()),
                });
            }
            residue_windows(residues, *half_width)?
        }
    };
    let width = model.config.width;
    let mut m = DMatrix::zeros(traj.n_frames(), grouping.len() * width);
    for (t, frame) in traj.frames().iter().enumerate() {
        let graph = build_radius_graph(frame, model.config.cutoff).map_err(DescriptorError::from)?;
        let out = forward(&model, &graph, traj.atomic_numbers())?;
        let tokens = pool(&out.embeddings, &grouping, PoolMode::Sum)?;
        for (k, v) in tokens.flatten().into_iter().enumerate() {
            m[(t, k)] = v;
        }
    }
    let series = FeatureSeries::new(m, traj.id(), traj.dt())?;
    bundle.add("embeddings.fmb", encode_fmb(&series));
    bundle.add(
        "tokens.json",
        to_json(&TokenLayout {
            n_frames: traj.n_frames(),
            n_tokens: grouping.len(),
            width,
            windows: grouping,
        }),
    );
    bundle.finish("embed", &loaded.raw)
}
