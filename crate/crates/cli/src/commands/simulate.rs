use kinemb::pretrain::{cluster_dynamics, toy_corpus, CorpusSpec};
use kinemb::trajio::{encode_fmb, sample_langevin, sample_markov, write_xyz, LangevinSpec, MarkovSpec, Trajectory};

use super::Common;
use crate::config::{load, Generator, SimulateConfig};
use crate::error::{CliError, Result};

pub fn simulate(args: &Common) -> Result<()> {
    let loaded = load::<SimulateConfig>(&args.config)?;
    let c = &loaded.config;
    let mut bundle = args.bundle(&loaded, &c.output_dir)?;
    match &c.generator {
        Generator::Markov {
            transition,
            length,
            initial_state,
        } => {
            let spec = MarkovSpec {
                transition: transition.clone(),
                length: *length,
                seed: c.seed,
                initial_state: *initial_state,
            };
            bundle.add("series.fmb", encode_fmb(&sample_markov(&spec)?));
        }
        Generator::Langevin {
            potential,
            step_size,
            temperature,
            length,
            initial,
            stride,
        } => {
            let spec = LangevinSpec {
                potential: *potential,
                step_size: *step_size,
                temperature: *temperature,
                length: *length,
                seed: c.seed,
                initial: initial.clone(),
                stride: *stride,
            };
            bundle.add("series.fmb", encode_fmb(&sample_langevin(&spec)?));
        }
        Generator::Cluster {
            n_atoms,
            temperature,
            n_frames,
            stride,
            dt,
        } => {
            if *n_atoms < 2 || *n_frames == 0 || !(*temperature >= 0.0) {
                return Err(CliError::Config {
                    path: args.config.clone(),
                    message: "cluster needs n_atoms >= 2, n_frames >= 1 and temperature >= 0".into(),
                });
            }
            let spec = CorpusSpec {
                min_atoms: *n_atoms,
                max_atoms: *n_atoms,
                ..CorpusSpec::new(1, c.seed)
            };
            let start = &toy_corpus(&spec)[0];
            let frames = cluster_dynamics(start, *temperature, *n_frames, *stride, c.seed);
            let traj = Trajectory::new(frames, start.atomic_numbers.clone(), *dt, format!("cluster{n_atoms}-seed{}", c.seed))?;
            bundle.add("trajectory.xyz", write_xyz(&traj)?);
        }
    }
    bundle.finish("simulate", &loaded.raw)
}
