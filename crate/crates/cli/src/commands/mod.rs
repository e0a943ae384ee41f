mod embed;
mod fit;
mod pretrain;
mod simulate;
mod sweep;
mod vamp;

use std::path::{Path, PathBuf};

use clap::Args;
use kinemb::pretrain::Structure;
use kinemb::trajio::{split_indices, SplitMode, SplitSpec};

pub use embed::embed;
pub use fit::fit;
pub use pretrain::pretrain;
pub use simulate::simulate;
pub use sweep::sweep;
pub use vamp::vamp;

use crate::bundle::Bundle;
use crate::config::{CorpusSection, Loaded};
use crate::error::{io_err, CliError, Result};

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, visible_alias = "spec")]
    pub config: PathBuf,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the contents of an existing output directory.
    #[arg(long)]
    pub force: bool,
}

impl Common {
    pub fn bundle<T>(&self, loaded: &Loaded<T>, output_dir: &Path) -> Result<Bundle> {
        let dir = match &self.out {
            Some(p) => p.clone(),
            None => loaded.resolve(output_dir),
        };
        Bundle::open(dir, self.force)
    }
}

/// Read an input file and record its hash under the config's spelling.
pub fn read_input<T>(loaded: &Loaded<T>, bundle: &mut Bundle, path: &Path) -> Result<Vec<u8>> {
    let full = loaded.resolve(path);
    let bytes = std::fs::read(&full).map_err(io_err(&full))?;
    bundle.input(&path.to_string_lossy(), &bytes);
    Ok(bytes)
}

/// Toy corpus split into training and validation structures.
pub fn corpus_split(data: &CorpusSection, seed: u64, config_path: &Path) -> Result<(Vec<Structure>, Vec<Structure>)> {
    if !(data.validation_fraction > 0.0 && data.validation_fraction < 1.0) {
        return Err(CliError::Config {
            path: config_path.to_path_buf(),
            message: format!("validation_fraction {} outside (0, 1)", data.validation_fraction),
        });
    }
    let corpus = kinemb::pretrain::toy_corpus(&data.spec(seed));
    let split = split_indices(corpus.len(), &SplitSpec::new(SplitMode::Random, 1.0 - data.validation_fraction, seed))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok((pick(&split.train), pick(&split.validation)))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
