use std::fs;
use std::path::{Path, PathBuf};

use rank_denoise::pipeline::{PathsConfig, PipelineConfig};

use crate::artifacts::sha1_hex;
use crate::exit::Failure;

/// Reads a TOML config; a missing `--config` means all defaults.
pub fn load(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_train: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.n_train {
            config.synth.n_train = n;
        }
    }
}

/// Directories of one run, with relative config paths resolved against `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, paths: &PathsConfig) -> Self {
        Layout {
            corpus: out.join(&paths.corpus),
            checkpoints: out.join(&paths.checkpoints),
            reports: out.join(&paths.reports),
        }
    }

    pub fn checkpoint(&self, n: u8) -> PathBuf {
        self.checkpoints.join(format!("stage{n}.ckpt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports.join(name)
    }
}

/// Hash of the effective configuration, over its canonical JSON form.
pub fn config_hash(config: &PipelineConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    sha1_hex(&json)
}

/// The default configuration as a TOML document, shown in `--help`.
pub fn default_toml() -> String {
    toml::to_string(&PipelineConfig::default()).expect("default config serializes")
}
