//! Resolved run configuration: defaults, then the `--config` file, then flags.
//!
//! The config file is TOML with optional top-level keys and one table per
//! component:
//!
//! ```toml
//! seed = 7
//! vocab_min_count = 2
//!
//! [model]
//! embed_dim = 32
//! head_epochs = 60
//!
//! [split]
//! n_repeats = 30
//!
//! [svm]
//! c = 1.0
//!
//! [synth]
//! n_stories = 200
//!
//! [rsa]
//! tau = "a"
//! group = "mean_of_subjects"
//! ```
//!
//! `seed` is copied into the model, split and synth seeds.

use std::path::Path;

use affectlab::classify::{SplitSpec, SvmOptions};
use affectlab::rsa::{GroupMode, TauVariant};
use affectlab::textproc::DEFAULT_MIN_COUNT;
use affectlab::{Error, ModelConfig, Result, SynthConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsaOptions {
    pub tau: TauVariant,
    pub group: GroupMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_min_count: usize,
    pub model: ModelConfig,
    pub split: SplitSpec,
    pub svm: SvmOptions,
    pub synth: SynthConfig,
    pub rsa: RsaOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            vocab_min_count: DEFAULT_MIN_COUNT,
            model: ModelConfig::default(),
            split: SplitSpec::default(),
            svm: SvmOptions::default(),
            synth: SynthConfig::default(),
            rsa: RsaOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Loads `path` if given, otherwise defaults, then applies `seed`.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.model.seed = cfg.seed;
        cfg.split.seed = cfg.seed;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The resolved configuration as `# `-prefixed comment lines.
    pub fn header(&self, title: &str) -> String {
        let mut out = format!("# {title}\n# seed = {}\n", self.seed);
        for line in self.to_toml().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}
