//! Layered run configuration: built-in defaults, then a TOML file (from
//! `--config` or `C2F_CONFIG`), then command-line flags.

use std::path::{Path, PathBuf};

use c2f_core::config::{AttrConfig, DecodeConfig, SkelConfig, TrainConfig};
use c2f_core::corpus::SynthConfig;
use c2f_core::metrics::CiderConfig;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

pub const CONFIG_ENV: &str = "C2F_CONFIG";
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub generator: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            train: 20_000,
            val: 1_000,
            test: 2_000,
            generator: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub skeleton_threshold: u64,
    pub attribute_threshold: u64,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            skeleton_threshold: 5,
            attribute_threshold: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset manifest written by `synth`.
    pub data: Option<PathBuf>,
    pub skel: Option<PathBuf>,
    pub attr: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds synthesis and parameter initialization.
    pub seed: u64,
    /// Worker threads for captioning; 0 lets the pool decide.
    pub jobs: usize,
    pub paths: Paths,
    pub synth: SynthSection,
    pub vocab: VocabSection,
    pub skel: SkelConfig,
    pub attr: AttrConfig,
    pub train_skel: TrainConfig,
    pub train_attr: TrainConfig,
    pub decode: DecodeConfig,
    pub cider: CiderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            jobs: 1,
            paths: Paths::default(),
            synth: SynthSection::default(),
            vocab: VocabSection::default(),
            skel: SkelConfig::default(),
            attr: AttrConfig::default(),
            train_skel: TrainConfig::default(),
            train_attr: TrainConfig::attr_default(),
            decode: DecodeConfig::default(),
            cider: CiderConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `explicit`, or with the file named by
    /// `C2F_CONFIG` when no path is given.
    pub fn load(explicit: Option<&Path>) -> Outcome<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    /// Override every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train_skel.seed = seed;
        self.train_attr.seed = seed;
    }

    pub fn to_toml(&self) -> Outcome<String> {
        toml::to_string(self).map_err(|e| Failure::data(format!("config serialization: {e}")))
    }

    /// Write the effective configuration into an output directory.
    pub fn echo(&self, dir: &Path) -> Outcome<()> {
        let p = dir.join(ECHO_FILE);
        std::fs::write(&p, self.to_toml()?).map_err(|e| Failure::io(&p, e))
    }
}

pub fn require_path(what: &str, p: Option<&PathBuf>) -> Outcome<PathBuf> {
    let p = p.ok_or_else(|| Failure::usage(format!("no {what} given (flag or config paths section)")))?;
    if !p.exists() {
        return Err(Failure::usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p.clone())
}
