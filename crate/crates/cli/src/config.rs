use std::fs;
use std::path::Path;

use lcaffect_core::corpus::CorpusConfig;
use lcaffect_core::fusion::{FusionConfig, TaskSpec};
use lcaffect_core::seed;
use lcaffect_core::synthgen::{SynthConfig, SynthTask};
use lcaffect_core::v2lc::V2LCConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseProfile {
    #[default]
    Clean,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub world: SynthConfig,
    pub videos: usize,
    pub downstream_samples: usize,
    pub task: SynthTask,
    pub profile: NoiseProfile,
    /// Seeds the shared embeddings and vocabularies.
    pub seed: u64,
    /// Seeds the downstream samples; derived from `seed` when absent.
    pub sample_seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            world: SynthConfig::default(),
            videos: 32,
            downstream_samples: 2000,
            task: SynthTask::Regression,
            profile: NoiseProfile::Clean,
            seed: 0,
            sample_seed: None,
        }
    }
}

impl SynthSection {
    pub fn corpus_seed(&self) -> u64 {
        seed::derive(self.seed, &[b"pretrain-corpus"])
    }

    pub fn downstream_seed(&self) -> u64 {
        self.sample_seed.unwrap_or_else(|| seed::derive(self.seed, &[b"downstream"]))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Applied to every section when set; `--seed` wins over it.
    pub seed: Option<u64>,
    pub precision: Precision,
    pub corpus: CorpusConfig,
    pub v2lc: V2LCConfig,
    pub fusion: FusionConfig,
    pub synth: SynthSection,
    /// Downstream task; inferred from the labels when absent.
    pub task: Option<TaskSpec>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Folds command-line overrides in.
    pub fn resolve(mut self, seed: Option<u64>, precision: Option<Precision>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.corpus.seed = s;
            self.v2lc.seed = s;
            self.fusion.seed = s;
            self.synth.seed = s;
        }
        if let Some(p) = precision {
            self.precision = p;
        }
        self
    }
}
