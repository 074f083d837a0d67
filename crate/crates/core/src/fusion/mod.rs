//! Tri-modal cross-attention fusion, live-comment feature augmentation,
//! task heads, fine-tuning and linear probes.

mod check;
mod dataset;
mod lc;
mod model;
mod probe;
mod train;

pub use check::{fusion_gradcheck, GradCheckTask};
pub use dataset::{
    prepare_dataset, read_downstream_jsonl, DownstreamDataset, DownstreamRecord, DownstreamSample, LabelValue, Media,
    MediaRef, PreparedDataset, PreparedSample, Target, TextInput,
};
pub use lc::attach_lc_features;
pub use model::{
    cross_modality_fuse_on, stream_on, FusionModel, FusionState, FusionVars, HeadParams, InputDims, LcParams,
    ModalityFeatures, ModalityVars, RawFeatures, StreamParams,
};
pub use probe::{linear_probe, ProbeConfig, ProbeReport};
pub use train::{finetune, split_indices, EpochMetrics, FineTuned, PredictionRecord};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::eval::{Acc2Mode, EvalError};
use crate::numerics::{AdamConfig, NumericsError};
use crate::v2lc::V2lcError;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    V2lc(#[from] V2lcError),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("model has an LC branch but no LC features were supplied")]
    MissingLcFeatures,
    #[error("sample `{0}` has no media block for LC extraction")]
    MissingMedia(String),
    #[error("bad dataset: {0}")]
    BadDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

impl TaskSpec {
    pub fn regression(lo: f64, hi: f64) -> Self {
        Self { kind: TaskKind::Regression, label_range: Some([lo, hi]), class_names: Vec::new() }
    }

    pub fn classification<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self { kind: TaskKind::Classification, label_range: None, class_names: names.into_iter().map(Into::into).collect() }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        match self.kind {
            TaskKind::Regression => match self.label_range {
                Some([lo, hi]) if lo < hi && self.class_names.is_empty() => Ok(()),
                _ => Err(FusionError::InvalidConfig("regression needs label_range [lo, hi] and no class names".into())),
            },
            TaskKind::Classification => {
                if self.class_names.len() < 2 || self.label_range.is_some() {
                    Err(FusionError::InvalidConfig("classification needs at least 2 class names".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.kind {
            TaskKind::Regression => 1,
            TaskKind::Classification => self.class_names.len(),
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub use_lc: bool,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub acc2_mode: Acc2Mode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            head_hidden: 64,
            epochs: 30,
            batch_size: 32,
            patience: 5,
            validation_fraction: 0.2,
            seed: 0,
            adam: AdamConfig::default(),
            use_lc: true,
            vocab_size: 4000,
            max_tokens: 32,
            acc2_mode: Acc2Mode::NegVsNonneg,
        }
    }
}

impl FusionConfig {
    pub fn tiny() -> Self {
        Self { d_model: 8, heads: 2, head_hidden: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.head_hidden == 0 || self.batch_size == 0 || self.max_tokens == 0 || self.vocab_size < 2 {
            return bad("head_hidden, batch_size, max_tokens must be positive and vocab_size >= 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}
