//! Video-to-live-comment encoder, frozen comment encoder, multi-positive
//! contrastive objective, pre-training and feature extraction.

mod check;
mod extract;
mod model;
mod objective;
mod retrieval;
mod train;
mod vocab;

pub use check::{v2lc_gradcheck, GRADCHECK_EPS};
pub use extract::{extract_lc_features, window_offsets, Utterance, V2LCArtifact};
pub use model::{CommentEncoder, CrossModalState, CrossModalVars, SegmentInput, V2LCConfig, V2LCModel, TAU_MIN};
pub use objective::{build_targets, contrastive_loss, contrastive_loss_value, TargetMatrix};
pub use retrieval::{retrieval_eval, RetrievalReport};
pub use train::{
    build_vocab, encode_all, evaluate_retrieval, initialize, pretrain, EpochRecord, PreparedSegments, PretrainLog,
    Pretrained, RunSeeds, StepRecord,
};
pub use vocab::{split_tokens, TokenSeq, Vocab, PAD_ID, UNK_ID};

use crate::corpus::CorpusError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum V2lcError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("target row {0} has no positive")]
    EmptyPositiveRow(usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("expected unit-norm embeddings: {0}")]
    NotUnitNorm(String),
    #[error("utterance has no frames")]
    EmptyMedia,
    #[error("invalid batch: {0}")]
    BadBatch(String),
    #[error("invalid v2lc config: {0}")]
    InvalidConfig(String),
    #[error("sidecar: {0}")]
    Sidecar(String),
}
