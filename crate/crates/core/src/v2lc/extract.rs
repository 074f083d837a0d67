use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CommentEncoder, SegmentInput, V2LCConfig, V2LCModel};
use super::vocab::Vocab;
use super::V2lcError;
use crate::corpus::{frame_times, FrameFeatures};
use crate::numerics::{Checkpoint, Real, Tensor};

/// Transcript and frame features of one downstream utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub transcript: String,
    pub frames: FrameFeatures,
}

/// Start offsets of the `σ`-second windows with stride `σ/2`.
pub fn window_offsets(duration_s: f64, sigma_s: f64) -> Vec<f64> {
    let stride = sigma_s / 2.0;
    let extra = ((duration_s - sigma_s) / stride + 1e-9).floor();
    let w = if extra < 0.0 { 1 } else { extra as usize + 1 };
    (0..w).map(|i| i as f64 * stride).collect()
}

/// One unit-norm row per window. Frame lookups past the end of the
/// recording repeat its last frame.
pub fn extract_lc_features<T: Real>(
    model: &V2LCModel<T>,
    vocab: &Vocab,
    utterance: &Utterance,
) -> Result<Tensor<T>, V2lcError> {
    let frames = &utterance.frames;
    if frames.n_frames == 0 || frames.fps_milli == 0 || !(frames.duration_s() > 0.0) {
        return Err(V2lcError::EmptyMedia);
    }
    let cfg = &model.config;
    let tokens = vocab.tokenize(&utterance.transcript, cfg.max_tokens);
    let mut rows = Vec::new();
    for start in window_offsets(frames.duration_s(), cfg.sigma_s) {
        let sampled: Vec<Vec<f32>> = frame_times(start, cfg.sigma_s, cfg.frames_per_segment)
            .map(|t| frames.row(frames.index_at(t)).to_vec())
            .collect();
        let input = SegmentInput::from_rows(tokens.clone(), &sampled)?;
        rows.push(model.encode_segment(&input)?.s);
    }
    Ok(Tensor::from_rows(&rows)?)
}

/// Sidecar stored next to a V2LC checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct V2LCArtifact {
    pub config: V2LCConfig,
    pub frame_dim: usize,
    pub comment_encoder_seed: u64,
    pub vocab: Vocab,
}

impl V2LCArtifact {
    pub fn describe<T: Real>(model: &V2LCModel<T>, encoder: &CommentEncoder<T>, vocab: &Vocab) -> Self {
        Self { config: model.config.clone(), frame_dim: model.frame_dim, comment_encoder_seed: encoder.seed, vocab: vocab.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<(), V2lcError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| V2lcError::Sidecar(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| V2lcError::Sidecar(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, V2lcError> {
        let text = fs::read_to_string(path).map_err(|e| V2lcError::Sidecar(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| V2lcError::Sidecar(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the model skeleton and fills it from `checkpoint`.
    pub fn restore<T: Real>(&self, checkpoint: &Checkpoint) -> Result<V2LCModel<T>, V2lcError> {
        let mut model = V2LCModel::new(&self.config, self.vocab.len(), self.frame_dim, 0)?;
        checkpoint.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn comment_encoder<T: Real>(&self) -> CommentEncoder<T> {
        CommentEncoder::new(self.vocab.len(), &self.config, self.comment_encoder_seed)
    }
}
