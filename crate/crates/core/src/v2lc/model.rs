use serde::{Deserialize, Serialize};

use super::vocab::TokenSeq;
use super::V2lcError;
use crate::numerics::{
    attention, mean_pool, normal_tensor, sinusoidal_positions, AdamConfig, Checkpoint, Linear, NumericsError,
    ParamId, ParamStore, ProjectionParams, Real, Tape, Tensor, TransformerBlock, Var,
};
use crate::seed;

/// Lower clamp for the learned inverse temperature.
pub const TAU_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct V2LCConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub sigma_s: f64,
    pub frames_per_segment: usize,
    pub theta: f64,
    pub tau_init: f64,
    pub tau_max: f64,
    pub batch_n: usize,
    pub comments_per_segment: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub eval_candidates: usize,
    pub eval_probes: usize,
}

impl Default for V2LCConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            vocab_size: 8000,
            max_tokens: 32,
            sigma_s: 8.0,
            frames_per_segment: 8,
            theta: 0.9,
            tau_init: 14.3,
            tau_max: 100.0,
            batch_n: 8,
            comments_per_segment: 5,
            epochs: 10,
            seed: 0,
            adam: AdamConfig::default(),
            eval_candidates: 64,
            eval_probes: 500,
        }
    }
}

impl V2LCConfig {
    /// The small model used by gradient checks.
    pub fn tiny() -> Self {
        Self { d_model: 8, layers: 1, heads: 2, max_tokens: 8, frames_per_segment: 4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), V2lcError> {
        let bad = |m: &str| Err(V2lcError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.vocab_size < 2 || self.max_tokens == 0 {
            return bad("vocab_size must be >= 2 and max_tokens >= 1");
        }
        if !(self.sigma_s > 0.0) || self.frames_per_segment == 0 {
            return bad("sigma_s and frames_per_segment must be positive");
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [-1, 1]");
        }
        if !(self.tau_init > 0.0) || !(self.tau_max >= self.tau_init) {
            return bad("need 0 < tau_init <= tau_max");
        }
        if self.batch_n == 0 || self.comments_per_segment == 0 {
            return bad("batch_n and comments_per_segment must be positive");
        }
        if self.eval_candidates < 2 {
            return bad("eval_candidates must be at least 2");
        }
        Ok(())
    }
}

/// Transcript tokens and sampled frame rows of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInput<T> {
    pub tokens: TokenSeq,
    pub frames: Tensor<T>,
}

impl<T: Real> SegmentInput<T> {
    pub fn from_rows(tokens: TokenSeq, frames: &[Vec<f32>]) -> Result<Self, V2lcError> {
        let rows: Vec<Vec<T>> = frames.iter().map(|r| r.iter().map(|&v| T::of(v as f64)).collect()).collect();
        Ok(Self { tokens, frames: Tensor::from_rows(&rows)? })
    }
}

/// Tape handles for the intermediate streams of one encoded segment.
#[derive(Debug, Clone, Copy)]
pub struct CrossModalVars {
    pub s_t: Var,
    pub s_f: Var,
    pub joined: Var,
    pub s: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalState<T> {
    pub s_t: Tensor<T>,
    pub s_f: Tensor<T>,
    pub s: Vec<T>,
}

fn stack_blocks<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    blocks: &[TransformerBlock],
    mut x: Var,
) -> Result<Var, NumericsError> {
    for block in blocks {
        x = block.forward(tape, store, x)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
struct V2LCLayout {
    token_embedding: ParamId,
    frame_proj: Linear,
    text_to_frame: ProjectionParams,
    frame_to_text: ProjectionParams,
    blocks: Vec<TransformerBlock>,
    tau: ParamId,
}

/// Trainable video-to-live-comment encoder.
#[derive(Debug)]
pub struct V2LCModel<T> {
    pub config: V2LCConfig,
    pub vocab_len: usize,
    pub frame_dim: usize,
    pub store: ParamStore<T>,
    layout: V2LCLayout,
}

impl<T: Real> Clone for V2LCModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            vocab_len: self.vocab_len,
            frame_dim: self.frame_dim,
            store: self.store.clone(),
            layout: self.layout.clone(),
        }
    }
}

impl<T: Real> V2LCModel<T> {
    pub fn new(config: &V2LCConfig, vocab_len: usize, frame_dim: usize, init_seed: u64) -> Result<Self, V2lcError> {
        config.validate()?;
        if frame_dim == 0 || vocab_len < 2 {
            return Err(V2lcError::InvalidConfig("frame_dim must be positive and vocab_len >= 2".into()));
        }
        let d = config.d_model;
        let mut rng = seed::rng(init_seed);
        let mut store = ParamStore::new();
        let token_embedding = store.add("v2lc.token_embedding", normal_tensor(&mut rng, vocab_len, d, 1.0));
        let frame_proj = Linear::new(&mut store, &mut rng, "v2lc.frame_proj", frame_dim, d, true);
        let text_to_frame = ProjectionParams::new(&mut store, &mut rng, "v2lc.text_to_frame", d);
        let frame_to_text = ProjectionParams::new(&mut store, &mut rng, "v2lc.frame_to_text", d);
        let blocks = (0..config.layers)
            .map(|l| TransformerBlock::new(&mut store, &mut rng, &format!("v2lc.block{l}"), d, config.heads))
            .collect();
        let tau = store.add("v2lc.tau", Tensor::scalar(T::of(config.tau_init)));
        let layout = V2LCLayout { token_embedding, frame_proj, text_to_frame, frame_to_text, blocks, tau };
        Ok(Self { config: config.clone(), vocab_len, frame_dim, store, layout })
    }

    pub fn tau_id(&self) -> ParamId {
        self.layout.tau
    }

    pub fn tau(&self) -> f64 {
        self.store.get(self.layout.tau).data()[0].as_f64()
    }

    /// Keeps τ inside `[TAU_MIN, tau_max]`.
    pub fn clamp_tau(&mut self) {
        let t = self.tau().clamp(TAU_MIN, self.config.tau_max);
        self.store.get_mut(self.layout.tau).data_mut()[0] = T::of(t);
    }

    /// Records the forward pass on `tape`.
    pub fn encode_on(&self, tape: &mut Tape<T>, input: &SegmentInput<T>) -> Result<CrossModalVars, V2lcError> {
        let store = &self.store;
        let d = self.config.d_model;
        let heads = self.config.heads;
        if input.frames.cols() != self.frame_dim {
            return Err(NumericsError::ShapeMismatch(format!(
                "frame width {} vs model {}",
                input.frames.cols(),
                self.frame_dim
            ))
            .into());
        }
        if input.frames.rows() == 0 {
            return Err(NumericsError::EmptySequence.into());
        }
        let text = token_sequence(tape, store, self.layout.token_embedding, &input.tokens)?;
        let frames = tape.constant(input.frames.clone());
        let frames = self.layout.frame_proj.forward(tape, store, frames)?;
        let pos = tape.constant(sinusoidal_positions(input.frames.rows(), d));
        let frames = tape.add(frames, pos)?;

        let s_t = attention(tape, store, text, frames, &self.layout.text_to_frame, heads)?;
        let s_f = attention(tape, store, frames, text, &self.layout.frame_to_text, heads)?;
        let joined = tape.concat_rows(&[s_t, s_f])?;
        let h = stack_blocks(tape, store, &self.layout.blocks, joined)?;
        let pooled = mean_pool(tape, h)?;
        let s = tape.l2_normalize_rows(pooled);
        tape.check_finite(s, "segment embedding")?;
        Ok(CrossModalVars { s_t, s_f, joined, s })
    }

    pub fn encode_segment(&self, input: &SegmentInput<T>) -> Result<CrossModalState<T>, V2lcError> {
        let mut tape = Tape::new();
        let vars = self.encode_on(&mut tape, input)?;
        Ok(CrossModalState {
            s_t: tape.value(vars.s_t).clone(),
            s_f: tape.value(vars.s_f).clone(),
            s: tape.value(vars.s).data().to_vec(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null);
        Checkpoint::from_store(&self.store, config)
    }
}

fn token_sequence<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    table: ParamId,
    tokens: &TokenSeq,
) -> Result<Var, NumericsError> {
    let [vocab, d] = store.get(table).shape();
    let ids = tokens.active();
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(NumericsError::ShapeMismatch(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let table = tape.param(store, table);
    let x = tape.gather_rows(table, &ids)?;
    let pos = tape.constant(sinusoidal_positions(ids.len(), d));
    tape.add(x, pos)
}

#[derive(Debug, Clone)]
struct EncoderLayout {
    token_embedding: ParamId,
    blocks: Vec<TransformerBlock>,
}

/// Seeded, never-updated text encoder that defines the comment embedding space.
#[derive(Debug)]
pub struct CommentEncoder<T> {
    pub seed: u64,
    pub max_tokens: usize,
    pub store: ParamStore<T>,
    layout: EncoderLayout,
}

impl<T: Real> Clone for CommentEncoder<T> {
    fn clone(&self) -> Self {
        Self { seed: self.seed, max_tokens: self.max_tokens, store: self.store.clone(), layout: self.layout.clone() }
    }
}

impl<T: Real> CommentEncoder<T> {
    pub fn new(vocab_len: usize, config: &V2LCConfig, encoder_seed: u64) -> Self {
        let d = config.d_model;
        let mut rng = seed::rng(encoder_seed);
        let mut store = ParamStore::new();
        let token_embedding = store.add("comment.token_embedding", normal_tensor(&mut rng, vocab_len, d, 1.0));
        let blocks = (0..config.layers)
            .map(|l| TransformerBlock::new(&mut store, &mut rng, &format!("comment.block{l}"), d, config.heads))
            .collect();
        store.freeze();
        Self { seed: encoder_seed, max_tokens: config.max_tokens, store, layout: EncoderLayout { token_embedding, blocks } }
    }

    /// One comment as a `[1 × d]` unit row. The frozen store enters the
    /// tape as constants.
    pub fn encode_on(&self, tape: &mut Tape<T>, tokens: &TokenSeq) -> Result<Var, V2lcError> {
        let x = token_sequence(tape, &self.store, self.layout.token_embedding, tokens)?;
        let h = stack_blocks(tape, &self.store, &self.layout.blocks, x)?;
        let pooled = mean_pool(tape, h)?;
        Ok(tape.l2_normalize_rows(pooled))
    }

    /// `[K × d]` matrix of unit-norm comment embeddings.
    pub fn encode_comments(&self, comments: &[TokenSeq]) -> Result<Tensor<T>, V2lcError> {
        let d = self.store.get(self.layout.token_embedding).cols();
        let mut data = Vec::with_capacity(comments.len() * d);
        for tokens in comments {
            let mut tape = Tape::new();
            let row = self.encode_on(&mut tape, tokens)?;
            data.extend_from_slice(tape.value(row).data());
        }
        Ok(Tensor::new(comments.len(), d, data)?)
    }
}
