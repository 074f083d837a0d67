use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{CommentEncoder, SegmentInput, V2LCConfig, V2LCModel};
use super::objective::{build_targets, contrastive_loss};
use super::retrieval::{retrieval_eval, RetrievalReport};
use super::vocab::Vocab;
use super::V2lcError;
use crate::corpus::{sample_epoch, CorpusConfig, Segment};
use crate::numerics::{adam_step, OptimizerState, Real, Tape, Tensor};
use crate::seed;

/// Model inputs and frozen comment embeddings for a list of segments.
#[derive(Debug)]
pub struct PreparedSegments<T> {
    pub inputs: Vec<SegmentInput<T>>,
    pub comments: Vec<Tensor<T>>,
}

impl<T: Real> PreparedSegments<T> {
    /// Each distinct comment text is encoded once.
    pub fn new(segments: &[Segment], vocab: &Vocab, encoder: &CommentEncoder<T>) -> Result<Self, V2lcError> {
        let max_tokens = encoder.max_tokens;
        let mut cache: BTreeMap<&str, Vec<T>> = BTreeMap::new();
        let mut inputs = Vec::with_capacity(segments.len());
        let mut comments = Vec::with_capacity(segments.len());
        for seg in segments {
            inputs.push(SegmentInput::from_rows(vocab.tokenize(&seg.transcript_text, max_tokens), &seg.frame_features)?);
            let mut rows = Vec::with_capacity(seg.comments.len());
            for c in &seg.comments {
                if !cache.contains_key(c.text.as_str()) {
                    let emb = encoder.encode_comments(&[vocab.tokenize(&c.text, max_tokens)])?;
                    cache.insert(c.text.as_str(), emb.into_data());
                }
                rows.push(cache[c.text.as_str()].clone());
            }
            comments.push(Tensor::from_rows(&rows)?);
        }
        Ok(Self { inputs, comments })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `[n × d]` unit segment embeddings.
pub fn encode_all<T: Real>(model: &V2LCModel<T>, inputs: &[SegmentInput<T>]) -> Result<Tensor<T>, V2lcError> {
    let rows = inputs.iter().map(|i| model.encode_segment(i).map(|s| s.s)).collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::from_rows(&rows)?)
}

pub fn evaluate_retrieval<T: Real>(
    model: &V2LCModel<T>,
    data: &PreparedSegments<T>,
    candidates: usize,
    probes: usize,
    probe_seed: u64,
) -> Result<RetrievalReport, V2lcError> {
    let s = encode_all(model, &data.inputs)?;
    retrieval_eval(&s, &data.comments, candidates, probes, probe_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub tau: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_recall_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_recall_at_5: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug)]
pub struct Pretrained<T> {
    pub model: V2LCModel<T>,
    pub encoder: CommentEncoder<T>,
    pub vocab: Vocab,
    pub log: PretrainLog,
}

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub model_init: u64,
    pub comment_encoder: u64,
    pub probes: u64,
}

impl RunSeeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            model_init: seed::derive(base, &[b"v2lc-init"]),
            comment_encoder: seed::derive(base, &[b"comment-encoder"]),
            probes: seed::derive(base, &[b"val-probes"]),
        }
    }
}

pub fn build_vocab(segments: &[Segment], config: &V2LCConfig) -> Vocab {
    let texts = segments
        .iter()
        .flat_map(|s| std::iter::once(s.transcript_text.as_str()).chain(s.comments.iter().map(|c| c.text.as_str())));
    Vocab::build(texts, config.vocab_size)
}

/// Untrained model, encoder and vocabulary exactly as [`pretrain`] starts.
pub fn initialize<T: Real>(
    train: &[Segment],
    config: &V2LCConfig,
) -> Result<(V2LCModel<T>, CommentEncoder<T>, Vocab), V2lcError> {
    config.validate()?;
    let frame_dim = train
        .iter()
        .find_map(|s| s.frame_features.first().map(Vec::len))
        .ok_or_else(|| V2lcError::BadBatch("no training segments with frames".into()))?;
    let seeds = RunSeeds::from_base(config.seed);
    let vocab = build_vocab(train, config);
    let model = V2LCModel::new(config, vocab.len(), frame_dim, seeds.model_init)?;
    let encoder = CommentEncoder::new(vocab.len(), config, seeds.comment_encoder);
    Ok((model, encoder, vocab))
}

/// Contrastive pre-training over `train`, tracking retrieval on `validation`.
pub fn pretrain<T: Real>(
    train: &[Segment],
    validation: &[Segment],
    config: &V2LCConfig,
) -> Result<Pretrained<T>, V2lcError> {
    let (mut model, encoder, vocab) = initialize::<T>(train, config)?;
    let seeds = RunSeeds::from_base(config.seed);
    let train_data = PreparedSegments::new(train, &vocab, &encoder)?;
    let val_data = PreparedSegments::new(validation, &vocab, &encoder)?;
    let sampler = CorpusConfig { comments_per_segment_sample: config.comments_per_segment, seed: config.seed, ..CorpusConfig::default() };
    let mut opt = OptimizerState::new(&model.store, config.adam);
    let mut log = PretrainLog::default();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let batches = sample_epoch(train, &sampler, epoch as u64, config.batch_n)?;
        let mut total = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let rows = batch
                .segments
                .iter()
                .map(|&pos| model.encode_on(&mut tape, &train_data.inputs[pos]).map(|v| v.s))
                .collect::<Result<Vec<_>, _>>()?;
            let s = tape.concat_rows(&rows)?;
            let c_rows: Vec<Vec<T>> =
                batch.comments.iter().map(|&(pos, idx)| train_data.comments[pos].row(idx).to_vec()).collect();
            let c_tensor = Tensor::from_rows(&c_rows)?;
            let targets = build_targets(&batch.ownership, &c_tensor, config.theta)?;
            let c = tape.constant(c_tensor);
            let tau = tape.param(&model.store, model.tau_id());
            let loss = contrastive_loss(&mut tape, s, c, &targets, tau)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            let grads = tape.backward(loss)?.for_store(&model.store);
            adam_step(&mut model.store, &grads, &mut opt)?;
            model.clamp_tau();
            total += loss_value;
            log.steps.push(StepRecord { epoch, step, loss: loss_value, tau: model.tau(), positives: targets.ones() });
            step += 1;
        }
        let report = if val_data.is_empty() {
            None
        } else {
            evaluate_retrieval(&model, &val_data, config.eval_candidates, config.eval_probes, seeds.probes).ok()
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: total / batches.len().max(1) as f64,
            val_recall_at_1: report.map(|r| r.recall_at_1),
            val_recall_at_5: report.map(|r| r.recall_at_5),
        });
    }
    Ok(Pretrained { model, encoder, vocab, log })
}
