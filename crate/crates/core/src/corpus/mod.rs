//! Live-comment corpora: parsing, timeline trimming, segmentation, splits,
//! per-epoch comment sampling and dataset statistics.

mod danmaku;
mod formats;
mod pipeline;
mod stats;
mod types;

use std::path::Path;

pub use danmaku::{parse_danmaku_xml, write_danmaku_xml, DanmakuReport};
pub use formats::{
    decode_lcaf, encode_lcaf, load_corpus, parse_transcript_jsonl, read_lcaf, write_lcaf, write_transcript_jsonl,
    Corpus, Manifest, ManifestEntry, LCAF_MAGIC, LCAF_VERSION,
};
pub use pipeline::{
    drop_sparse_segments, frame_times, sample_epoch, segment_video, split_validation, trim_and_filter, window_count,
    EpochBatch, Removal, RemovalReason, TrimOutcome, MIN_SEGMENTS_FOR_SPLIT,
};
pub use stats::{corpus_stats, StatsReport, SubsetStats};
pub use types::{
    Category, CorpusConfig, FrameFeatures, Lang, LiveComment, Segment, TranscriptEntry, TrimRules, VideoRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("not a danmaku XML document: {0}")]
    NotXml(String),
    #[error("video `{id}` lasts {duration_s} s, which does not exceed twice the {trim_s} s trim")]
    VideoTooShort { id: String, duration_s: f64, trim_s: f64 },
    #[error("need at least {need} segments for a validation split, have {have}")]
    TooFewSegments { have: usize, need: usize },
    #[error("segment {video_id}#{index} has {have} comments, sampling needs {need}")]
    TooFewComments { video_id: String, index: usize, have: usize, need: usize },
    #[error("transcript: {0}")]
    BadTranscript(String),
    #[error("frame features: {0}")]
    BadFrames(String),
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.display().to_string(), source }
    }
}

/// Trims, segments and drops sparse segments for every video, reading each
/// video's frame-feature file.
pub fn prepare_segments(corpus: &Corpus, cfg: &CorpusConfig) -> Result<Vec<Segment>, CorpusError> {
    let mut all = Vec::new();
    for video in &corpus.videos {
        let trimmed = trim_and_filter(video, cfg)?.video;
        let frames = read_lcaf(&trimmed.frames_ref)?;
        all.extend(drop_sparse_segments(segment_video(&trimmed, &frames, cfg)?, cfg));
    }
    Ok(all)
}
