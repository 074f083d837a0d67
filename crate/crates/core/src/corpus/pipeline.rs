//! Trimming, filtering, segmentation, splitting and per-epoch sampling.

use rand::seq::{index, SliceRandom};

use super::{CorpusConfig, CorpusError, FrameFeatures, LiveComment, Segment, VideoRecord};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RemovalReason {
    /// Timestamp past the end of the video.
    BeyondDuration,
    /// Inside the leading or trailing trim window.
    TrimWindow,
    /// Fewer than `min_comment_chars` characters.
    TooShort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub comment: LiveComment,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    pub video: VideoRecord,
    pub removed: Vec<Removal>,
}

/// Removes comments in the category trim windows and comments that are too
/// short, and narrows the playable range to `[trim, duration − trim]`.
pub fn trim_and_filter(video: &VideoRecord, cfg: &CorpusConfig) -> Result<TrimOutcome, CorpusError> {
    let trim = cfg.trim.for_category(video.category);
    if !(video.duration_s > 2.0 * trim) {
        return Err(CorpusError::VideoTooShort { id: video.id.clone(), duration_s: video.duration_s, trim_s: trim });
    }
    let lo = video.playable.0.max(trim);
    let hi = video.playable.1.min(video.duration_s - trim);

    let mut kept = Vec::with_capacity(video.comments.len());
    let mut removed = Vec::new();
    for c in &video.comments {
        let reason = if c.time_s > video.duration_s {
            Some(RemovalReason::BeyondDuration)
        } else if c.time_s < lo || c.time_s > hi {
            Some(RemovalReason::TrimWindow)
        } else if c.char_len() < cfg.min_comment_chars {
            Some(RemovalReason::TooShort)
        } else {
            None
        };
        match reason {
            Some(reason) => removed.push(Removal { comment: c.clone(), reason }),
            None => kept.push(c.clone()),
        }
    }
    let mut out = video.clone();
    out.comments = kept;
    out.playable = (lo, hi);
    Ok(TrimOutcome { video: out, removed })
}

/// Number of whole `sigma`-second windows that fit in `span` seconds.
pub fn window_count(span: f64, sigma: f64) -> usize {
    if span <= 0.0 {
        return 0;
    }
    (span / sigma + 1e-9).floor() as usize
}

/// Cuts the playable range into consecutive `σ`-second windows, dropping an
/// incomplete tail. Windows are half-open `[start, end)`.
pub fn segment_video(
    video: &VideoRecord,
    frames: &FrameFeatures,
    cfg: &CorpusConfig,
) -> Result<Vec<Segment>, CorpusError> {
    if frames.n_frames == 0 || frames.dim == 0 {
        return Err(CorpusError::BadFrames(format!("video `{}` has no frame features", video.id)));
    }
    let sigma = cfg.sigma_s;
    let (lo, hi) = video.playable;
    let count = window_count(hi - lo, sigma);
    let f = cfg.frames_per_segment;

    let mut segments = Vec::with_capacity(count);
    for index in 0..count {
        let start_s = lo + index as f64 * sigma;
        let end_s = start_s + sigma;
        let comments: Vec<LiveComment> =
            video.comments.iter().filter(|c| c.time_s >= start_s && c.time_s < end_s).cloned().collect();
        let transcript_text = video
            .transcript
            .iter()
            .filter(|e| e.start_s < end_s && e.end_s > start_s)
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let frame_features = frame_times(start_s, sigma, f)
            .map(|t| frames.row(frames.index_at(t)).to_vec())
            .collect();
        segments.push(Segment { video_id: video.id.clone(), index, start_s, end_s, transcript_text, frame_features, comments });
    }
    Ok(segments)
}

/// Midpoint-rule sample times `start + (i + ½)·σ/F`.
pub fn frame_times(start_s: f64, sigma: f64, frames_per_segment: usize) -> impl Iterator<Item = f64> {
    let step = sigma / frames_per_segment as f64;
    (0..frames_per_segment).map(move |i| start_s + (i as f64 + 0.5) * step)
}

pub fn drop_sparse_segments(segments: Vec<Segment>, cfg: &CorpusConfig) -> Vec<Segment> {
    segments.into_iter().filter(|s| s.comments.len() >= cfg.min_comments_per_segment).collect()
}

pub const MIN_SEGMENTS_FOR_SPLIT: usize = 10;

/// Seeded shuffle; the first `⌈fraction · n⌉` become validation.
pub fn split_validation(
    segments: Vec<Segment>,
    cfg: &CorpusConfig,
) -> Result<(Vec<Segment>, Vec<Segment>), CorpusError> {
    let n = segments.len();
    if n < MIN_SEGMENTS_FOR_SPLIT {
        return Err(CorpusError::TooFewSegments { have: n, need: MIN_SEGMENTS_FOR_SPLIT });
    }
    let n_val = ((cfg.validation_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(cfg.seed, &[b"split"]));

    let mut slots: Vec<Option<Segment>> = segments.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index appears once");
    let validation: Vec<Segment> = order[..n_val].iter().map(|&i| take(i)).collect();
    let train: Vec<Segment> = order[n_val..].iter().map(|&i| take(i)).collect();
    Ok((train, validation))
}

/// One contrastive batch: `N` segments and the `K = k·N` comments drawn for them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochBatch {
    /// Positions in the sampled segment slice, one per batch row.
    pub segments: Vec<usize>,
    /// Per column: (segment position, comment index inside that segment).
    pub comments: Vec<(usize, usize)>,
    /// Per batch row: the columns holding its own comments.
    pub ownership: Vec<Vec<usize>>,
}

impl EpochBatch {
    pub fn n(&self) -> usize {
        self.segments.len()
    }

    pub fn k(&self) -> usize {
        self.comments.len()
    }
}

fn segment_rng(base: u64, epoch: u64, seg: &Segment) -> rand_chacha::ChaCha8Rng {
    seed::rng_for(
        base,
        &[b"sample", &epoch.to_le_bytes(), seg.video_id.as_bytes(), &(seg.index as u64).to_le_bytes()],
    )
}

/// Draws `k` comments without replacement from every segment, seeded by
/// `(seed, epoch, segment identity)`, and groups segments into batches of
/// `batch_n` in a per-epoch shuffled order. The final batch may be smaller.
pub fn sample_epoch(
    segments: &[Segment],
    cfg: &CorpusConfig,
    epoch: u64,
    batch_n: usize,
) -> Result<Vec<EpochBatch>, CorpusError> {
    let k = cfg.comments_per_segment_sample;
    if batch_n == 0 {
        return Err(CorpusError::InvalidConfig("batch size must be at least 1".into()));
    }
    if let Some(s) = segments.iter().find(|s| s.comments.len() < k) {
        return Err(CorpusError::TooFewComments { video_id: s.video_id.clone(), index: s.index, have: s.comments.len(), need: k });
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut seed::rng_for(cfg.seed, &[b"epoch-order", &epoch.to_le_bytes()]));

    let batches = order
        .chunks(batch_n)
        .map(|rows| {
            let mut comments = Vec::with_capacity(rows.len() * k);
            let mut ownership = Vec::with_capacity(rows.len());
            for &pos in rows {
                let seg = &segments[pos];
                let mut picked = index::sample(&mut segment_rng(cfg.seed, epoch, seg), seg.comments.len(), k).into_vec();
                picked.sort_unstable();
                let start = comments.len();
                comments.extend(picked.into_iter().map(|c| (pos, c)));
                ownership.push((start..start + k).collect());
            }
            EpochBatch { segments: rows.to_vec(), comments, ownership }
        })
        .collect();
    Ok(batches)
}
