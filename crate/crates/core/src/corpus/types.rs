use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// A viewer message pinned to a playback timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveComment {
    pub time_s: f64,
    pub text: String,
    pub mode: i32,
    pub color: u32,
    pub sender: String,
}

impl LiveComment {
    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Zh,
    En,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    pub text: String,
    pub lang: Lang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    UserGenerated,
    TvShow,
    Movie,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::UserGenerated, Category::TvShow, Category::Movie];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::UserGenerated => "user_generated",
            Category::TvShow => "tv_show",
            Category::Movie => "movie",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub category: Category,
    pub duration_s: f64,
    /// Sorted by `time_s`.
    pub comments: Vec<LiveComment>,
    pub transcript: Vec<TranscriptEntry>,
    pub frames_ref: PathBuf,
    /// Usable part of the timeline; the whole video until trimmed.
    pub playable: (f64, f64),
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        category: Category,
        duration_s: f64,
        mut comments: Vec<LiveComment>,
        transcript: Vec<TranscriptEntry>,
        frames_ref: PathBuf,
    ) -> Self {
        comments.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        Self {
            id: id.into(),
            category,
            duration_s,
            comments,
            transcript,
            frames_ref,
            playable: (0.0, duration_s),
        }
    }
}

/// Per-frame feature rows for one video, sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub n_frames: usize,
    pub dim: usize,
    /// Frames per second × 1000.
    pub fps_milli: u32,
    /// Row-major `n_frames × dim`.
    pub data: Vec<f32>,
}

impl FrameFeatures {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fps(&self) -> f64 {
        self.fps_milli as f64 / 1000.0
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fps()
    }

    /// Index of the frame showing at time `t`, clamped to the recording.
    pub fn index_at(&self, t: f64) -> usize {
        let idx = (t * self.fps()).floor();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.n_frames.saturating_sub(1))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub video_id: String,
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub transcript_text: String,
    /// `frames_per_segment × frame_dim`, row-major.
    pub frame_features: Vec<Vec<f32>>,
    pub comments: Vec<LiveComment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrimRules {
    pub user_generated_s: f64,
    pub tv_show_s: f64,
    pub movie_s: f64,
}

impl Default for TrimRules {
    fn default() -> Self {
        Self { user_generated_s: 15.0, tv_show_s: 90.0, movie_s: 300.0 }
    }
}

impl TrimRules {
    pub fn for_category(&self, c: Category) -> f64 {
        match c {
            Category::UserGenerated => self.user_generated_s,
            Category::TvShow => self.tv_show_s,
            Category::Movie => self.movie_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub sigma_s: f64,
    pub frames_per_segment: usize,
    pub min_comment_chars: usize,
    pub min_comments_per_segment: usize,
    pub comments_per_segment_sample: usize,
    pub validation_fraction: f64,
    pub trim: TrimRules,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sigma_s: 8.0,
            frames_per_segment: 8,
            min_comment_chars: 2,
            min_comments_per_segment: 5,
            comments_per_segment_sample: 5,
            validation_fraction: 0.10,
            trim: TrimRules::default(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), super::CorpusError> {
        let bad = |msg: &str| Err(super::CorpusError::InvalidConfig(msg.to_string()));
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return bad("sigma_s must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.comments_per_segment_sample == 0 {
            return bad("comments_per_segment_sample must be at least 1");
        }
        if self.frames_per_segment == 0 {
            return bad("frames_per_segment must be at least 1");
        }
        let t = &self.trim;
        if [t.user_generated_s, t.tv_show_s, t.movie_s].iter().any(|v| !(*v >= 0.0)) {
            return bad("trim lengths must be non-negative");
        }
        Ok(())
    }
}
