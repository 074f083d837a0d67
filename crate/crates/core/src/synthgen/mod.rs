//! Seeded synthetic corpora: a pre-training corpus in the danmaku, transcript
//! and frame formats, and labeled downstream datasets whose modalities are
//! noisy views of shared latents.

mod downstream;
mod pretrain;

pub use downstream::{
    gen_downstream, generator_report, modality_probe_features, GeneratorReport, ProbeFeatures, ProfileProbes, SynthTask,
    CLEAN_PROBE_MIN, DEGRADED_PROBE_MAX, MEDIA_PROBE_MIN,
};
pub use pretrain::gen_pretrain_corpus;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;

pub const VALENCE_LEVELS: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error("{0}")]
    Io(String),
}

/// Discrete latent of a segment or utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatentState {
    pub topic: usize,
    /// Index into the valence grid `−1, −0.75, …, 1`.
    pub valence_index: usize,
}

impl LatentState {
    pub fn valence(&self) -> f64 {
        -1.0 + 0.25 * self.valence_index as f64
    }

    pub fn random<R: Rng>(rng: &mut R, topics: usize) -> Self {
        Self { topic: rng.gen_range(0..topics), valence_index: rng.gen_range(0..VALENCE_LEVELS) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLevels {
    /// Probability that an informative text token is replaced by noise.
    pub text_corrupt: f64,
    pub acoustic_std: f64,
    pub visual_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub topics: usize,
    pub frame_dim: usize,
    pub acoustic_dim: usize,
    pub visual_dim: usize,
    pub segments_per_video: usize,
    pub comments_min: usize,
    pub comments_max: usize,
    pub comment_noise_tokens: usize,
    pub transcript_words: usize,
    pub transcript_noise_words: usize,
    pub noise_vocab: usize,
    pub frame_noise: f64,
    pub valence_scale: f64,
    pub utterance_min_s: usize,
    pub utterance_max_s: usize,
    pub feature_len_min: usize,
    pub feature_len_max: usize,
    pub clean: NoiseLevels,
    pub degraded: NoiseLevels,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self { text_corrupt: 0.1, acoustic_std: 0.3, visual_std: 0.3 }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 8,
            frame_dim: 16,
            acoustic_dim: 12,
            visual_dim: 16,
            segments_per_video: 8,
            comments_min: 6,
            comments_max: 9,
            comment_noise_tokens: 2,
            transcript_words: 6,
            transcript_noise_words: 2,
            noise_vocab: 200,
            frame_noise: 0.3,
            valence_scale: 1.5,
            utterance_min_s: 3,
            utterance_max_s: 16,
            feature_len_min: 4,
            feature_len_max: 10,
            clean: NoiseLevels::default(),
            degraded: NoiseLevels { text_corrupt: 0.95, acoustic_std: 6.0, visual_std: 6.0 },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.topics < 2 {
            return bad("need at least 2 topics");
        }
        if self.frame_dim <= self.topics || self.acoustic_dim <= self.topics || self.visual_dim <= self.topics {
            return bad("feature widths must exceed the topic count");
        }
        if self.comments_min < 5 || self.comments_max < self.comments_min {
            return bad("need 5 <= comments_min <= comments_max");
        }
        if self.segments_per_video == 0 || self.noise_vocab == 0 {
            return bad("segments_per_video and noise_vocab must be positive");
        }
        if self.utterance_min_s == 0 || self.utterance_max_s < self.utterance_min_s {
            return bad("need 1 <= utterance_min_s <= utterance_max_s");
        }
        if self.feature_len_min == 0 || self.feature_len_max < self.feature_len_min || self.transcript_words == 0 {
            return bad("need 1 <= feature_len_min <= feature_len_max and transcript_words >= 1");
        }
        Ok(())
    }
}

fn gaussian_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// A unit vector orthogonal to every row of `basis`.
fn orthogonal_direction<R: Rng>(rng: &mut R, basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut span: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut v = b.clone();
        for u in &span {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            span.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for u in &span {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Fixed random embeddings and vocabularies shared by every generator run
/// with the same world seed.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    topic_frames: Vec<Vec<f64>>,
    valence_frames: Vec<f64>,
    topic_acoustic: Vec<Vec<f64>>,
    valence_acoustic: Vec<f64>,
    topic_visual: Vec<Vec<f64>>,
    valence_visual: Vec<f64>,
}

impl SynthWorld {
    pub fn new(config: &SynthConfig, world_seed: u64) -> Result<Self, SynthError> {
        config.validate()?;
        let mut rng = seed::rng_for(world_seed, &[b"synth-world"]);
        let t = config.topics;
        let topic_frames = gaussian_rows(&mut rng, t, config.frame_dim);
        let valence_frames = orthogonal_direction(&mut rng, &topic_frames, config.frame_dim);
        let topic_acoustic = gaussian_rows(&mut rng, t, config.acoustic_dim);
        let valence_acoustic = orthogonal_direction(&mut rng, &topic_acoustic, config.acoustic_dim);
        let topic_visual = gaussian_rows(&mut rng, t, config.visual_dim);
        let valence_visual = orthogonal_direction(&mut rng, &topic_visual, config.visual_dim);
        Ok(Self { config: config.clone(), topic_frames, valence_frames, topic_acoustic, valence_acoustic, topic_visual, valence_visual })
    }

    fn view(&self, topic: &[f64], dir: &[f64], latent: LatentState, std: f64, rng: &mut impl Rng) -> Vec<f32> {
        let v = latent.valence() * self.config.valence_scale;
        topic
            .iter()
            .zip(dir)
            .map(|(t, d)| {
                let n: f64 = StandardNormal.sample(rng);
                (t + v * d + std * n) as f32
            })
            .collect()
    }

    /// One video frame feature row for `latent`.
    pub fn frame(&self, latent: LatentState, rng: &mut impl Rng) -> Vec<f32> {
        self.view(&self.topic_frames[latent.topic], &self.valence_frames, latent, self.config.frame_noise, rng)
    }

    /// A frame row carrying no latent.
    pub fn filler_frame(&self, rng: &mut impl Rng) -> Vec<f32> {
        (0..self.config.frame_dim).map(|_| StandardNormal.sample(rng)).map(|x: f64| x as f32).collect()
    }

    pub fn acoustic_row(&self, latent: LatentState, std: f64, rng: &mut impl Rng) -> Vec<f32> {
        self.view(&self.topic_acoustic[latent.topic], &self.valence_acoustic, latent, std, rng)
    }

    pub fn visual_row(&self, latent: LatentState, std: f64, rng: &mut impl Rng) -> Vec<f32> {
        self.view(&self.topic_visual[latent.topic], &self.valence_visual, latent, std, rng)
    }

    fn noise_word(&self, rng: &mut impl Rng) -> String {
        format!("n{}", rng.gen_range(0..self.config.noise_vocab))
    }

    fn content_word(&self, latent: LatentState, rng: &mut impl Rng) -> String {
        format!("w{}_{}_{}", latent.topic, latent.valence_index, rng.gen_range(0..4))
    }

    /// Transcript words from the latent's vocabulary block, each replaced by
    /// noise with probability `corrupt`, plus noise words, shuffled.
    pub fn transcript(&self, latent: LatentState, corrupt: f64, rng: &mut impl Rng) -> String {
        let mut words: Vec<String> = (0..self.config.transcript_words)
            .map(|_| if rng.gen_bool(corrupt.clamp(0.0, 1.0)) { self.noise_word(rng) } else { self.content_word(latent, rng) })
            .collect();
        words.extend((0..self.config.transcript_noise_words).map(|_| self.noise_word(rng)));
        words.shuffle(rng);
        words.join(" ")
    }

    /// Three latent-determined prefix tokens followed by noise tokens.
    pub fn comment(&self, latent: LatentState, rng: &mut impl Rng) -> String {
        let (t, v) = (latent.topic, latent.valence_index);
        let mut words = vec![format!("k{t}"), format!("v{v}"), format!("c{t}_{v}")];
        words.extend((0..self.config.comment_noise_tokens).map(|_| self.noise_word(rng)));
        words.join(" ")
    }
}
