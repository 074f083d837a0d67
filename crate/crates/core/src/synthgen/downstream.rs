use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LatentState, NoiseLevels, SynthError, SynthWorld, VALENCE_LEVELS};
use crate::corpus::FrameFeatures;
use crate::fusion::{linear_probe, DownstreamDataset, DownstreamSample, LabelValue, Media, ProbeConfig, TextInput};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Label is the valence in `[−1, 1]`.
    Regression,
    /// Label is `topic<t>`.
    Classification,
}

fn rows_to_frames(rows: Vec<Vec<f32>>, dim: usize) -> FrameFeatures {
    FrameFeatures { n_frames: rows.len(), dim, fps_milli: 1000, data: rows.into_iter().flatten().collect() }
}

/// `n` labeled utterances. Topics cycle fastest and valence levels next
/// before shuffling, so both label kinds are balanced. Text, acoustic and visual
/// views are drawn at `noise`; the media block (transcript plus 1 fps
/// frames) always uses the clean text corruption and the frame noise.
pub fn gen_downstream(
    world: &SynthWorld,
    n: usize,
    task: SynthTask,
    noise: &NoiseLevels,
    gen_seed: u64,
) -> Result<DownstreamDataset, SynthError> {
    let cfg = &world.config;
    if n == 0 {
        return Err(SynthError::InvalidConfig("downstream dataset needs at least one sample".into()));
    }
    let mut rng = seed::rng_for(gen_seed, &[b"downstream"]);
    let t = cfg.topics;
    let mut latents: Vec<LatentState> =
        (0..n).map(|i| LatentState { topic: i % t, valence_index: (i / t) % VALENCE_LEVELS }).collect();
    latents.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(n);
    for (i, latent) in latents.into_iter().enumerate() {
        let label = match task {
            SynthTask::Regression => LabelValue::Number(latent.valence()),
            SynthTask::Classification => LabelValue::Class(format!("topic{}", latent.topic)),
        };
        let text = TextInput::Text(world.transcript(latent, noise.text_corrupt, &mut rng));
        let la = rng.gen_range(cfg.feature_len_min..=cfg.feature_len_max);
        let acoustic = (0..la).map(|_| world.acoustic_row(latent, noise.acoustic_std, &mut rng)).collect();
        let lv = rng.gen_range(cfg.feature_len_min..=cfg.feature_len_max);
        let visual = (0..lv).map(|_| world.visual_row(latent, noise.visual_std, &mut rng)).collect();
        let dur = rng.gen_range(cfg.utterance_min_s..=cfg.utterance_max_s);
        let frames = (0..dur).map(|_| world.frame(latent, &mut rng)).collect();
        let media = Media {
            transcript: world.transcript(latent, cfg.clean.text_corrupt, &mut rng),
            frames: rows_to_frames(frames, cfg.frame_dim),
        };
        samples.push(DownstreamSample {
            id: format!("utt{i:05}"),
            label,
            text,
            acoustic: rows_to_frames(acoustic, cfg.acoustic_dim),
            visual: rows_to_frames(visual, cfg.visual_dim),
            media: Some(media),
        });
    }
    Ok(DownstreamDataset { samples })
}

/// Per-modality linear-probe inputs. Regression labels become their sign,
/// with zero-valence samples left out.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFeatures {
    pub text: Vec<Vec<f64>>,
    pub acoustic: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
    /// Mean media frame row.
    pub media: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn mean_row(f: &FrameFeatures) -> Vec<f64> {
    let mut m = vec![0.0; f.dim];
    for i in 0..f.n_frames {
        for (a, &x) in m.iter_mut().zip(f.row(i)) {
            *a += x as f64 / f.n_frames as f64;
        }
    }
    m
}

pub fn modality_probe_features(dataset: &DownstreamDataset) -> Result<ProbeFeatures, SynthError> {
    let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &dataset.samples {
        if let LabelValue::Class(c) = &s.label {
            classes.insert(c, 0);
        }
    }
    for (i, v) in classes.values_mut().enumerate() {
        *v = i;
    }
    let word = |s: &DownstreamSample| -> Vec<String> {
        match &s.text {
            TextInput::Text(t) => t.split_whitespace().map(str::to_string).collect(),
            TextInput::Tokens(t) => t.iter().map(|id| format!("#{id}")).collect(),
        }
    };
    let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
    for s in &dataset.samples {
        for w in word(s) {
            vocab.insert(w, 0);
        }
    }
    for (i, v) in vocab.values_mut().enumerate() {
        *v = i;
    }

    let mut out = ProbeFeatures { text: vec![], acoustic: vec![], visual: vec![], media: vec![], labels: vec![] };
    for s in &dataset.samples {
        let label = match &s.label {
            LabelValue::Number(v) if *v == 0.0 => continue,
            LabelValue::Number(v) => usize::from(*v > 0.0),
            LabelValue::Class(c) => classes[c.as_str()],
        };
        let media = s.media.as_ref().ok_or_else(|| SynthError::InvalidConfig(format!("`{}` has no media block", s.id)))?;
        let mut bow = vec![0.0; vocab.len()];
        for w in word(s) {
            bow[vocab[&w]] += 1.0;
        }
        out.text.push(bow);
        out.acoustic.push(mean_row(&s.acoustic));
        out.visual.push(mean_row(&s.visual));
        out.media.push(mean_row(&media.frames));
        out.labels.push(label);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileProbes {
    pub text: f64,
    pub acoustic: f64,
    pub visual: f64,
    pub media: f64,
}

pub const CLEAN_PROBE_MIN: f64 = 0.9;
pub const DEGRADED_PROBE_MAX: f64 = 0.7;
pub const MEDIA_PROBE_MIN: f64 = 0.85;

/// Linear-probe accuracies of every modality under both noise profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub samples: usize,
    pub clean: ProfileProbes,
    pub degraded: ProfileProbes,
}

impl GeneratorReport {
    /// Clean views are each informative, degraded views are each weak, and
    /// the media block stays informative under the degraded profile.
    pub fn passes(&self) -> bool {
        let c = &self.clean;
        let d = &self.degraded;
        [c.text, c.acoustic, c.visual].iter().all(|&a| a >= CLEAN_PROBE_MIN)
            && [d.text, d.acoustic, d.visual].iter().all(|&a| a <= DEGRADED_PROBE_MAX)
            && d.media >= MEDIA_PROBE_MIN
    }
}

fn probe_profile(dataset: &DownstreamDataset, probe: &ProbeConfig) -> Result<ProfileProbes, SynthError> {
    let f = modality_probe_features(dataset)?;
    let acc = |x: &[Vec<f64>]| linear_probe(x, &f.labels, probe).map(|r| r.accuracy);
    Ok(ProfileProbes { text: acc(&f.text)?, acoustic: acc(&f.acoustic)?, visual: acc(&f.visual)?, media: acc(&f.media)? })
}

pub fn generator_report(world: &SynthWorld, n: usize, task: SynthTask, gen_seed: u64) -> Result<GeneratorReport, SynthError> {
    let probe = ProbeConfig { seed: gen_seed, ..ProbeConfig::default() };
    let clean = gen_downstream(world, n, task, &world.config.clean, gen_seed)?;
    let degraded = gen_downstream(world, n, task, &world.config.degraded, gen_seed)?;
    Ok(GeneratorReport { samples: n, clean: probe_profile(&clean, &probe)?, degraded: probe_profile(&degraded, &probe)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::SynthConfig;

    #[test]
    fn labels_are_balanced() {
        let world = SynthWorld::new(&SynthConfig::default(), 0).unwrap();
        let ds = gen_downstream(&world, 720, SynthTask::Classification, &world.config.clean, 4).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in &ds.samples {
            if let LabelValue::Class(c) = &s.label {
                *counts.entry(c.clone()).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), 8);
        let expect = 720.0 / 8.0;
        assert!(counts.values().all(|&c| (c as f64 - expect).abs() <= 0.05 * expect), "{counts:?}");

        let ds = gen_downstream(&world, 500, SynthTask::Regression, &world.config.clean, 4).unwrap();
        let pos = ds.samples.iter().filter(|s| matches!(s.label, LabelValue::Number(v) if v > 0.0)).count();
        let neg = ds.samples.iter().filter(|s| matches!(s.label, LabelValue::Number(v) if v < 0.0)).count();
        assert!((pos as f64 - neg as f64).abs() <= 0.05 * (pos + neg) as f64, "{pos} vs {neg}");
    }

    #[test]
    fn same_seed_same_dataset() {
        let world = SynthWorld::new(&SynthConfig::default(), 5).unwrap();
        let a = gen_downstream(&world, 30, SynthTask::Regression, &world.config.degraded, 1).unwrap();
        let b = gen_downstream(&world, 30, SynthTask::Regression, &world.config.degraded, 1).unwrap();
        let c = gen_downstream(&world, 30, SynthTask::Regression, &world.config.degraded, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn written_dataset_reloads() {
        let world = SynthWorld::new(&SynthConfig::default(), 5).unwrap();
        let ds = gen_downstream(&world, 12, SynthTask::Classification, &world.config.clean, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = ds.write(dir.path(), "train").unwrap();
        assert_eq!(DownstreamDataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn probes_meet_thresholds() {
        let world = SynthWorld::new(&SynthConfig::default(), 0).unwrap();
        let r = generator_report(&world, 400, SynthTask::Regression, 0).unwrap();
        assert!(r.passes(), "{r:?}");
    }
}
