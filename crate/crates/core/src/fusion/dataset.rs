use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{InputDims, RawFeatures};
use super::{FusionConfig, FusionError, TaskKind, TaskSpec};
use crate::corpus::{read_lcaf, write_lcaf, CorpusError, FrameFeatures};
use crate::numerics::{Real, Tensor};
use crate::v2lc::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Number(f64),
    Class(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaRef {
    pub transcript: String,
    pub frames_file: PathBuf,
}

/// One line of a downstream dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamRecord {
    pub id: String,
    pub label: LabelValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub acoustic_file: PathBuf,
    pub visual_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextInput {
    Tokens(Vec<u32>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Media {
    pub transcript: String,
    pub frames: FrameFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSample {
    pub id: String,
    pub label: LabelValue,
    pub text: TextInput,
    pub acoustic: FrameFeatures,
    pub visual: FrameFeatures,
    pub media: Option<Media>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DownstreamDataset {
    pub samples: Vec<DownstreamSample>,
}

pub fn read_downstream_jsonl(text: &str) -> Result<Vec<DownstreamRecord>, FusionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| FusionError::BadDataset(format!("line {}: {e}", i + 1))))
        .collect()
}

impl DownstreamDataset {
    /// Reads a dataset file; feature paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut samples = Vec::new();
        for rec in read_downstream_jsonl(&text)? {
            let text = match (rec.text_tokens, rec.text) {
                (Some(t), None) => TextInput::Tokens(t),
                (None, Some(s)) => TextInput::Text(s),
                _ => return Err(FusionError::BadDataset(format!("`{}` needs exactly one of text_tokens, text", rec.id))),
            };
            let media = match rec.media {
                Some(m) => Some(Media { transcript: m.transcript, frames: read_lcaf(&resolve(&m.frames_file))? }),
                None => None,
            };
            samples.push(DownstreamSample {
                id: rec.id,
                label: rec.label,
                text,
                acoustic: read_lcaf(&resolve(&rec.acoustic_file))?,
                visual: read_lcaf(&resolve(&rec.visual_file))?,
                media,
            });
        }
        Ok(Self { samples })
    }

    /// Writes `<dir>/<name>.jsonl` plus one LCAF file per sample and modality
    /// under `<dir>/<name>/`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, FusionError> {
        let feat_dir = dir.join(name);
        fs::create_dir_all(&feat_dir).map_err(|e| CorpusError::io(&feat_dir, e))?;
        let mut lines = String::new();
        for s in &self.samples {
            let rel = |kind: &str| PathBuf::from(name).join(format!("{}.{kind}.lcaf", s.id));
            write_lcaf(&dir.join(rel("acoustic")), &s.acoustic)?;
            write_lcaf(&dir.join(rel("visual")), &s.visual)?;
            let media = match &s.media {
                Some(m) => {
                    write_lcaf(&dir.join(rel("media")), &m.frames)?;
                    Some(MediaRef { transcript: m.transcript.clone(), frames_file: rel("media") })
                }
                None => None,
            };
            let (text_tokens, text) = match &s.text {
                TextInput::Tokens(t) => (Some(t.clone()), None),
                TextInput::Text(t) => (None, Some(t.clone())),
            };
            let rec = DownstreamRecord {
                id: s.id.clone(),
                label: s.label.clone(),
                text_tokens,
                text,
                acoustic_file: rel("acoustic"),
                visual_file: rel("visual"),
                media,
            };
            lines.push_str(&serde_json::to_string(&rec).map_err(|e| FusionError::BadDataset(e.to_string()))?);
            lines.push('\n');
        }
        let path = dir.join(format!("{name}.jsonl"));
        fs::write(&path, lines).map_err(|e| CorpusError::io(&path, e))?;
        Ok(path)
    }

    /// Regression when every label is numeric (range `[−1, 1]` if all labels
    /// fit, else `[−3, 3]`), classification over the sorted label names
    /// otherwise.
    pub fn infer_task(&self) -> Result<TaskSpec, FusionError> {
        let mut numbers = Vec::new();
        let mut names = BTreeSet::new();
        for s in &self.samples {
            match &s.label {
                LabelValue::Number(v) => numbers.push(*v),
                LabelValue::Class(c) => {
                    names.insert(c.clone());
                }
            }
        }
        match (numbers.is_empty(), names.is_empty()) {
            (false, true) => {
                let wide = numbers.iter().any(|v| v.abs() > 1.0);
                Ok(if wide { TaskSpec::regression(-3.0, 3.0) } else { TaskSpec::regression(-1.0, 1.0) })
            }
            (true, false) => Ok(TaskSpec::classification(names)),
            (true, true) => Err(FusionError::BadDataset("empty dataset".into())),
            (false, false) => Err(FusionError::BadDataset("mixed numeric and class labels".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub id: String,
    pub target: Target,
    pub raw: RawFeatures<T>,
    pub lc: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct PreparedDataset<T> {
    pub task: TaskSpec,
    pub dims: InputDims,
    pub samples: Vec<PreparedSample<T>>,
    pub vocab: Option<Vocab>,
}

fn frames_tensor<T: Real>(f: &FrameFeatures) -> Result<Tensor<T>, FusionError> {
    Ok(Tensor::new(f.n_frames, f.dim, f.data.iter().map(|&v| T::of(v as f64)).collect())?)
}

fn uniform_dim(samples: &[DownstreamSample], pick: impl Fn(&DownstreamSample) -> usize, what: &str) -> Result<usize, FusionError> {
    let dims: BTreeSet<usize> = samples.iter().map(pick).collect();
    match dims.len() {
        1 => Ok(*dims.iter().next().unwrap_or(&0)),
        _ => Err(FusionError::BadDataset(format!("{what} feature widths differ: {dims:?}"))),
    }
}

/// Tokenizes text, converts features and resolves labels against `task`.
/// String texts share a vocabulary built over the whole dataset.
pub fn prepare_dataset<T: Real>(
    dataset: &DownstreamDataset,
    task: &TaskSpec,
    config: &FusionConfig,
) -> Result<PreparedDataset<T>, FusionError> {
    task.validate()?;
    let samples = &dataset.samples;
    if samples.is_empty() {
        return Err(FusionError::BadDataset("empty dataset".into()));
    }
    let acoustic_dim = uniform_dim(samples, |s| s.acoustic.dim, "acoustic")?;
    let visual_dim = uniform_dim(samples, |s| s.visual.dim, "visual")?;
    let texts: Vec<&str> = samples
        .iter()
        .filter_map(|s| match &s.text {
            TextInput::Text(t) => Some(t.as_str()),
            TextInput::Tokens(_) => None,
        })
        .collect();
    let vocab = (!texts.is_empty()).then(|| Vocab::build(texts.iter().copied(), config.vocab_size));
    let max_id = samples
        .iter()
        .filter_map(|s| match &s.text {
            TextInput::Tokens(t) => t.iter().max().map(|&m| m as usize + 1),
            TextInput::Text(_) => None,
        })
        .max()
        .unwrap_or(0);
    let text_vocab = vocab.as_ref().map_or(0, Vocab::len).max(max_id).max(2);

    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let target = match (&s.label, task.kind) {
            (LabelValue::Number(v), TaskKind::Regression) => Target::Value(*v),
            (LabelValue::Class(c), TaskKind::Classification) => Target::Class(
                task.class_index(c).ok_or_else(|| FusionError::BadDataset(format!("unknown class `{c}` in `{}`", s.id)))?,
            ),
            _ => return Err(FusionError::BadDataset(format!("label of `{}` does not fit the task", s.id))),
        };
        let text_ids = match &s.text {
            TextInput::Tokens(t) if t.is_empty() => vec![0],
            TextInput::Tokens(t) => t.iter().take(config.max_tokens).map(|&i| i as usize).collect(),
            TextInput::Text(t) => vocab.as_ref().map_or_else(|| vec![0], |v| v.tokenize(t, config.max_tokens).active()),
        };
        if s.acoustic.n_frames == 0 || s.visual.n_frames == 0 {
            return Err(FusionError::BadDataset(format!("`{}` has an empty feature sequence", s.id)));
        }
        out.push(PreparedSample {
            id: s.id.clone(),
            target,
            raw: RawFeatures { text_ids, acoustic: frames_tensor(&s.acoustic)?, visual: frames_tensor(&s.visual)? },
            lc: None,
        });
    }
    Ok(PreparedDataset {
        task: task.clone(),
        dims: InputDims { text_vocab, acoustic_dim, visual_dim, lc_dim: None },
        samples: out,
        vocab,
    })
}
