use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::{LatentState, SynthError, SynthWorld};
use crate::corpus::{
    write_danmaku_xml, write_lcaf, write_transcript_jsonl, Category, CorpusConfig, CorpusError, FrameFeatures, Lang,
    LiveComment, Manifest, ManifestEntry, TranscriptEntry,
};
use crate::seed;

fn millis(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn comment_at(time_s: f64, text: String, row: usize) -> LiveComment {
    LiveComment { time_s: millis(time_s), text, mode: 1, color: 16_777_215, sender: format!("u{row:05}") }
}

/// Writes a pre-training corpus with `n_videos` videos under `out_dir` and
/// returns the manifest path. Categories cycle through [`Category::ALL`].
///
/// Each video carries `segments_per_video` latent segments laid on the
/// `corpus.sigma_s` grid after the category trim. Frames at 1 fps follow the
/// segment latent; trim regions hold latent-free frames and a few comments
/// that trimming must remove, and every video has one comment shorter than
/// `corpus.min_comment_chars`.
pub fn gen_pretrain_corpus(
    world: &SynthWorld,
    corpus: &CorpusConfig,
    out_dir: &Path,
    n_videos: usize,
    gen_seed: u64,
) -> Result<PathBuf, SynthError> {
    corpus.validate()?;
    let cfg = &world.config;
    fs::create_dir_all(out_dir).map_err(|e| CorpusError::io(out_dir, e))?;
    let sigma = corpus.sigma_s;
    let mut videos = Vec::with_capacity(n_videos);
    for v in 0..n_videos {
        let id = format!("vid{v:04}");
        let category = Category::ALL[v % Category::ALL.len()];
        let trim = corpus.trim.for_category(category);
        let lo = trim;
        let span = cfg.segments_per_video as f64 * sigma;
        let duration_s = 2.0 * trim + span + 3.0;
        let mut rng = seed::rng_for(gen_seed, &[b"pretrain-video", &(v as u64).to_le_bytes()]);
        let latents: Vec<LatentState> =
            (0..cfg.segments_per_video).map(|_| LatentState::random(&mut rng, cfg.topics)).collect();
        let latent_at = |t: f64| -> Option<LatentState> {
            if t < lo || t >= lo + span {
                return None;
            }
            latents.get(((t - lo) / sigma).floor() as usize).copied()
        };

        let n_frames = duration_s.ceil() as usize;
        let mut data = Vec::with_capacity(n_frames * cfg.frame_dim);
        for i in 0..n_frames {
            let row = match latent_at(i as f64 + 0.5) {
                Some(l) => world.frame(l, &mut rng),
                None => world.filler_frame(&mut rng),
            };
            data.extend(row);
        }
        let frames = FrameFeatures { n_frames, dim: cfg.frame_dim, fps_milli: 1000, data };

        let mut comments = Vec::new();
        let mut transcript = Vec::new();
        let lang = if v % 4 == 3 { Lang::En } else { Lang::Zh };
        for (s, &latent) in latents.iter().enumerate() {
            let start = lo + s as f64 * sigma;
            let count = rng.gen_range(cfg.comments_min..=cfg.comments_max);
            for _ in 0..count {
                let t = start + rng.gen_range(0.05..sigma - 0.05);
                comments.push(comment_at(t, world.comment(latent, &mut rng), comments.len()));
            }
            transcript.push(TranscriptEntry {
                start_s: start + 0.5,
                end_s: start + sigma - 0.5,
                text: world.transcript(latent, cfg.clean.text_corrupt, &mut rng),
                lang,
            });
        }
        let filler = LatentState::random(&mut rng, cfg.topics);
        if trim > 0.1 {
            let t = rng.gen_range(0.0..trim);
            comments.push(comment_at(t, world.comment(filler, &mut rng), comments.len()));
            let t = duration_s - rng.gen_range(0.0..trim.min(3.0));
            comments.push(comment_at(t, world.comment(filler, &mut rng), comments.len()));
        }
        let t = lo + rng.gen_range(0.05..span - 0.05);
        comments.push(comment_at(t, "x".into(), comments.len()));
        comments.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));

        let comments_file = PathBuf::from(format!("{id}.xml"));
        let transcript_file = PathBuf::from(format!("{id}.transcript.jsonl"));
        let frames_file = PathBuf::from(format!("{id}.lcaf"));
        let write = |name: &Path, body: &str| fs::write(out_dir.join(name), body).map_err(|e| CorpusError::io(&out_dir.join(name), e));
        write(&comments_file, &write_danmaku_xml(&comments))?;
        write(&transcript_file, &write_transcript_jsonl(&transcript))?;
        write_lcaf(&out_dir.join(&frames_file), &frames)?;
        videos.push(ManifestEntry { id, category, duration_s, comments_file, transcript_file, frames_file });
    }
    let manifest = Manifest { videos };
    let path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Io(e.to_string()))?;
    fs::write(&path, body + "\n").map_err(|e| CorpusError::io(&path, e))?;
    Ok(path)
}
