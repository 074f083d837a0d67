//! Transcript JSONL, LCAF frame-feature files and the corpus manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_danmaku_xml, Category, CorpusError, FrameFeatures, TranscriptEntry, VideoRecord};

pub const LCAF_MAGIC: &[u8; 4] = b"LCAF";
pub const LCAF_VERSION: u32 = 1;
const LCAF_HEADER_LEN: usize = 20;

/// One `{"start", "end", "text", "lang"}` object per line. Entries are
/// validated and sorted by start time.
pub fn parse_transcript_jsonl(text: &str) -> Result<Vec<TranscriptEntry>, CorpusError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(line)
            .map_err(|e| CorpusError::BadTranscript(format!("line {}: {e}", lineno + 1)))?;
        if !(entry.start_s < entry.end_s) || !entry.start_s.is_finite() || !entry.end_s.is_finite() {
            return Err(CorpusError::BadTranscript(format!("line {}: start must precede end", lineno + 1)));
        }
        entries.push(entry);
    }
    entries.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(normalize_overlaps(entries))
}

/// Clips each entry to start no earlier than its predecessor ends; entries
/// left empty by the clip are dropped.
fn normalize_overlaps(entries: Vec<TranscriptEntry>) -> Vec<TranscriptEntry> {
    let mut out: Vec<TranscriptEntry> = Vec::with_capacity(entries.len());
    for mut e in entries {
        if let Some(prev) = out.last() {
            if e.start_s < prev.end_s {
                e.start_s = prev.end_s;
            }
        }
        if e.start_s < e.end_s {
            out.push(e);
        }
    }
    out
}

pub fn write_transcript_jsonl(entries: &[TranscriptEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("transcript entry serializes"));
        out.push('\n');
    }
    out
}

pub fn encode_lcaf(frames: &FrameFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(LCAF_HEADER_LEN + frames.data.len() * 4);
    out.extend_from_slice(LCAF_MAGIC);
    out.extend_from_slice(&LCAF_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(frames.dim as u32).to_le_bytes());
    out.extend_from_slice(&frames.fps_milli.to_le_bytes());
    for v in &frames.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lcaf(bytes: &[u8]) -> Result<FrameFeatures, CorpusError> {
    let bad = |m: String| CorpusError::BadFrames(m);
    if bytes.len() < LCAF_HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != LCAF_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != LCAF_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (n_frames, dim, fps_milli) = (word(8) as usize, word(12) as usize, word(16));
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    let payload = &bytes[LCAF_HEADER_LEN..];
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    if fps_milli == 0 && n_frames > 0 {
        return Err(bad("zero frame rate".into()));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(FrameFeatures { n_frames, dim, fps_milli, data })
}

pub fn read_lcaf(path: &Path) -> Result<FrameFeatures, CorpusError> {
    decode_lcaf(&fs::read(path).map_err(|e| CorpusError::io(path, e))?)
}

pub fn write_lcaf(path: &Path, frames: &FrameFeatures) -> Result<(), CorpusError> {
    fs::write(path, encode_lcaf(frames)).map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub duration_s: f64,
    pub comments_file: PathBuf,
    pub transcript_file: PathBuf,
    pub frames_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}

/// A loaded corpus plus parse diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    /// Skipped danmaku entries across all comment files.
    pub skipped_comments: usize,
}

/// Loads every video of a manifest; relative paths resolve against the
/// manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CorpusError::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::BadManifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut corpus = Corpus::default();
    for entry in manifest.videos {
        if !(entry.duration_s > 0.0) {
            return Err(CorpusError::BadManifest(format!("video `{}` has non-positive duration", entry.id)));
        }
        let comments_path = resolve(&entry.comments_file);
        let xml = fs::read(&comments_path).map_err(|e| CorpusError::io(&comments_path, e))?;
        let report = parse_danmaku_xml(&xml)?;
        corpus.skipped_comments += report.skipped;

        let transcript_path = resolve(&entry.transcript_file);
        let transcript_text =
            fs::read_to_string(&transcript_path).map_err(|e| CorpusError::io(&transcript_path, e))?;
        let transcript = parse_transcript_jsonl(&transcript_text)?;

        corpus.videos.push(VideoRecord::new(
            entry.id,
            entry.category,
            entry.duration_s,
            report.comments,
            transcript,
            resolve(&entry.frames_file),
        ));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    #[test]
    fn lcaf_layout_is_bit_exact() {
        let f = FrameFeatures { n_frames: 2, dim: 1, fps_milli: 2500, data: vec![1.0, -0.5] };
        let bytes = encode_lcaf(&f);
        let mut expect = b"LCAF".to_vec();
        for w in [1u32, 2, 1, 2500] {
            expect.extend_from_slice(&w.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(decode_lcaf(&bytes).unwrap(), f);
    }

    #[test]
    fn lcaf_rejects_corruption() {
        let f = FrameFeatures { n_frames: 1, dim: 2, fps_milli: 1000, data: vec![1.0, 2.0] };
        let mut bytes = encode_lcaf(&f);
        bytes.pop();
        assert!(decode_lcaf(&bytes).is_err());
        let mut bytes = encode_lcaf(&f);
        bytes[0] = b'X';
        assert!(decode_lcaf(&bytes).is_err());
        let mut bytes = encode_lcaf(&f);
        bytes[4] = 2;
        assert!(decode_lcaf(&bytes).is_err());
    }

    #[test]
    fn transcript_lines() {
        let text = "{\"start\": 4.0, \"end\": 6.0, \"text\": \"b\", \"lang\": \"en\"}\n\n{\"start\": 1.0, \"end\": 2.0, \"text\": \"a\", \"lang\": \"zh\"}\n";
        let entries = parse_transcript_jsonl(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].text, "a");
        assert_eq!(entries[0].lang, Lang::Zh);
        assert_eq!(parse_transcript_jsonl(&write_transcript_jsonl(&entries)).unwrap(), entries);
        let overlapping = "{\"start\": 0, \"end\": 5, \"text\": \"a\", \"lang\": \"en\"}\n{\"start\": 3, \"end\": 8, \"text\": \"b\", \"lang\": \"en\"}\n{\"start\": 4, \"end\": 7, \"text\": \"c\", \"lang\": \"en\"}";
        let norm = parse_transcript_jsonl(overlapping).unwrap();
        assert_eq!(norm.len(), 2);
        assert_eq!((norm[1].start_s, norm[1].end_s), (5.0, 8.0));
        assert!(parse_transcript_jsonl("{\"start\": 3, \"end\": 2, \"text\": \"x\", \"lang\": \"en\"}").is_err());
        assert!(parse_transcript_jsonl("{\"start\": 1, \"end\": 2, \"text\": \"x\", \"lang\": \"fr\"}").is_err());
    }
}
