use serde::Serialize;

use super::{Category, Corpus, Lang, VideoRecord};

/// Table-style summary for one subset of videos.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetStats {
    pub category: String,
    pub empty: bool,
    pub videos: usize,
    pub with_english_transcript: usize,
    pub comments: usize,
    pub duration_h: f64,
    pub avg_duration_s: f64,
    pub avg_comments: f64,
    pub avg_chars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub subsets: Vec<SubsetStats>,
    pub overall: SubsetStats,
}

fn summarize<'a>(label: &str, videos: impl Iterator<Item = &'a VideoRecord>) -> SubsetStats {
    let (mut n, mut english, mut comments, mut seconds, mut chars) = (0usize, 0usize, 0usize, 0.0f64, 0usize);
    for v in videos {
        n += 1;
        english += v.transcript.iter().any(|e| e.lang == Lang::En) as usize;
        comments += v.comments.len();
        seconds += v.duration_s;
        chars += v.comments.iter().map(|c| c.char_len()).sum::<usize>();
    }
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    SubsetStats {
        category: label.to_string(),
        empty: n == 0,
        videos: n,
        with_english_transcript: english,
        comments,
        duration_h: seconds / 3600.0,
        avg_duration_s: ratio(seconds, n),
        avg_comments: ratio(comments as f64, n),
        avg_chars: ratio(chars as f64, comments),
    }
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let subsets = Category::ALL
        .iter()
        .map(|&c| summarize(c.as_str(), corpus.videos.iter().filter(|v| v.category == c)))
        .collect();
    StatsReport { subsets, overall: summarize("overall", corpus.videos.iter()) }
}
