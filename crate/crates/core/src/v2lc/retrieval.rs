use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::V2lcError;
use crate::numerics::{Real, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub probes: usize,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

/// Ranks one true comment among `candidates − 1` distractors drawn from
/// other segments, by cosine against the segment embedding. Probes cycle
/// through the segments in order; comment and distractor draws are seeded.
///
/// `segments` holds one unit row per segment and `comments[i]` the unit
/// comment embeddings of segment `i`.
pub fn retrieval_eval<T: Real>(
    segments: &Tensor<T>,
    comments: &[Tensor<T>],
    candidates: usize,
    probes: usize,
    probe_seed: u64,
) -> Result<RetrievalReport, V2lcError> {
    let n = segments.rows();
    if comments.len() != n || n == 0 {
        return Err(V2lcError::BadBatch(format!("{n} segment embeddings for {} comment sets", comments.len())));
    }
    if candidates < 2 {
        return Err(V2lcError::BadBatch("need at least 2 candidates".into()));
    }
    let total: usize = comments.iter().map(Tensor::rows).sum();
    let mut rng = seed::rng(seed::derive(probe_seed, &[b"retrieval"]));
    let (mut hit1, mut hit5, mut done) = (0usize, 0usize, 0usize);
    for p in 0..probes {
        let i = p % n;
        let own = &comments[i];
        if own.rows() == 0 {
            continue;
        }
        let pool = total - own.rows();
        if pool < candidates - 1 {
            return Err(V2lcError::BadBatch(format!(
                "only {pool} distractors available for {candidates} candidates"
            )));
        }
        let s = segments.row(i);
        let truth = dot(s, own.row(rng.gen_range(0..own.rows())));
        let mut rank = 1;
        for flat in index::sample(&mut rng, pool, candidates - 1).into_vec() {
            let row = locate(comments, i, flat);
            if dot(s, row) > truth {
                rank += 1;
            }
        }
        done += 1;
        hit1 += (rank == 1) as usize;
        hit5 += (rank <= 5) as usize;
    }
    let frac = |h: usize| if done == 0 { 0.0 } else { h as f64 / done as f64 };
    Ok(RetrievalReport { recall_at_1: frac(hit1), recall_at_5: frac(hit5), probes: done })
}

// Maps a flat index over all comments except those of `skip` to its row.
fn locate<T: Real>(comments: &[Tensor<T>], skip: usize, mut flat: usize) -> &[T] {
    for (seg, m) in comments.iter().enumerate() {
        if seg == skip {
            continue;
        }
        if flat < m.rows() {
            return m.row(flat);
        }
        flat -= m.rows();
    }
    unreachable!("flat index within pool")
}
