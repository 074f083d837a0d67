use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::eval::{accuracy, weighted_prf};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub iterations: usize,
    pub l2: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr: 0.1, iterations: 500, l2: 1e-4, holdout_fraction: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub f1_weighted: f64,
}

/// Multinomial logistic regression by full-batch gradient descent on
/// standardized features, scored on a seeded stratified holdout.
pub fn linear_probe(features: &[Vec<f64>], labels: &[usize], config: &ProbeConfig) -> Result<ProbeReport, FusionError> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(FusionError::BadDataset(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p) {
        return Err(FusionError::BadDataset("feature rows differ in width".into()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|c| !c.is_empty()).collect();
    if present.len() < 2 {
        return Err(FusionError::DegenerateLabels);
    }
    if present.iter().any(|c| c.len() < 2) {
        return Err(FusionError::BadDataset("linear probe needs at least 2 samples per class".into()));
    }

    let mut rng = seed::rng_for(config.seed, &[b"probe-split"]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for members in &by_class {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let n_test = ((config.holdout_fraction * m.len() as f64).round() as usize).clamp(usize::from(!m.is_empty()), m.len().saturating_sub(1));
        test.extend_from_slice(&m[..n_test]);
        train.extend_from_slice(&m[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let mut mean = vec![0.0; p];
    let mut std = vec![0.0; p];
    for &i in &train {
        for (m, x) in mean.iter_mut().zip(&features[i]) {
            *m += x / train.len() as f64;
        }
    }
    for &i in &train {
        for j in 0..p {
            std[j] += (features[i][j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    let norm = |i: usize| -> Vec<f64> { (0..p).map(|j| (features[i][j] - mean[j]) / std[j]).collect() };
    let xtrain: Vec<Vec<f64>> = train.iter().map(|&i| norm(i)).collect();

    let mut w = vec![vec![0.0; p]; classes];
    let mut b = vec![0.0; classes];
    let probs = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        let logits: Vec<f64> = (0..classes).map(|c| b[c] + w[c].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    };
    let n = xtrain.len() as f64;
    for _ in 0..config.iterations {
        let mut gw = vec![vec![0.0; p]; classes];
        let mut gb = vec![0.0; classes];
        for (x, &i) in xtrain.iter().zip(&train) {
            let pr = probs(&w, &b, x);
            for c in 0..classes {
                let err = pr[c] - (labels[i] == c) as u8 as f64;
                gb[c] += err / n;
                for j in 0..p {
                    gw[c][j] += err * x[j] / n;
                }
            }
        }
        for c in 0..classes {
            b[c] -= config.lr * gb[c];
            for j in 0..p {
                w[c][j] -= config.lr * (gw[c][j] + config.l2 * w[c][j]);
            }
        }
    }

    let preds: Vec<usize> = test
        .iter()
        .map(|&i| {
            let pr = probs(&w, &b, &norm(i));
            (0..classes).fold(0, |best, c| if pr[c] > pr[best] { c } else { best })
        })
        .collect();
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    Ok(ProbeReport { accuracy: accuracy(&preds, &truth)?, f1_weighted: weighted_prf(&preds, &truth)?.f1 })
}
