//! Sentiment, emotion and sarcasm metrics.
//!
//! Binary metrics on regression outputs use the sign of the prediction.
//! All fractions are in `[0, 1]`; the CLI reports them ×100.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no samples left after filtering")]
    EmptyAfterFiltering,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("labels have zero variance")]
    DegenerateVariance,
}

/// How a regression label is turned into a binary class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acc2Mode {
    /// `< 0` against `≥ 0` over every sample.
    #[default]
    NegVsNonneg,
    /// `< 0` against `> 0`, dropping samples whose label is exactly zero.
    NegVsPosExcludingZero,
}

fn check_lengths(preds: &[f64], labels: &[f64]) -> Result<(), EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    Ok(())
}

pub fn acc2(preds: &[f64], labels: &[f64], mode: Acc2Mode) -> Result<f64, EvalError> {
    check_lengths(preds, labels)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        let agree = match mode {
            Acc2Mode::NegVsNonneg => (p >= 0.0) == (l >= 0.0),
            Acc2Mode::NegVsPosExcludingZero => {
                if l == 0.0 {
                    continue;
                }
                (p > 0.0) == (l > 0.0)
            }
        };
        total += 1;
        hits += agree as usize;
    }
    if total == 0 {
        return Err(EvalError::EmptyAfterFiltering);
    }
    Ok(hits as f64 / total as f64)
}

pub const WEAK_BAND: f64 = 0.4;

/// Non-negative/negative accuracy over weak-intensity samples, `|label| ≤ band`.
pub fn acc2_weak(preds: &[f64], labels: &[f64], band: f64) -> Result<f64, EvalError> {
    check_lengths(preds, labels)?;
    let (p, l): (Vec<f64>, Vec<f64>) =
        preds.iter().zip(labels).filter(|(_, l)| l.abs() <= band).map(|(&p, &l)| (p, l)).unzip();
    if l.is_empty() {
        return Err(EvalError::EmptyAfterFiltering);
    }
    acc2(&p, &l, Acc2Mode::NegVsNonneg)
}

fn seven_class(x: f64) -> i64 {
    // f64::round rounds half away from zero
    x.clamp(-3.0, 3.0).round() as i64
}

pub fn acc7(preds: &[f64], labels: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds, labels)?;
    if preds.is_empty() {
        return Err(EvalError::TooFewSamples(1));
    }
    let hits = preds.iter().zip(labels).filter(|(&p, &l)| seven_class(p) == seven_class(l)).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision, recall and F1 averaged with true-class support as
/// weights. A class never predicted has precision 0.
pub fn weighted_prf(preds: &[usize], labels: &[usize]) -> Result<WeightedPrf, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::TooFewSamples(1));
    }
    let n_classes = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        predicted[p] += 1;
        support[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let total = labels.len() as f64;
    let mut out = WeightedPrf { precision: 0.0, recall: 0.0, f1: 0.0 };
    for c in 0..n_classes {
        if support[c] == 0 {
            continue;
        }
        let precision = if predicted[c] == 0 { 0.0 } else { tp[c] as f64 / predicted[c] as f64 };
        let recall = tp[c] as f64 / support[c] as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let w = support[c] as f64 / total;
        out.precision += w * precision;
        out.recall += w * recall;
        out.f1 += w * f1;
    }
    Ok(out)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::TooFewSamples(1));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionStats {
    /// `None` when the predictions are constant.
    pub pearson_corr: Option<f64>,
    pub mae: f64,
    pub r2: f64,
}

pub fn regression_stats(preds: &[f64], labels: &[f64]) -> Result<RegressionStats, EvalError> {
    check_lengths(preds, labels)?;
    if preds.len() < 2 {
        return Err(EvalError::TooFewSamples(2));
    }
    let n = preds.len() as f64;
    let mean_p = preds.iter().sum::<f64>() / n;
    let mean_l = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy, mut abs_err, mut ss_res) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &l) in preds.iter().zip(labels) {
        let (dp, dl) = (p - mean_p, l - mean_l);
        sxy += dp * dl;
        sxx += dp * dp;
        syy += dl * dl;
        abs_err += (p - l).abs();
        ss_res += (l - p) * (l - p);
    }
    if syy == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let pearson_corr = (sxx > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));
    Ok(RegressionStats { pearson_corr, mae: abs_err / n, r2: 1.0 - ss_res / syy })
}

/// Flat metric record; each field is present only where it applies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc2_weak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc7: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pearson_corr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r2: Option<f64>,
}

impl MetricReport {
    /// Everything that applies to a regression task. Binary F1/P/R come from
    /// the same sign classes as Acc2.
    pub fn regression(preds: &[f64], labels: &[f64], mode: Acc2Mode) -> Result<Self, EvalError> {
        let stats = regression_stats(preds, labels)?;
        let (bp, bl): (Vec<usize>, Vec<usize>) = preds
            .iter()
            .zip(labels)
            .filter(|(_, &l)| mode == Acc2Mode::NegVsNonneg || l != 0.0)
            .map(|(&p, &l)| match mode {
                Acc2Mode::NegVsNonneg => ((p >= 0.0) as usize, (l >= 0.0) as usize),
                Acc2Mode::NegVsPosExcludingZero => ((p > 0.0) as usize, (l > 0.0) as usize),
            })
            .unzip();
        let prf = weighted_prf(&bp, &bl)?;
        Ok(Self {
            acc2: Some(acc2(preds, labels, mode)?),
            acc2_weak: acc2_weak(preds, labels, WEAK_BAND).ok(),
            acc7: Some(acc7(preds, labels)?),
            f1_weighted: Some(prf.f1),
            precision_weighted: Some(prf.precision),
            recall_weighted: Some(prf.recall),
            pearson_corr: stats.pearson_corr,
            mae: Some(stats.mae),
            r2: Some(stats.r2),
            ..Self::default()
        })
    }

    pub fn classification(preds: &[usize], labels: &[usize]) -> Result<Self, EvalError> {
        let prf = weighted_prf(preds, labels)?;
        Ok(Self {
            accuracy: Some(accuracy(preds, labels)?),
            f1_weighted: Some(prf.f1),
            precision_weighted: Some(prf.precision),
            recall_weighted: Some(prf.recall),
            ..Self::default()
        })
    }

    /// `(name, value × 100)` for every present field, in table order.
    pub fn percent_rows(&self) -> Vec<(&'static str, f64)> {
        let fields = [
            ("acc2", self.acc2),
            ("acc2_weak", self.acc2_weak),
            ("acc7", self.acc7),
            ("accuracy", self.accuracy),
            ("f1_weighted", self.f1_weighted),
            ("precision_weighted", self.precision_weighted),
            ("recall_weighted", self.recall_weighted),
            ("pearson_corr", self.pearson_corr),
            ("mae", self.mae),
            ("r2", self.r2),
        ];
        fields.into_iter().filter_map(|(k, v)| v.map(|v| (k, v * 100.0))).collect()
    }
}
