use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{LabelValue, PreparedDataset, PreparedSample, Target};
use super::model::{FusionModel, InputDims};
use super::{FusionConfig, FusionError, TaskKind};
use crate::eval::MetricReport;
use crate::numerics::{adam_step, OptimizerState, Real, Tape, Tensor, Var};
use crate::seed;

/// Seeded shuffle split; the validation part gets `ceil(frac · n)` items,
/// at least one, and the training part keeps at least one.
pub fn split_indices(n: usize, fraction: f64, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(split_seed, &[b"finetune-split"]));
    let n_val = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let train = order.split_off(n_val);
    (train, order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub validation: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: LabelValue,
    pub label: LabelValue,
}

#[derive(Debug)]
pub struct FineTuned<T> {
    pub model: FusionModel<T>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub validation: MetricReport,
    pub predictions: Vec<PredictionRecord>,
}

fn sample_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &FusionModel<T>,
    sample: &PreparedSample<T>,
) -> Result<Var, FusionError> {
    let lc = if model.uses_lc() { sample.lc.as_ref() } else { None };
    let out = model.forward_on(tape, &sample.raw, lc)?;
    match sample.target {
        Target::Value(y) => {
            let y = tape.constant(Tensor::scalar(T::of(y)));
            let diff = tape.sub(out, y)?;
            Ok(tape.abs(diff))
        }
        Target::Class(c) => {
            let logp = tape.log_softmax_rows(out);
            let mut pick = Tensor::zeros(1, model.task.out_dim());
            pick.set(0, c, T::of(-1.0));
            let pick = tape.constant(pick);
            let picked = tape.mul(logp, pick)?;
            Ok(tape.sum(picked))
        }
    }
}

/// Mean per-sample loss of `indices`: MAE for regression, cross-entropy for
/// classification.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &FusionModel<T>,
    samples: &[PreparedSample<T>],
    indices: &[usize],
) -> Result<Var, FusionError> {
    let mut terms = Vec::with_capacity(indices.len());
    for &i in indices {
        terms.push(sample_loss(tape, model, &samples[i])?);
    }
    let all = tape.concat_rows(&terms)?;
    let total = tape.sum(all);
    Ok(tape.scale(total, 1.0 / indices.len() as f64))
}

fn label_value(task: &super::TaskSpec, target: Target) -> LabelValue {
    match target {
        Target::Value(v) => LabelValue::Number(v),
        Target::Class(c) => LabelValue::Class(task.class_names[c].clone()),
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Metrics and prediction records of `model` on `indices`.
pub fn evaluate<T: Real>(
    model: &FusionModel<T>,
    data: &PreparedDataset<T>,
    indices: &[usize],
    config: &FusionConfig,
) -> Result<(MetricReport, f64, Vec<PredictionRecord>), FusionError> {
    let mut outputs = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &data.samples[i];
        let lc = if model.uses_lc() { s.lc.as_ref() } else { None };
        outputs.push(model.predict(&s.raw, lc)?);
    }
    let task = &model.task;
    let records = indices
        .iter()
        .zip(&outputs)
        .map(|(&i, out)| {
            let s = &data.samples[i];
            let prediction = match task.kind {
                TaskKind::Regression => LabelValue::Number(out[0]),
                TaskKind::Classification => LabelValue::Class(task.class_names[argmax(out)].clone()),
            };
            PredictionRecord { id: s.id.clone(), prediction, label: label_value(task, s.target) }
        })
        .collect();
    let (report, metric) = match task.kind {
        TaskKind::Regression => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let labels: Vec<f64> = indices
                .iter()
                .map(|&i| match data.samples[i].target {
                    Target::Value(v) => v,
                    Target::Class(c) => c as f64,
                })
                .collect();
            let r = MetricReport::regression(&preds, &labels, config.acc2_mode)?;
            let m = r.pearson_corr.unwrap_or(f64::NEG_INFINITY);
            (r, m)
        }
        TaskKind::Classification => {
            let preds: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            let labels: Vec<usize> = indices
                .iter()
                .map(|&i| match data.samples[i].target {
                    Target::Class(c) => c,
                    Target::Value(_) => 0,
                })
                .collect();
            let r = MetricReport::classification(&preds, &labels)?;
            let m = r.f1_weighted.unwrap_or(0.0);
            (r, m)
        }
    };
    Ok((report, metric, records))
}

/// Adam on minibatches with early stopping on the validation metric
/// (Pearson correlation or weighted F1). The returned model holds the
/// parameters of the best epoch. LC features, when present and enabled,
/// are the precomputed ones stored on each sample.
pub fn finetune<T: Real>(data: &PreparedDataset<T>, config: &FusionConfig) -> Result<FineTuned<T>, FusionError> {
    config.validate()?;
    let n = data.samples.len();
    if n < 2 {
        return Err(FusionError::BadDataset("need at least 2 samples".into()));
    }
    let use_lc = config.use_lc && data.dims.lc_dim.is_some();
    if use_lc && data.samples.iter().any(|s| s.lc.is_none()) {
        return Err(FusionError::MissingLcFeatures);
    }
    let dims = InputDims { lc_dim: if use_lc { data.dims.lc_dim } else { None }, ..data.dims };
    let mut model = FusionModel::<T>::new(config, &data.task, dims, seed::derive(config.seed, &[b"fusion-init"]))?;
    let (train_idx, val_idx) = split_indices(n, config.validation_fraction, config.seed);
    let mut opt = OptimizerState::new(&model.store, config.adam);

    let (report, metric, records) = evaluate(&model, data, &val_idx, config)?;
    let mut best = (metric, 0usize, model.store.clone(), report, records);
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut seed::rng_for(config.seed, &[b"finetune-epoch", &(epoch as u64).to_le_bytes()]));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &model, &data.samples, chunk)?;
            total += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
            let grads = tape.backward(loss)?.for_store(&model.store);
            adam_step(&mut model.store, &grads, &mut opt)?;
        }
        let (report, metric, records) = evaluate(&model, data, &val_idx, config)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: total / train_idx.len() as f64,
            val_metric: metric,
            validation: report.clone(),
        });
        if metric > best.0 {
            best = (metric, epoch, model.store.clone(), report, records);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, store, validation, predictions) = best;
    model.store.load_from(&store)?;
    Ok(FineTuned { model, history, best_epoch, validation, predictions })
}
