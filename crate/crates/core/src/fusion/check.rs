use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{PreparedSample, Target};
use super::model::{FusionModel, InputDims, RawFeatures};
use super::train::batch_loss;
use super::{FusionConfig, FusionError, TaskSpec};
use crate::numerics::{finite_diff_check, GradCheckReport, ParamStore, Tape, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckTask {
    /// Fusion, LC augmentation and the MAE loss.
    RegressionWithLc,
    /// Fusion and the cross-entropy loss.
    Classification,
}

fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap_or_else(|_| Tensor::zeros(rows, cols))
}

/// Gradient check of a full fusion composite on two random samples in 64-bit.
pub fn fusion_gradcheck(config: &FusionConfig, task: GradCheckTask, check_seed: u64, eps: f64) -> Result<GradCheckReport, FusionError> {
    let mut rng = seed::rng(seed::derive(check_seed, &[b"fusion-gradcheck"]));
    let (spec, lc_dim) = match task {
        GradCheckTask::RegressionWithLc => (TaskSpec::regression(-3.0, 3.0), Some(6)),
        GradCheckTask::Classification => (TaskSpec::classification(["a", "b", "c"]), None),
    };
    let dims = InputDims { text_vocab: 10, acoustic_dim: 5, visual_dim: 7, lc_dim };
    let model = FusionModel::<f64>::new(config, &spec, dims, rng.gen())?;
    let samples: Vec<PreparedSample<f64>> = (0..2)
        .map(|i| {
            let lt = rng.gen_range(2..5);
            let text_ids = (0..lt).map(|_| rng.gen_range(0..10)).collect();
            let la = rng.gen_range(2..6);
            let lv = rng.gen_range(2..6);
            let raw = RawFeatures { text_ids, acoustic: random_tensor(&mut rng, la, 5), visual: random_tensor(&mut rng, lv, 7) };
            let lw = rng.gen_range(1..4);
            let lc = lc_dim.map(|d| random_tensor(&mut rng, lw, d));
            // labels far from the initial outputs keep the MAE kink out of reach
            let target = match task {
                GradCheckTask::RegressionWithLc => Target::Value(if i == 0 { 2.5 } else { -2.5 }),
                GradCheckTask::Classification => Target::Class(i % 3),
            };
            PreparedSample { id: format!("s{i}"), target, raw, lc }
        })
        .collect();
    let indices = [0, 1];
    let loss_with = |m: &FusionModel<f64>| -> Result<(Tape<f64>, crate::numerics::Var), FusionError> {
        let mut tape = Tape::new();
        let l = batch_loss(&mut tape, m, &samples, &indices)?;
        Ok((tape, l))
    };
    let (tape, loss) = loss_with(&model)?;
    let analytic = tape.backward(loss)?.for_store(&model.store);
    let mut store: ParamStore<f64> = model.store.clone();
    let report = finite_diff_check(
        &mut store,
        &analytic,
        |s| {
            let mut m = model.clone();
            m.store = s.clone();
            loss_with(&m).map(|(t, l)| t.value(l).data()[0]).unwrap_or(f64::NAN)
        },
        eps,
    );
    Ok(report)
}
