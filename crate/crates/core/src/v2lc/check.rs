use rand::Rng;

use super::model::{CommentEncoder, SegmentInput, V2LCConfig, V2LCModel};
use super::objective::{build_targets, contrastive_loss, TargetMatrix};
use super::vocab::Vocab;
use super::V2lcError;
use crate::numerics::{finite_diff_check, GradCheckReport, ParamStore, Tape, Tensor};
use crate::seed;

/// Central-difference step used by the gradient checks.
pub const GRADCHECK_EPS: f64 = 1e-5;

struct Probe {
    model: V2LCModel<f64>,
    inputs: Vec<SegmentInput<f64>>,
    comments: Tensor<f64>,
    targets: TargetMatrix,
}

impl Probe {
    fn with_store(&self, store: &ParamStore<f64>) -> Result<f64, V2lcError> {
        let mut model = self.model.clone();
        model.store = store.clone();
        let (tape, loss) = self.loss(&model)?;
        Ok(tape.value(loss).data()[0])
    }

    fn loss(&self, model: &V2LCModel<f64>) -> Result<(Tape<f64>, crate::numerics::Var), V2lcError> {
        let mut tape = Tape::new();
        let rows = self
            .inputs
            .iter()
            .map(|i| model.encode_on(&mut tape, i).map(|v| v.s))
            .collect::<Result<Vec<_>, _>>()?;
        let s = tape.concat_rows(&rows)?;
        let c = tape.constant(self.comments.clone());
        let tau = tape.param(&model.store, model.tau_id());
        let loss = contrastive_loss(&mut tape, s, c, &self.targets, tau)?;
        Ok((tape, loss))
    }
}

/// Gradient check of the full segment encoder plus contrastive loss on
/// a two-segment batch in 64-bit.
pub fn v2lc_gradcheck(config: &V2LCConfig, check_seed: u64) -> Result<GradCheckReport, V2lcError> {
    let mut rng = seed::rng(seed::derive(check_seed, &[b"v2lc-gradcheck"]));
    let vocab = Vocab::build(["好 看 哈 笑 死 了 a b c d"], 64);
    let frame_dim = 5;
    let model = V2LCModel::<f64>::new(config, vocab.len(), frame_dim, rng.gen())?;
    let encoder = CommentEncoder::<f64>::new(vocab.len(), config, rng.gen());
    let mut make_input = |text: &str| {
        let frames: Vec<Vec<f32>> =
            (0..config.frames_per_segment).map(|_| (0..frame_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        SegmentInput::from_rows(vocab.tokenize(text, config.max_tokens), &frames)
    };
    let inputs = vec![make_input("好 看 a b")?, make_input("笑 死 了 c")?];
    let texts = ["好看", "哈哈 a", "笑死", "了 d"];
    let seqs: Vec<_> = texts.iter().map(|t| vocab.tokenize(t, config.max_tokens)).collect();
    let comments = encoder.encode_comments(&seqs)?;
    let targets = build_targets(&[vec![0, 1], vec![2, 3]], &comments, config.theta)?;
    let probe = Probe { model, inputs, comments, targets };

    let (tape, loss) = probe.loss(&probe.model)?;
    let analytic = tape.backward(loss)?.for_store(&probe.model.store);
    let mut store = probe.model.store.clone();
    let report = finite_diff_check(
        &mut store,
        &analytic,
        |s| probe.with_store(s).unwrap_or(f64::NAN),
        GRADCHECK_EPS,
    );
    Ok(report)
}
