use serde::{Deserialize, Serialize};

use super::{FusionConfig, FusionError, TaskKind, TaskSpec};
use crate::numerics::{
    attention, mean_pool, normal_tensor, Checkpoint, Linear, NumericsError, ParamId, ParamStore, ProjectionParams,
    Real, Tape, Tensor, TransformerBlock, Var,
};
use crate::seed;

/// Raw per-modality inputs of one utterance, before the adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures<T> {
    pub text_ids: Vec<usize>,
    pub acoustic: Tensor<T>,
    pub visual: Tensor<T>,
}

/// Modality sequences already projected to the shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures<T> {
    pub f_t: Tensor<T>,
    pub f_a: Tensor<T>,
    pub f_v: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct ModalityVars {
    pub f_t: Var,
    pub f_a: Var,
    pub f_v: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub z_t: Var,
    pub z_a: Var,
    pub z_v: Var,
    /// Key/value sources of the text, acoustic and visual streams.
    pub kv: [Var; 3],
    pub z: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionState<T> {
    pub z_t: Tensor<T>,
    pub z_a: Tensor<T>,
    pub z_v: Tensor<T>,
    pub z: Vec<T>,
}

/// Input widths the adapters are built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub text_vocab: usize,
    pub acoustic_dim: usize,
    pub visual_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lc_dim: Option<usize>,
}

/// One cross-attention stream followed by its self-attention block.
#[derive(Debug, Clone, Copy)]
pub struct StreamParams {
    pub cross: ProjectionParams,
    pub block: TransformerBlock,
}

#[derive(Debug, Clone, Copy)]
pub struct LcParams {
    pub adapter: Linear,
    pub block: TransformerBlock,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    text_embedding: ParamId,
    acoustic: Linear,
    visual: Linear,
    streams: [StreamParams; 3],
    lc: Option<LcParams>,
    head: HeadParams,
}

/// Tri-modal fusion encoder with an optional live-comment branch.
#[derive(Debug)]
pub struct FusionModel<T> {
    pub config: FusionConfig,
    pub task: TaskSpec,
    pub dims: InputDims,
    pub store: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Clone for FusionModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            task: self.task.clone(),
            dims: self.dims,
            store: self.store.clone(),
            layout: self.layout.clone(),
        }
    }
}

/// `Attention(Q_m1, K_{m2+m3}, V_{m2+m3})` then one self-attention block.
pub fn stream_on<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &StreamParams,
    query: Var,
    others: [Var; 2],
    heads: usize,
) -> Result<(Var, Var), NumericsError> {
    let kv = tape.concat_rows(&others)?;
    let crossed = attention(tape, store, query, kv, &params.cross, heads)?;
    Ok((params.block.forward(tape, store, crossed)?, kv))
}

/// Cross-modality fusion of already adapted modality sequences.
pub fn cross_modality_fuse_on<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    streams: &[StreamParams; 3],
    m: ModalityVars,
    heads: usize,
) -> Result<FusionVars, NumericsError> {
    for v in [m.f_t, m.f_a, m.f_v] {
        if tape.shape(v)[0] == 0 {
            return Err(NumericsError::EmptySequence);
        }
    }
    let (z_t, kv_t) = stream_on(tape, store, &streams[0], m.f_t, [m.f_a, m.f_v], heads)?;
    let (z_a, kv_a) = stream_on(tape, store, &streams[1], m.f_a, [m.f_v, m.f_t], heads)?;
    let (z_v, kv_v) = stream_on(tape, store, &streams[2], m.f_v, [m.f_t, m.f_a], heads)?;
    let pooled = [mean_pool(tape, z_t)?, mean_pool(tape, z_a)?, mean_pool(tape, z_v)?];
    let z = tape.concat_cols(&pooled)?;
    Ok(FusionVars { z_t, z_a, z_v, kv: [kv_t, kv_a, kv_v], z })
}

impl<T: Real> FusionModel<T> {
    /// Each component draws from its own seeded stream, so the parameters
    /// shared by models with and without the LC branch are identical.
    pub fn new(config: &FusionConfig, task: &TaskSpec, dims: InputDims, init_seed: u64) -> Result<Self, FusionError> {
        config.validate()?;
        task.validate()?;
        if dims.text_vocab == 0 || dims.acoustic_dim == 0 || dims.visual_dim == 0 || dims.lc_dim == Some(0) {
            return Err(FusionError::InvalidConfig("input widths must be positive".into()));
        }
        let d = config.d_model;
        let heads = config.heads;
        let rng = |part: &[u8]| seed::rng_for(init_seed, &[part]);
        let mut store = ParamStore::new();

        let mut r = rng(b"adapters");
        let text_embedding = store.add("fusion.text_embedding", normal_tensor(&mut r, dims.text_vocab, d, 1.0));
        let acoustic = Linear::new(&mut store, &mut r, "fusion.acoustic_adapter", dims.acoustic_dim, d, true);
        let visual = Linear::new(&mut store, &mut r, "fusion.visual_adapter", dims.visual_dim, d, true);

        let mut r = rng(b"streams");
        let streams = ["t", "a", "v"].map(|m| StreamParams {
            cross: ProjectionParams::new(&mut store, &mut r, &format!("fusion.cross_{m}"), d),
            block: TransformerBlock::new(&mut store, &mut r, &format!("fusion.self_{m}"), d, heads),
        });

        let mut r = rng(b"head");
        let head_in = if dims.lc_dim.is_some() { 4 * d } else { 3 * d };
        let head = HeadParams {
            hidden: Linear::new(&mut store, &mut r, "fusion.head.hidden", head_in, config.head_hidden, true),
            out: Linear::new(&mut store, &mut r, "fusion.head.out", config.head_hidden, task.out_dim(), true),
        };

        let lc = dims.lc_dim.map(|lc_dim| {
            let mut r = rng(b"lc");
            LcParams {
                adapter: Linear::new(&mut store, &mut r, "fusion.lc_adapter", lc_dim, d, true),
                block: TransformerBlock::new(&mut store, &mut r, "fusion.lc_self", d, heads),
            }
        });

        let layout = Layout { text_embedding, acoustic, visual, streams, lc, head };
        Ok(Self { config: config.clone(), task: task.clone(), dims, store, layout })
    }

    pub fn uses_lc(&self) -> bool {
        self.layout.lc.is_some()
    }

    pub fn streams(&self) -> &[StreamParams; 3] {
        &self.layout.streams
    }

    pub fn lc_params(&self) -> Option<&LcParams> {
        self.layout.lc.as_ref()
    }

    pub fn head_params(&self) -> &HeadParams {
        &self.layout.head
    }

    pub fn adapt_on(&self, tape: &mut Tape<T>, raw: &RawFeatures<T>) -> Result<ModalityVars, FusionError> {
        let store = &self.store;
        if raw.text_ids.is_empty() || raw.acoustic.rows() == 0 || raw.visual.rows() == 0 {
            return Err(NumericsError::EmptySequence.into());
        }
        if let Some(&bad) = raw.text_ids.iter().find(|&&i| i >= self.dims.text_vocab) {
            return Err(NumericsError::ShapeMismatch(format!("token {bad} outside text vocabulary")).into());
        }
        let table = tape.param(store, self.layout.text_embedding);
        let f_t = tape.gather_rows(table, &raw.text_ids)?;
        let a = tape.constant(raw.acoustic.clone());
        let f_a = self.layout.acoustic.forward(tape, store, a)?;
        let v = tape.constant(raw.visual.clone());
        let f_v = self.layout.visual.forward(tape, store, v)?;
        Ok(ModalityVars { f_t, f_a, f_v })
    }

    pub fn fuse_on(&self, tape: &mut Tape<T>, m: ModalityVars) -> Result<FusionVars, FusionError> {
        Ok(cross_modality_fuse_on(tape, &self.store, &self.layout.streams, m, self.config.heads)?)
    }

    /// `Concat(Z, Mean(SelfAttn(adapter(lc))))`, `[1 × 4d]`.
    pub fn augment_on(&self, tape: &mut Tape<T>, z: Var, lc_seq: Var) -> Result<Var, FusionError> {
        let lc = self.layout.lc.as_ref().ok_or_else(|| FusionError::InvalidConfig("model has no LC branch".into()))?;
        if tape.shape(lc_seq)[0] == 0 {
            return Err(NumericsError::EmptySequence.into());
        }
        let x = lc.adapter.forward(tape, &self.store, lc_seq)?;
        let x = lc.block.forward(tape, &self.store, x)?;
        let pooled = mean_pool(tape, x)?;
        Ok(tape.concat_cols(&[z, pooled])?)
    }

    /// Linear, GELU, Linear. Unclamped.
    pub fn head_on(&self, tape: &mut Tape<T>, features: Var) -> Result<Var, FusionError> {
        let h = self.layout.head.hidden.forward(tape, &self.store, features)?;
        let h = tape.gelu(h);
        Ok(self.layout.head.out.forward(tape, &self.store, h)?)
    }

    /// Raw inputs to head output `[1 × out_dim]`.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        raw: &RawFeatures<T>,
        lc_seq: Option<&Tensor<T>>,
    ) -> Result<Var, FusionError> {
        let m = self.adapt_on(tape, raw)?;
        let fused = self.fuse_on(tape, m)?;
        let features = match (self.uses_lc(), lc_seq) {
            (true, Some(lc)) => {
                let lc = tape.constant(lc.clone());
                self.augment_on(tape, fused.z, lc)?
            }
            (true, None) => return Err(FusionError::MissingLcFeatures),
            (false, _) => fused.z,
        };
        self.head_on(tape, features)
    }

    /// Value-level fusion of adapted features.
    pub fn cross_modality_fuse(&self, m: &ModalityFeatures<T>) -> Result<FusionState<T>, FusionError> {
        let mut tape = Tape::new();
        let vars = ModalityVars {
            f_t: tape.constant(m.f_t.clone()),
            f_a: tape.constant(m.f_a.clone()),
            f_v: tape.constant(m.f_v.clone()),
        };
        let f = self.fuse_on(&mut tape, vars)?;
        Ok(FusionState {
            z_t: tape.value(f.z_t).clone(),
            z_a: tape.value(f.z_a).clone(),
            z_v: tape.value(f.z_v).clone(),
            z: tape.value(f.z).data().to_vec(),
        })
    }

    pub fn augment_with_lc(&self, state: &FusionState<T>, lc_seq: &Tensor<T>) -> Result<Vec<T>, FusionError> {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::row_vector(state.z.clone()));
        let lc = tape.constant(lc_seq.clone());
        let out = self.augment_on(&mut tape, z, lc)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Head output for a fused feature vector; regression is clamped to the
    /// label range here and only here.
    pub fn predict_features(&self, features: &[T]) -> Result<Vec<f64>, FusionError> {
        let expected = self.store.get(self.layout.head.hidden.weight).rows();
        if features.len() != expected {
            return Err(NumericsError::ShapeMismatch(format!("head expects {expected} features, got {}", features.len()))
                .into());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(features.to_vec()));
        let out = self.head_on(&mut tape, x)?;
        Ok(self.finish(tape.value(out).data()))
    }

    pub fn predict(&self, raw: &RawFeatures<T>, lc_seq: Option<&Tensor<T>>) -> Result<Vec<f64>, FusionError> {
        let mut tape = Tape::new();
        let out = self.forward_on(&mut tape, raw, lc_seq)?;
        Ok(self.finish(tape.value(out).data()))
    }

    fn finish(&self, out: &[T]) -> Vec<f64> {
        let out: Vec<f64> = out.iter().map(|v| v.as_f64()).collect();
        match (self.task.kind, self.task.label_range) {
            (TaskKind::Regression, Some([lo, hi])) => vec![out[0].clamp(lo, hi)],
            _ => out,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({ "fusion": self.config, "task": self.task, "dims": self.dims });
        Checkpoint::from_store(&self.store, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_t(rng: &mut impl Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn model(d: usize, lc: Option<usize>, task: TaskSpec) -> FusionModel<f64> {
        let cfg = FusionConfig { d_model: d, heads: 2, head_hidden: 12, ..FusionConfig::default() };
        FusionModel::new(&cfg, &task, InputDims { text_vocab: 20, acoustic_dim: 3, visual_dim: 4, lc_dim: lc }, 5).unwrap()
    }

    fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
        Tensor::from_rows(&perm.iter().map(|&p| t.row(p).to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn fusion_shapes() {
        let mut rng = seed::rng(1);
        let m = model(16, None, TaskSpec::regression(-1.0, 1.0));
        let mut tape = Tape::new();
        let vars = ModalityVars {
            f_t: tape.constant(rand_t(&mut rng, 4, 16)),
            f_a: tape.constant(rand_t(&mut rng, 6, 16)),
            f_v: tape.constant(rand_t(&mut rng, 8, 16)),
        };
        let f = m.fuse_on(&mut tape, vars).unwrap();
        assert_eq!(tape.shape(f.z_t), [4, 16]);
        assert_eq!(tape.shape(f.kv[0]), [14, 16]);
        assert_eq!(tape.shape(f.kv[1]), [12, 16]);
        assert_eq!(tape.shape(f.kv[2]), [10, 16]);
        assert_eq!(tape.shape(f.z), [1, 48]);
    }

    #[test]
    fn key_value_order_does_not_matter() {
        let mut rng = seed::rng(2);
        let m = model(8, None, TaskSpec::regression(-1.0, 1.0));
        let feats = ModalityFeatures { f_t: rand_t(&mut rng, 3, 8), f_a: rand_t(&mut rng, 5, 8), f_v: rand_t(&mut rng, 4, 8) };
        let base = m.cross_modality_fuse(&feats).unwrap();
        let shuffled = ModalityFeatures {
            f_t: feats.f_t.clone(),
            f_a: permute_rows(&feats.f_a, &[4, 2, 0, 1, 3]),
            f_v: permute_rows(&feats.f_v, &[3, 1, 2, 0]),
        };
        let other = m.cross_modality_fuse(&shuffled).unwrap();
        assert!(base.z_t.max_abs_diff(&other.z_t) < 1e-12);
        for i in 0..8 {
            assert!((base.z[i] - other.z[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lc_augmentation() {
        let mut rng = seed::rng(3);
        let m = model(8, Some(6), TaskSpec::regression(-1.0, 1.0));
        let feats = ModalityFeatures { f_t: rand_t(&mut rng, 3, 8), f_a: rand_t(&mut rng, 2, 8), f_v: rand_t(&mut rng, 4, 8) };
        let state = m.cross_modality_fuse(&feats).unwrap();
        let lc = rand_t(&mut rng, 5, 6);
        let out = m.augment_with_lc(&state, &lc).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(&out[..24], &state.z[..]);
        let permuted = m.augment_with_lc(&state, &permute_rows(&lc, &[2, 4, 1, 0, 3])).unwrap();
        for (a, b) in out.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }

        let single = rand_t(&mut rng, 1, 6);
        let one = m.augment_with_lc(&state, &single).unwrap();
        let params = m.lc_params().unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(single);
        let x = params.adapter.forward(&mut tape, &m.store, x).unwrap();
        let x = params.block.forward(&mut tape, &m.store, x).unwrap();
        assert_eq!(&one[24..], tape.value(x).data());
    }

    #[test]
    fn zero_head_predicts_zero() {
        let mut m = model(8, None, TaskSpec::regression(-1.0, 1.0));
        let ids: Vec<ParamId> = m.store.ids().collect();
        for id in ids {
            if m.store.name(id).starts_with("fusion.head") {
                for v in m.store.get_mut(id).data_mut() {
                    *v = 0.0;
                }
            }
        }
        assert_eq!(m.predict_features(&[0.3; 24]).unwrap(), vec![0.0]);
        assert!(m.predict_features(&[0.3; 23]).is_err());
    }

    #[test]
    fn emotion_head_width_and_clamp() {
        let names = ["neutral", "joy", "surprise", "anger", "sadness", "disgust", "fear"];
        let m = model(8, None, TaskSpec::classification(names));
        assert_eq!(m.predict_features(&[0.1; 24]).unwrap().len(), 7);

        let mut r = model(8, None, TaskSpec::regression(-1.0, 1.0));
        let bias = r.head_params().out.bias.unwrap();
        r.store.get_mut(bias).data_mut()[0] = 50.0;
        assert_eq!(r.predict_features(&[0.0; 24]).unwrap(), vec![1.0]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![0.0; 24]));
        let raw = r.head_on(&mut tape, x).unwrap();
        assert!(tape.value(raw).data()[0] > 40.0);
    }

    #[test]
    fn lc_branch_does_not_perturb_shared_parameters() {
        let plain = model(8, None, TaskSpec::regression(-1.0, 1.0));
        let with_lc = model(8, Some(6), TaskSpec::regression(-1.0, 1.0));
        for (id, name, t) in plain.store.iter() {
            if name.starts_with("fusion.head") {
                continue;
            }
            let other = with_lc.store.id(name).unwrap();
            assert_eq!(with_lc.store.get(other), t, "{name} {}", id.index());
        }
    }
}
