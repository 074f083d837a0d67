//! Attention and transformer building blocks over a [`Tape`].

use rand::Rng;

use super::params::scaled_normal;
use super::{NumericsError, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// `x · W + b` with `W: [in × out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), scaled_normal(rng, fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)));
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Query, key, value and output projections, each `[d × d]`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl ProjectionParams {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d_model: usize) -> Self {
        let mut mk = |suffix: &str| store.add(format!("{name}.{suffix}"), scaled_normal(rng, d_model, d_model));
        Self { wq: mk("wq"), wk: mk("wk"), wv: mk("wv"), wo: mk("wo") }
    }
}

/// Multi-head scaled dot-product attention. Queries come from `q_src`,
/// keys and values from `kv_src`; pass the same node twice for
/// self-attention. No mask is applied.
pub fn attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    q_src: Var,
    kv_src: Var,
    params: &ProjectionParams,
    heads: usize,
) -> Result<Var, NumericsError> {
    let [lq, d] = tape.shape(q_src);
    let [lkv, dkv] = tape.shape(kv_src);
    if heads == 0 || d % heads != 0 {
        return Err(NumericsError::ShapeMismatch(format!("d_model {d} not divisible by {heads} heads")));
    }
    if d != dkv {
        return Err(NumericsError::ShapeMismatch(format!("query width {d} vs key/value width {dkv}")));
    }
    if lq == 0 || lkv == 0 {
        return Err(NumericsError::EmptySequence);
    }
    let wq = tape.param(store, params.wq);
    let wk = tape.param(store, params.wk);
    let wv = tape.param(store, params.wv);
    let wo = tape.param(store, params.wo);
    let q = tape.matmul(q_src, wq)?;
    let k = tape.matmul(kv_src, wk)?;
    let v = tape.matmul(kv_src, wv)?;

    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head_dim, head_dim)?,
                tape.slice_cols(k, h * head_dim, head_dim)?,
                tape.slice_cols(v, h * head_dim, head_dim)?,
            )
        };
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax_rows(scores);
        outs.push(tape.matmul(probs, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = tape.matmul(joined, wo)?;
    tape.check_finite(out, "attention output")?;
    Ok(out)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_model: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, d_model, T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, d_model)),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NumericsError> {
        let n = tape.normalize_rows(x, LAYER_NORM_EPS);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, b)
    }
}

/// Two-layer position-wise network of hidden width `4 · d`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d_model: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), d_model, 4 * d_model, true),
            down: Linear::new(store, rng, &format!("{name}.down"), 4 * d_model, d_model, true),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NumericsError> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

/// Pre-norm residual block: `x + SelfAttn(LN(x))` then `+ FFN(LN(·))`.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: ProjectionParams,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d_model),
            attn: ProjectionParams::new(store, rng, &format!("{name}.attn"), d_model),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d_model),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d_model),
            heads,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NumericsError> {
        let normed = self.ln_attn.forward(tape, store, x)?;
        let attended = attention(tape, store, normed, normed, &self.attn, self.heads)?;
        let x = tape.add(x, attended)?;
        let normed = self.ln_ffn.forward(tape, store, x)?;
        let ff = self.ffn.forward(tape, store, normed)?;
        tape.add(x, ff)
    }
}

/// Mean over the sequence axis.
pub fn mean_pool<T: Real>(tape: &mut Tape<T>, seq: Var) -> Result<Var, NumericsError> {
    tape.mean_rows(seq)
}

/// Standard sinusoidal position table `[len × d]`.
pub fn sinusoidal_positions<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            out.set(pos, i, T::of(v));
        }
    }
    out
}
