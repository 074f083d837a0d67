use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Real, StoreGrads, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers mirror the store's tensors.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .ids()
            .map(|id| {
                let [r, c] = store.get(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One optimizer update of every tensor in `store`.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &StoreGrads<T>,
    state: &mut OptimizerState<T>,
) -> Result<(), NumericsError> {
    if store.is_frozen() {
        return Err(NumericsError::FrozenStore);
    }
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment buffers",
            store.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for id in store.ids() {
        if grads.get(id).shape() != store.get(id).shape() || state.first[id.index()].shape() != store.get(id).shape() {
            return Err(NumericsError::ShapeMismatch(format!("gradient for `{}`", store.name(id))));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as f64;
    let bc1 = T::of(1.0 - cfg.beta1.powf(t));
    let bc2 = T::of(1.0 - cfg.beta2.powf(t));
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        let m = state.first[id.index()].data_mut();
        let v = state.second[id.index()].data_mut();
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
