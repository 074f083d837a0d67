use super::{ParamStore, StoreGrads};

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(p + eps) − f(p − eps)) / 2eps`, one scalar at a time, using the
/// relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    analytic: &StoreGrads<f64>,
    mut loss_fn: F,
    eps: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.get(id).len() {
            let original = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = original + eps;
            let plus = loss_fn(store);
            store.get_mut(id).data_mut()[i] = original - eps;
            let minus = loss_fn(store);
            store.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_f64(2, 3, &[0.5, -1.5, 2.0, 0.25, 3.0, -0.75]).unwrap());
        let loss_of = |s: &ParamStore<f64>| 0.5 * s.get(w).data().iter().map(|v| v * v).sum::<f64>();
        let grads = {
            let mut tape = Tape::new();
            let p = tape.param(&store, w);
            let sq = tape.mul(p, p).unwrap();
            let s = tape.sum(sq);
            let l = tape.scale(s, 0.5);
            tape.backward(l).unwrap().for_store(&store)
        };
        let report = finite_diff_check(&mut store, &grads, loss_of, 1e-5);
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_f64(1, 1, &[2.0]).unwrap());
        let wrong = StoreGrads::zeros_like(&store);
        let report = finite_diff_check(&mut store, &wrong, |s| s.get(w).data()[0].powi(2), 1e-5);
        assert!((report.max_rel_error - 1.0).abs() < 1e-9);
        assert_eq!(report.worst_param, "w");
    }
}
