use super::V2lcError;
use crate::numerics::{Real, Tape, Tensor, Var};

const UNIT_NORM_TOL: f64 = 1e-4;

/// Binary `N × K` positive mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMatrix {
    n: usize,
    k: usize,
    data: Vec<bool>,
}

impl TargetMatrix {
    pub fn from_ownership(ownership: &[Vec<usize>], k: usize) -> Result<Self, V2lcError> {
        let n = ownership.len();
        let mut data = vec![false; n * k];
        for (i, cols) in ownership.iter().enumerate() {
            for &j in cols {
                if j >= k {
                    return Err(V2lcError::BadBatch(format!("segment {i} owns column {j} of {k}")));
                }
                data[i * k + j] = true;
            }
        }
        Ok(Self { n, k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.k + j] = v;
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.data[i * self.k..(i + 1) * self.k].iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

fn check_unit_rows<T: Real>(m: &Tensor<T>, what: &str) -> Result<(), V2lcError> {
    for r in 0..m.rows() {
        let norm = m.row(r).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(V2lcError::NotUnitNorm(format!("{what} row {r} has norm {norm}")));
        }
    }
    Ok(())
}

/// Own comments plus every batch comment whose cosine with one of them
/// is strictly above `theta`.
pub fn build_targets<T: Real>(
    ownership: &[Vec<usize>],
    comments: &Tensor<T>,
    theta: f64,
) -> Result<TargetMatrix, V2lcError> {
    let k = comments.rows();
    check_unit_rows(comments, "comment")?;
    let mut targets = TargetMatrix::from_ownership(ownership, k)?;
    let gram = comments.matmul(&comments.transpose())?;
    for (i, owned) in ownership.iter().enumerate() {
        for j in 0..k {
            if targets.get(i, j) {
                continue;
            }
            if owned.iter().any(|&m| gram.get(j, m).as_f64().min(1.0) > theta) {
                targets.set(i, j, true);
            }
        }
    }
    Ok(targets)
}

/// Multi-positive InfoNCE from segments to comments:
/// `mean_i −(1/|P_i|) Σ_{j∈P_i} log softmax_j((S·Cᵀ)·τ)`.
pub fn contrastive_loss<T: Real>(
    tape: &mut Tape<T>,
    s: Var,
    c: Var,
    targets: &TargetMatrix,
    tau: Var,
) -> Result<Var, V2lcError> {
    let [n, _] = tape.shape(s);
    let [k, _] = tape.shape(c);
    if targets.n() != n || targets.k() != k {
        return Err(V2lcError::BadBatch(format!(
            "targets {}x{} for {n} segments and {k} comments",
            targets.n(),
            targets.k()
        )));
    }
    let t = tape.value(tau).data()[0].as_f64();
    if !(t > 0.0) {
        return Err(V2lcError::NonPositiveTemperature(t));
    }
    let mut weights = Tensor::zeros(n, k);
    for i in 0..n {
        let p = targets.row_count(i);
        if p == 0 {
            return Err(V2lcError::EmptyPositiveRow(i));
        }
        let w = -1.0 / (p as f64 * n as f64);
        for j in 0..k {
            if targets.get(i, j) {
                weights.set(i, j, T::of(w));
            }
        }
    }
    let sims = tape.matmul_bt(s, c)?;
    let logits = tape.mul_scalar(sims, tau)?;
    let logp = tape.log_softmax_rows(logits);
    let w = tape.constant(weights);
    let weighted = tape.mul(logp, w)?;
    Ok(tape.sum(weighted))
}

/// Plain evaluation of [`contrastive_loss`] on fixed matrices.
pub fn contrastive_loss_value<T: Real>(
    s: &Tensor<T>,
    c: &Tensor<T>,
    targets: &TargetMatrix,
    tau: f64,
) -> Result<f64, V2lcError> {
    let mut tape = Tape::new();
    let s = tape.constant(s.clone());
    let c = tape.constant(c.clone());
    let tau = tape.constant(Tensor::scalar(T::of(tau)));
    let loss = contrastive_loss(&mut tape, s, c, targets, tau)?;
    Ok(tape.value(loss).data()[0].as_f64())
}
