//! Independent transcriptions used as oracles by the acceptance suite.

use lcaffect_core::numerics::ParamStore;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn random(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
}

/// Triple loop over rows, columns and owned comments with explicit cosines.
pub fn brute_force_targets(ownership: &[Vec<usize>], c: &Mat, theta: f64) -> Vec<Vec<bool>> {
    let k = c.len();
    let mut out = vec![vec![false; k]; ownership.len()];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut hit = ownership[i].contains(&j);
            for &m in &ownership[i] {
                let dot: f64 = (0..c[j].len()).map(|x| c[j][x] * c[m][x]).sum();
                let nj = c[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                let nm = c[m].iter().map(|v| v * v).sum::<f64>().sqrt();
                if dot / (nj * nm) > theta {
                    hit = true;
                }
            }
            *cell = hit;
        }
    }
    out
}

/// Mean over rows of `−log(exp(τ s·c⁺) / Σ_j exp(τ s·c_j))`.
pub fn single_positive_loss(s: &Mat, c: &Mat, positive: &[usize], tau: f64) -> f64 {
    let mut total = 0.0;
    for (i, si) in s.iter().enumerate() {
        let logit = |j: usize| tau * si.iter().zip(&c[j]).map(|(a, b)| a * b).sum::<f64>();
        let denom: f64 = (0..c.len()).map(|j| logit(j).exp()).sum();
        total += -(logit(positive[i]).exp() / denom).ln();
    }
    total / s.len() as f64
}

fn param(store: &ParamStore<f64>, name: &str) -> Mat {
    store.get(store.id(name).unwrap_or_else(|| panic!("missing {name}"))).to_rows()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for k in 0..b.len() {
            for j in 0..b[0].len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn add_bias(a: &Mat, b: &Mat) -> Mat {
    a.iter().map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect()).collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn attention(store: &ParamStore<f64>, prefix: &str, q_src: &Mat, kv_src: &Mat, heads: usize) -> Mat {
    let q = matmul(q_src, &param(store, &format!("{prefix}.wq")));
    let k = matmul(kv_src, &param(store, &format!("{prefix}.wk")));
    let v = matmul(kv_src, &param(store, &format!("{prefix}.wv")));
    let d = q[0].len();
    let hd = d / heads;
    let mut joined = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..q.len() {
            let scores: Vec<f64> =
                (0..k.len()).map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in cols.clone() {
                joined[i][c] = (0..k.len()).map(|j| exps[j] / z * v[j][c]).sum();
            }
        }
    }
    matmul(&joined, &param(store, &format!("{prefix}.wo")))
}

fn layer_norm(store: &ParamStore<f64>, prefix: &str, x: &Mat) -> Mat {
    let g = param(store, &format!("{prefix}.gain"));
    let b = param(store, &format!("{prefix}.bias"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            r.iter().enumerate().map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * g[0][c] + b[0][c]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn block(store: &ParamStore<f64>, prefix: &str, x: &Mat, heads: usize) -> Mat {
    let n1 = layer_norm(store, &format!("{prefix}.ln_attn"), x);
    let x = add(x, &attention(store, &format!("{prefix}.attn"), &n1, &n1, heads));
    let n2 = layer_norm(store, &format!("{prefix}.ln_ffn"), &x);
    let up = add_bias(&matmul(&n2, &param(store, &format!("{prefix}.ffn.up.weight"))), &param(store, &format!("{prefix}.ffn.up.bias")));
    let act: Mat = up.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    let down = add_bias(
        &matmul(&act, &param(store, &format!("{prefix}.ffn.down.weight"))),
        &param(store, &format!("{prefix}.ffn.down.bias")),
    );
    add(&x, &down)
}

fn mean(x: &Mat) -> Vec<f64> {
    (0..x[0].len()).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / x.len() as f64).collect()
}

/// Per-stream outputs and the concatenated pooled vector, stream order t, a, v.
pub fn fusion_oracle(store: &ParamStore<f64>, f: [&Mat; 3], heads: usize) -> (Vec<Mat>, Vec<f64>) {
    let names = ["t", "a", "v"];
    let mut zs = Vec::new();
    let mut z = Vec::new();
    for m in 0..3 {
        let kv: Mat = f[(m + 1) % 3].iter().chain(f[(m + 2) % 3].iter()).cloned().collect();
        let crossed = attention(store, &format!("fusion.cross_{}", names[m]), f[m], &kv, heads);
        let zm = block(store, &format!("fusion.self_{}", names[m]), &crossed, heads);
        z.extend(mean(&zm));
        zs.push(zm);
    }
    (zs, z)
}

/// Support-weighted precision, recall and F1 from an explicit confusion matrix.
pub fn confusion_prf(preds: &[usize], labels: &[usize]) -> (f64, f64, f64) {
    let classes = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        cm[l][p] += 1;
    }
    let n = labels.len() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let support: usize = cm[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = cm[c][c] as f64;
        let predicted: usize = (0..classes).map(|r| cm[r][c]).sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = tp / support as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let w = support as f64 / n;
        wp += w * p;
        wr += w * r;
        wf += w * f;
    }
    (wp, wr, wf)
}
