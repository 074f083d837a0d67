use lcaffect_core::fusion::{FusionConfig, FusionModel, InputDims, ModalityFeatures, TaskSpec};
use lcaffect_core::numerics::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

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
            let scores: Vec<f64> = (0..k.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
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
    let down =
        add_bias(&matmul(&act, &param(store, &format!("{prefix}.ffn.down.weight"))), &param(store, &format!("{prefix}.ffn.down.bias")));
    add(&x, &down)
}

fn mean(x: &Mat) -> Vec<f64> {
    (0..x[0].len()).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / x.len() as f64).collect()
}

fn oracle_z(store: &ParamStore<f64>, f: [&Mat; 3], heads: usize) -> (Vec<Mat>, Vec<f64>) {
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

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
}

fn build(d: usize, heads: usize, seed: u64) -> FusionModel<f64> {
    let cfg = FusionConfig { d_model: d, heads, head_hidden: 8, ..FusionConfig::default() };
    let dims = InputDims { text_vocab: 4, acoustic_dim: 2, visual_dim: 2, lc_dim: None };
    FusionModel::new(&cfg, &TaskSpec::regression(-1.0, 1.0), dims, seed).unwrap()
}

#[test]
fn fusion_matches_loop_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..50 {
        let heads = [1, 2, 4][case % 3];
        let d = heads * rng.gen_range(1..=4);
        let (lt, la, lv) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..7));
        let model = build(d, heads, case as u64);
        let (ft, fa, fv) = (random(&mut rng, lt, d), random(&mut rng, la, d), random(&mut rng, lv, d));
        let feats = ModalityFeatures {
            f_t: Tensor::from_rows(&ft).unwrap(),
            f_a: Tensor::from_rows(&fa).unwrap(),
            f_v: Tensor::from_rows(&fv).unwrap(),
        };
        let got = model.cross_modality_fuse(&feats).unwrap();
        let (zs, z) = oracle_z(&model.store, [&ft, &fa, &fv], heads);
        assert_eq!(got.z.len(), 3 * d);
        for (a, b) in got.z.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
        }
        for (tensor, want) in [&got.z_t, &got.z_a, &got.z_v].into_iter().zip(&zs) {
            assert!(tensor.max_abs_diff(&Tensor::from_rows(want).unwrap()) < 1e-12, "case {case}");
        }
    }
}

fn swap_roles(model: &mut FusionModel<f64>, x: &str, y: &str) {
    let names: Vec<String> = model.store.iter().map(|(_, n, _)| n.to_string()).collect();
    for name in names {
        for kind in ["cross", "self"] {
            let from = format!("fusion.{kind}_{x}.");
            if let Some(rest) = name.strip_prefix(&from) {
                let other = format!("fusion.{kind}_{y}.{rest}");
                let (i, j) = (model.store.id(&name).unwrap(), model.store.id(&other).unwrap());
                let (a, b) = (model.store.get(i).clone(), model.store.get(j).clone());
                *model.store.get_mut(i) = b;
                *model.store.get_mut(j) = a;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn swapping_modalities_permutes_thirds(seed in any::<u64>(), pair in 0usize..3, lt in 1usize..5, la in 1usize..5, lv in 1usize..5) {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = build(d, 2, seed);
        let f = [random(&mut rng, lt, d), random(&mut rng, la, d), random(&mut rng, lv, d)];
        let to_feats = |f: &[Mat; 3]| ModalityFeatures {
            f_t: Tensor::from_rows(&f[0]).unwrap(),
            f_a: Tensor::from_rows(&f[1]).unwrap(),
            f_v: Tensor::from_rows(&f[2]).unwrap(),
        };
        let base = model.cross_modality_fuse(&to_feats(&f)).unwrap().z;
        let (x, y) = [(0, 1), (1, 2), (0, 2)][pair];
        let names = ["t", "a", "v"];
        swap_roles(&mut model, names[x], names[y]);
        let mut g = f.clone();
        g.swap(x, y);
        let swapped = model.cross_modality_fuse(&to_feats(&g)).unwrap().z;
        let mut perm = [0, 1, 2];
        perm.swap(x, y);
        for (third, &src) in perm.iter().enumerate() {
            for c in 0..d {
                prop_assert!((swapped[third * d + c] - base[src * d + c]).abs() < 1e-12);
            }
        }
    }
}
