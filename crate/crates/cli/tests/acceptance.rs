//! End-to-end acceptance criteria. Each test prints one verdict line to
//! stderr, bypassing output capture, and tests run one at a time so the
//! measured runtimes are not inflated by each other.

mod common;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lcaffect_core::corpus::{
    drop_sparse_segments, frame_times, load_corpus, prepare_segments, sample_epoch, segment_video, split_validation,
    trim_and_filter, Category, CorpusConfig, FrameFeatures, LiveComment, Segment, VideoRecord,
};
use lcaffect_core::eval::{acc2, acc2_weak, acc7, regression_stats, weighted_prf, Acc2Mode, EvalError, WEAK_BAND};
use lcaffect_core::fusion::{
    attach_lc_features, finetune, fusion_gradcheck, prepare_dataset, FusionConfig, FusionModel, GradCheckTask, InputDims,
    ModalityFeatures, TaskSpec,
};
use lcaffect_core::numerics::Tensor;
use lcaffect_core::seed;
use lcaffect_core::synthgen::{gen_downstream, gen_pretrain_corpus, SynthConfig, SynthTask, SynthWorld};
use lcaffect_core::v2lc::{
    build_targets, contrastive_loss_value, evaluate_retrieval, initialize, pretrain, v2lc_gradcheck, PreparedSegments,
    Pretrained, RunSeeds, TargetMatrix, V2LCConfig,
};
use rand::Rng;

use common::Mat;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {id} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

#[test]
fn criterion_1_target_matrix_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut mismatches = 0;
    let mut expanded = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let k_per = rng.gen_range(1..=40 / n).min(5);
        let d = rng.gen_range(2..=6);
        let theta = [0.5, 0.9, 0.99][case % 3];
        let mut c = common::unit_rows(&mut rng, n * k_per, d);
        for _ in 0..rng.gen_range(0..3) {
            let (a, b) = (rng.gen_range(0..c.len()), rng.gen_range(0..c.len()));
            c[a] = c[b].clone();
        }
        let own: Vec<Vec<usize>> = (0..n).map(|i| (i * k_per..(i + 1) * k_per).collect()).collect();
        let got = build_targets(&own, &Tensor::from_rows(&c).unwrap(), theta).unwrap();
        let want = common::brute_force_targets(&own, &c, theta);
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                mismatches += usize::from(got.get(i, j) != w);
                expanded += usize::from(w && !own[i].contains(&j));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "target matrix oracle",
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("200 batches, {mismatches} mismatched cells, {expanded} expanded positives, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_loss_reduction_identity() {
    let _guard = serial();
    let mut rng = seed::rng(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(n..=3 * n);
        let d = rng.gen_range(2..=16);
        let tau = rng.gen_range(0.5..30.0);
        let s = common::unit_rows(&mut rng, n, d);
        let c = common::unit_rows(&mut rng, k, d);
        let positive: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let own: Vec<Vec<usize>> = positive.iter().map(|&p| vec![p]).collect();
        let targets = TargetMatrix::from_ownership(&own, k).unwrap();
        let got =
            contrastive_loss_value(&Tensor::from_rows(&s).unwrap(), &Tensor::from_rows(&c).unwrap(), &targets, tau).unwrap();
        worst = worst.max((got - common::single_positive_loss(&s, &c, &positive, tau)).abs());
    }
    let eye = Tensor::from_rows(&[vec![1.0f64, 0.0], vec![0.0, 1.0]]).unwrap();
    let hand = contrastive_loss_value(&eye, &eye, &TargetMatrix::from_ownership(&[vec![0], vec![1]], 2).unwrap(), 1.0).unwrap();
    let pass = worst < 1e-9 && (hand - 0.313262).abs() <= 1e-6;
    verdict(2, "loss reduction identity", pass, format!("max |diff| {worst:.2e} over 100 cases, hand case {hand:.6}"));
}

#[test]
fn criterion_3_gradient_correctness() {
    let _guard = serial();
    let start = Instant::now();
    let a = v2lc_gradcheck(&V2LCConfig::tiny(), 0).unwrap();
    let b = fusion_gradcheck(&FusionConfig::tiny(), GradCheckTask::RegressionWithLc, 0, 1e-5).unwrap();
    let c = fusion_gradcheck(&FusionConfig::tiny(), GradCheckTask::Classification, 0, 1e-5).unwrap();
    let elapsed = start.elapsed();
    let pass = [&a, &b, &c].iter().all(|r| r.max_rel_error < 1e-4) && elapsed < Duration::from_secs(120);
    verdict(
        3,
        "gradient correctness",
        pass,
        format!(
            "v2lc {:.2e}, fusion+lc mae {:.2e}, fusion ce {:.2e}, {elapsed:.2?}",
            a.max_rel_error, b.max_rel_error, c.max_rel_error
        ),
    );
}

#[test]
fn criterion_4_fusion_fidelity() {
    let _guard = serial();
    let mut rng = seed::rng(404);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let heads = [1, 2, 4][case % 3];
        let d = heads * rng.gen_range(1..=4);
        let cfg = FusionConfig { d_model: d, heads, head_hidden: 8, ..FusionConfig::default() };
        let dims = InputDims { text_vocab: 4, acoustic_dim: 2, visual_dim: 2, lc_dim: None };
        let model = FusionModel::<f64>::new(&cfg, &TaskSpec::regression(-1.0, 1.0), dims, case as u64).unwrap();
        let f: [Mat; 3] = [0, 1, 2].map(|_| {
            let len = rng.gen_range(1..8);
            common::random(&mut rng, len, d)
        });
        let feats = ModalityFeatures {
            f_t: Tensor::from_rows(&f[0]).unwrap(),
            f_a: Tensor::from_rows(&f[1]).unwrap(),
            f_v: Tensor::from_rows(&f[2]).unwrap(),
        };
        let got = model.cross_modality_fuse(&feats).unwrap();
        let (zs, z) = common::fusion_oracle(&model.store, [&f[0], &f[1], &f[2]], heads);
        for (a, b) in got.z.iter().zip(&z) {
            worst = worst.max((a - b).abs());
        }
        for (t, want) in [&got.z_t, &got.z_a, &got.z_v].into_iter().zip(&zs) {
            worst = worst.max(t.max_abs_diff(&Tensor::from_rows(want).unwrap()));
        }
        if got.z.len() != 3 * d {
            worst = f64::INFINITY;
        }
    }
    verdict(4, "cross-modality fusion fidelity", worst < 1e-12, format!("max |diff| {worst:.2e} over 50 shapes"));
}

struct Pretraining {
    world: SynthWorld,
    trained: Pretrained<f32>,
    segments: usize,
    untrained_r1: f64,
    trained_r1: f64,
    trained_r5: f64,
    elapsed: Duration,
}

static PRETRAINED: OnceLock<Pretraining> = OnceLock::new();

fn pretrained() -> &'static Pretraining {
    PRETRAINED.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let world = SynthWorld::new(&SynthConfig::default(), 0).unwrap();
        let corpus_cfg = CorpusConfig::default();
        let manifest = gen_pretrain_corpus(&world, &corpus_cfg, dir.path(), 32, 0).unwrap();
        let segments = prepare_segments(&load_corpus(&manifest).unwrap(), &corpus_cfg).unwrap();
        let count = segments.len();
        let (train, validation) = split_validation(segments, &corpus_cfg).unwrap();
        let cfg = V2LCConfig { d_model: 32, layers: 2, heads: 4, epochs: 30, ..V2LCConfig::default() };
        let probes = RunSeeds::from_base(cfg.seed).probes;

        let (untrained, encoder, vocab) = initialize::<f32>(&train, &cfg).unwrap();
        let val = PreparedSegments::new(&validation, &vocab, &encoder).unwrap();
        let before = evaluate_retrieval(&untrained, &val, cfg.eval_candidates, cfg.eval_probes, probes).unwrap();
        let trained = pretrain::<f32>(&train, &validation, &cfg).unwrap();
        let after = evaluate_retrieval(&trained.model, &val, cfg.eval_candidates, cfg.eval_probes, probes).unwrap();
        Pretraining {
            world,
            trained,
            segments: count,
            untrained_r1: before.recall_at_1,
            trained_r1: after.recall_at_1,
            trained_r5: after.recall_at_5,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_5_pretraining_smoke() {
    let _guard = serial();
    let p = pretrained();
    let chance: f64 = 1.0 / 64.0;
    let sigma = (chance * (1.0 - chance) / 500.0).sqrt();
    let baseline_ok = (p.untrained_r1 - chance).abs() <= 3.0 * sigma;
    let pass = p.segments == 256 && p.trained_r1 >= 0.25 && baseline_ok && p.elapsed <= Duration::from_secs(15 * 60);
    verdict(
        5,
        "pre-training smoke",
        pass,
        format!(
            "{} segments, recall@1 {:.3} (recall@5 {:.3}), untrained {:.3} vs chance {chance:.4} ± {:.4}, {:.2?}",
            p.segments,
            p.trained_r1,
            p.trained_r5,
            p.untrained_r1,
            3.0 * sigma,
            p.elapsed
        ),
    );
}

#[test]
fn criterion_6_downstream_synthetic() {
    let _guard = serial();
    let p = pretrained();
    let start = Instant::now();
    let world = &p.world;
    let base = FusionConfig { acc2_mode: Acc2Mode::NegVsPosExcludingZero, ..FusionConfig::default() };
    let vanilla = FusionConfig { use_lc: false, ..base.clone() };

    let clean = gen_downstream(world, 2000, SynthTask::Regression, &world.config.clean, 100).unwrap();
    let task = clean.infer_task().unwrap();
    let prepared = prepare_dataset::<f32>(&clean, &task, &vanilla).unwrap();
    let clean_acc = finetune(&prepared, &vanilla).unwrap().validation.acc2.unwrap();

    let mut gains = Vec::new();
    let mut arms = Vec::new();
    for s in 0..3u64 {
        let data = gen_downstream(world, 2000, SynthTask::Regression, &world.config.degraded, 200 + s).unwrap();
        let with_lc = FusionConfig { seed: s, ..base.clone() };
        let without = FusionConfig { seed: s, ..vanilla.clone() };
        let mut prepared = prepare_dataset::<f32>(&data, &task, &with_lc).unwrap();
        let v = finetune(&prepared, &without).unwrap().validation.acc2.unwrap();
        attach_lc_features(&mut prepared, &data, &p.trained.model, &p.trained.vocab).unwrap();
        let l = finetune(&prepared, &with_lc).unwrap().validation.acc2.unwrap();
        gains.push(l - v);
        arms.push(format!("{:.2}/{:.2}", 100.0 * v, 100.0 * l));
    }
    let gain = gains.iter().sum::<f64>() / 3.0;
    let elapsed = start.elapsed();
    let pass = clean_acc >= 0.90 && gain >= 0.05 && elapsed <= Duration::from_secs(600);
    verdict(
        6,
        "downstream synthetic",
        pass,
        format!(
            "clean vanilla Acc2 {:.2}, degraded vanilla/+LC per seed [{}], mean gain {:+.2} points, {elapsed:.2?}",
            100.0 * clean_acc,
            arms.join(", "),
            100.0 * gain
        ),
    );
}

#[test]
fn criterion_7_metric_suite() {
    let _guard = serial();
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, what: &'static str| {
        if !ok {
            failures.push(what);
        }
    };
    let l = [0.3, -1.2, 2.0, -0.1, 1.5];
    check(acc2(&l, &l, Acc2Mode::NegVsNonneg) == Ok(1.0), "acc2 identity nonneg");
    check(acc2(&l, &l, Acc2Mode::NegVsPosExcludingZero) == Ok(1.0), "acc2 identity excluding zero");
    check(acc2(&[0.5, -0.5], &[0.0, -0.7], Acc2Mode::NegVsPosExcludingZero) == Ok(1.0), "acc2 zero dropped");
    check(acc2(&[0.5, -0.5], &[0.0, -0.7], Acc2Mode::NegVsNonneg) == Ok(1.0), "acc2 zero non-negative");
    check(acc2_weak(&[0.1, 0.2], &[0.5, -0.9], WEAK_BAND) == Err(EvalError::EmptyAfterFiltering), "acc2_weak empty");
    check(acc2_weak(&[0.1, -0.3, 0.4], &[0.1, -0.3, 0.4], WEAK_BAND) == Ok(1.0), "acc2_weak identity");
    check(acc2_weak(&[0.1, 0.3, -1.0], &[0.2, -0.2, 0.8], WEAK_BAND) == Ok(0.5), "acc2_weak hand case");
    check(acc7(&[2.6], &[3.0]) == Ok(1.0), "acc7 rounding");
    check(acc7(&[-3.9], &[-3.0]) == Ok(1.0), "acc7 clamp");
    check(acc7(&[0.5], &[0.0]) == Ok(0.0), "acc7 half away from zero");
    check(acc7(&l, &l) == Ok(1.0), "acc7 identity");
    let perfect = weighted_prf(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
    check((perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0), "prf perfect");
    let single = weighted_prf(&[3, 3, 3], &[3, 3, 3]).unwrap();
    check((single.precision, single.recall, single.f1) == (1.0, 1.0, 1.0), "prf single class");
    let hand = weighted_prf(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap().f1;
    check((hand - 0.7333).abs() <= 1e-4, "prf hand case");
    let same = regression_stats(&l, &l).unwrap();
    check(same.pearson_corr == Some(1.0) && same.mae == 0.0 && same.r2 == 1.0, "regression identity");
    let neg: Vec<f64> = l.iter().map(|v| -v).collect();
    check(regression_stats(&neg, &l).unwrap().pearson_corr == Some(-1.0), "regression negated");
    let m = l.iter().sum::<f64>() / l.len() as f64;
    check(regression_stats(&[m; 5], &l).unwrap().r2 == 0.0, "regression constant mean");

    let mut rng = seed::rng(707);
    let mut oracle_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let k = rng.gen_range(1..=4);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let got = weighted_prf(&preds, &labels).unwrap();
        oracle_mismatch += usize::from((got.precision, got.recall, got.f1) != common::confusion_prf(&preds, &labels));
    }
    check(oracle_mismatch == 0, "prf oracle");
    verdict(
        7,
        "metric suite",
        failures.is_empty(),
        format!("hand weighted F1 {hand:.4}, {oracle_mismatch}/1000 oracle mismatches, failing: {failures:?}"),
    );
}

const PIPELINE_CONFIG: &str = r#"{
  "corpus": {"trim": {"user_generated_s": 5, "tv_show_s": 5, "movie_s": 5}},
  "v2lc": {"d_model": 16, "layers": 1, "heads": 2, "epochs": 2},
  "fusion": {"d_model": 8, "heads": 2, "head_hidden": 16, "epochs": 2},
  "synth": {"videos": 6, "downstream_samples": 120}
}"#;

fn lcaffect(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_lcaffect")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "lcaffect {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_pipeline(dir: &Path) {
    fs::write(dir.join("run.json"), PIPELINE_CONFIG).unwrap();
    let c = ["--config", "run.json", "--seed", "7"];
    let run = |args: &[&str]| lcaffect(&[args, &c[..]].concat(), dir);
    run(&["gen-synth", "--out", "synth"]);
    run(&["pretrain", "--manifest", "synth/pretrain/manifest.json", "--out", "v2lc"]);
    run(&["extract", "--checkpoint", "v2lc/v2lc.ckpt", "--data", "synth/downstream.jsonl", "--out", "lc"]);
    run(&["finetune", "--data", "synth/downstream.jsonl", "--lc-dir", "lc", "--out", "fusion"]);
}

fn tree(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_pipeline_determinism() {
    let _guard = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let files = tree(a.path());
    let differing: Vec<&PathBuf> =
        files.iter().filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok()).collect();
    let required = ["v2lc/v2lc.ckpt", "v2lc/loss.jsonl", "fusion/fusion.ckpt", "fusion/metrics.json", "fusion/predictions.jsonl"];
    let present = required.iter().all(|r| files.contains(&PathBuf::from(r)));
    let pass = present && differing.is_empty() && files == tree(b.path());
    verdict(
        8,
        "pipeline determinism",
        pass,
        format!("{} files compared, {} differ, checkpoints and metrics present: {present}", files.len(), differing.len()),
    );
}

fn comment(time_s: f64, text: &str) -> LiveComment {
    LiveComment { time_s, text: text.to_string(), mode: 1, color: 16_777_215, sender: "u".into() }
}

fn video(category: Category, duration_s: f64, comments: Vec<LiveComment>) -> VideoRecord {
    VideoRecord::new("v", category, duration_s, comments, vec![], PathBuf::from("v.lcaf"))
}

fn segment(index: usize, comments: usize) -> Segment {
    Segment {
        video_id: format!("vid{}", index / 10),
        index,
        start_s: 0.0,
        end_s: 8.0,
        transcript_text: String::new(),
        frame_features: vec![vec![0.0; 2]; 8],
        comments: (0..comments).map(|c| comment(c as f64, &format!("c{c}"))).collect(),
    }
}

#[test]
fn criterion_9_data_rules() {
    let _guard = serial();
    let cfg = CorpusConfig::default();
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, what: &'static str| {
        if !ok {
            failures.push(what);
        }
    };
    let times = |v: &VideoRecord| v.comments.iter().map(|c| c.time_s).collect::<Vec<_>>();

    let ug = video(Category::UserGenerated, 100.0, vec![comment(5.0, "ab"), comment(20.0, "ab"), comment(95.0, "ab")]);
    let trimmed = trim_and_filter(&ug, &cfg).unwrap().video;
    check(times(&trimmed) == [20.0] && trimmed.playable == (15.0, 85.0), "trim 15 s");
    let chars = video(Category::UserGenerated, 100.0, vec![comment(30.0, "好"), comment(31.0, "好看")]);
    let kept: Vec<String> = trim_and_filter(&chars, &cfg).unwrap().video.comments.into_iter().map(|c| c.text).collect();
    check(kept == ["好看"], "minimum 2 characters");
    let movie = trim_and_filter(&video(Category::Movie, 7200.0, vec![comment(200.0, "ab")]), &cfg).unwrap().video;
    check(movie.comments.is_empty() && movie.playable == (300.0, 6900.0), "trim 5 minutes");

    let frames = FrameFeatures { n_frames: 100, dim: 2, fps_milli: 1000, data: vec![0.0; 200] };
    let whole = segment_video(&video(Category::UserGenerated, 100.0, vec![]), &frames, &cfg).unwrap();
    let starts: Vec<f64> = whole.iter().map(|s| s.start_s).collect();
    check(starts == (0..12).map(|i| 8.0 * i as f64).collect::<Vec<_>>(), "untrimmed 12 windows");
    let segs = segment_video(&trimmed, &frames, &cfg).unwrap();
    let starts: Vec<f64> = segs.iter().map(|s| s.start_s).collect();
    check(starts == (0..8).map(|i| 15.0 + 8.0 * i as f64).collect::<Vec<_>>(), "trimmed 8 windows");
    let ft: Vec<f64> = frame_times(15.0, 8.0, 8).collect();
    check(ft == (0..8).map(|i| 15.5 + i as f64).collect::<Vec<_>>(), "midpoint frame times");

    let kept = drop_sparse_segments(vec![segment(0, 4), segment(1, 5)], &cfg);
    check(kept.len() == 1 && kept[0].comments.len() == 5, "drop below 5 comments");
    check(drop_sparse_segments(vec![], &cfg).is_empty(), "drop on empty input");

    let hundred: Vec<Segment> = (0..100).map(|i| segment(i, 5)).collect();
    let (train, val) = split_validation(hundred.clone(), &cfg).unwrap();
    check(train.len() == 90 && val.len() == 10, "10% split");
    check(split_validation(hundred, &cfg).unwrap() == (train, val), "split determinism");
    let (_, val) = split_validation((0..11).map(|i| segment(i, 5)).collect(), &cfg).unwrap();
    check(val.len() == 2, "ceil split");

    let pool: Vec<Segment> = (0..16).map(|i| segment(i, 5 + i % 5)).collect();
    let batches = sample_epoch(&pool, &cfg, 0, 8).unwrap();
    check(batches.len() == 2 && batches.iter().all(|b| b.n() == 8 && b.k() == 40), "K = 5N");
    let mut all_five = true;
    for epoch in 0..5 {
        for b in sample_epoch(&pool, &cfg, epoch, 8).unwrap() {
            for (row, &pos) in b.segments.iter().enumerate() {
                if pool[pos].comments.len() == 5 {
                    let picked: Vec<usize> = b.ownership[row].iter().map(|&col| b.comments[col].1).collect();
                    all_five &= picked == [0, 1, 2, 3, 4];
                }
            }
        }
    }
    check(all_five, "exactly 5 comments all selected");
    check(sample_epoch(&pool, &cfg, 3, 8).unwrap() == sample_epoch(&pool, &cfg, 3, 8).unwrap(), "sampling determinism");

    verdict(9, "data-rule conformance", failures.is_empty(), format!("failing: {failures:?}"));
}
