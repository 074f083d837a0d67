use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use lcaffect_core::corpus::{
    corpus_stats, load_corpus, prepare_segments, read_lcaf, split_validation, write_lcaf, FrameFeatures,
};
use lcaffect_core::eval::MetricReport;
use lcaffect_core::fusion::{
    attach_lc_features, finetune as run_finetune, fusion_gradcheck, prepare_dataset, DownstreamDataset, FusionConfig,
    GradCheckTask, LabelValue, PredictionRecord,
};
use lcaffect_core::numerics::{Checkpoint, Real, Tensor};
use lcaffect_core::synthgen::{gen_downstream, gen_pretrain_corpus, generator_report, SynthWorld};
use lcaffect_core::v2lc::{extract_lc_features, pretrain as run_pretrain, v2lc_gradcheck, Utterance, V2LCArtifact, V2LCConfig, V2LCModel};
use serde::Serialize;
use serde_json::json;

use crate::config::{NoiseProfile, Precision, RunConfig};
use crate::error::CliError;
use crate::Common;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_EPS: f64 = 1e-5;

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(common.config.as_deref())?.resolve(common.seed, common.precision))
}

fn emit(value: &impl Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string(value).map_err(CliError::data)?);
    Ok(())
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn json_lines<'a, S: Serialize + 'a>(items: impl IntoIterator<Item = &'a S>) -> Result<String, CliError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(CliError::data)?);
        out.push('\n');
    }
    Ok(out)
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn stats(manifest: &Path, common: &Common) -> Result<ExitCode, CliError> {
    load_config(common)?;
    let corpus = load_corpus(manifest)?;
    if corpus.skipped_comments > 0 {
        eprintln!("lcaffect: skipped {} malformed danmaku entries", corpus.skipped_comments);
    }
    let report = corpus_stats(&corpus);
    println!("{}", serde_json::to_string_pretty(&report).map_err(CliError::data)?);
    Ok(ExitCode::SUCCESS)
}

pub fn gen_synth(out: &Path, report: bool, common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    let synth = &cfg.synth;
    let world = SynthWorld::new(&synth.world, synth.seed)?;
    let manifest = gen_pretrain_corpus(&world, &cfg.corpus, &out.join("pretrain"), synth.videos, synth.corpus_seed())?;
    let noise = match synth.profile {
        NoiseProfile::Clean => &synth.world.clean,
        NoiseProfile::Degraded => &synth.world.degraded,
    };
    let dataset = gen_downstream(&world, synth.downstream_samples, synth.task, noise, synth.downstream_seed())?;
    let data = dataset.write(out, "downstream")?;
    emit(&json!({ "manifest": manifest, "downstream": data, "videos": synth.videos, "samples": dataset.samples.len() }))?;
    if report {
        let r = generator_report(&world, synth.downstream_samples, synth.task, synth.downstream_seed())?;
        emit(&json!({ "generator_report": r, "passes": r.passes() }))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn pretrain(manifest: &Path, out: &Path, common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    match cfg.precision {
        Precision::F32 => pretrain_as::<f32>(&cfg, manifest, out),
        Precision::F64 => pretrain_as::<f64>(&cfg, manifest, out),
    }
}

fn pretrain_as<T: Real>(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<ExitCode, CliError> {
    cfg.corpus.validate()?;
    cfg.v2lc.validate()?;
    let corpus = load_corpus(manifest)?;
    let segments = prepare_segments(&corpus, &cfg.corpus)?;
    let (train, validation) = split_validation(segments, &cfg.corpus)?;
    let trained = run_pretrain::<T>(&train, &validation, &cfg.v2lc)?;
    create_dir(out)?;
    let ckpt = out.join("v2lc.ckpt");
    trained.model.to_checkpoint().save(&ckpt)?;
    V2LCArtifact::describe(&trained.model, &trained.encoder, &trained.vocab).save(&sidecar_path(&ckpt))?;
    write_file(&out.join("loss.jsonl"), json_lines(&trained.log.steps)?)?;
    for e in &trained.log.epochs {
        emit(e)?;
    }
    emit(&json!({
        "checkpoint": ckpt,
        "train_segments": train.len(),
        "validation_segments": validation.len(),
        "tau": trained.model.tau(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn load_v2lc<T: Real>(checkpoint: &Path) -> Result<(V2LCModel<T>, V2LCArtifact), CliError> {
    let artifact = V2LCArtifact::load(&sidecar_path(checkpoint))?;
    let model = artifact.restore::<T>(&Checkpoint::load(checkpoint)?)?;
    Ok((model, artifact))
}

pub fn extract(checkpoint: &Path, data: &Path, out: &Path, common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    match cfg.precision {
        Precision::F32 => extract_as::<f32>(checkpoint, data, out),
        Precision::F64 => extract_as::<f64>(checkpoint, data, out),
    }
}

fn extract_as<T: Real>(checkpoint: &Path, data: &Path, out: &Path) -> Result<ExitCode, CliError> {
    let (model, artifact) = load_v2lc::<T>(checkpoint)?;
    let dataset = DownstreamDataset::load(data)?;
    create_dir(out)?;
    let fps_milli = (1000.0 / model.config.sigma_s).round() as u32;
    let mut windows = 0;
    for s in &dataset.samples {
        let media = s.media.as_ref().ok_or_else(|| CliError::Data(format!("sample `{}` has no media block", s.id)))?;
        let utterance = Utterance { transcript: media.transcript.clone(), frames: media.frames.clone() };
        let lc = extract_lc_features(&model, &artifact.vocab, &utterance)?;
        windows += lc.rows();
        let frames = FrameFeatures {
            n_frames: lc.rows(),
            dim: lc.cols(),
            fps_milli,
            data: lc.data().iter().map(|v| v.as_f64() as f32).collect(),
        };
        write_lcaf(&out.join(format!("{}.lcaf", s.id)), &frames)?;
    }
    emit(&json!({ "samples": dataset.samples.len(), "windows": windows, "dim": model.config.d_model, "out": out }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn finetune(
    data: &Path,
    lc_dir: Option<&Path>,
    checkpoint: Option<&Path>,
    no_lc: bool,
    out: &Path,
    common: &Common,
) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    let mut fusion = cfg.fusion.clone();
    if no_lc {
        fusion.use_lc = false;
    }
    fusion.validate()?;
    match cfg.precision {
        Precision::F32 => finetune_as::<f32>(&cfg, &fusion, data, lc_dir, checkpoint, out),
        Precision::F64 => finetune_as::<f64>(&cfg, &fusion, data, lc_dir, checkpoint, out),
    }
}

fn finetune_as<T: Real>(
    cfg: &RunConfig,
    fusion: &FusionConfig,
    data: &Path,
    lc_dir: Option<&Path>,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<ExitCode, CliError> {
    let dataset = DownstreamDataset::load(data)?;
    let task = match &cfg.task {
        Some(t) => t.clone(),
        None => dataset.infer_task()?,
    };
    let mut prepared = prepare_dataset::<T>(&dataset, &task, fusion)?;
    if fusion.use_lc {
        match (lc_dir, checkpoint) {
            (Some(dir), _) => {
                let mut dim = None;
                for s in &mut prepared.samples {
                    let f = read_lcaf(&dir.join(format!("{}.lcaf", s.id)))?;
                    if *dim.get_or_insert(f.dim) != f.dim {
                        return Err(CliError::Data(format!("LC features of `{}` have width {}", s.id, f.dim)));
                    }
                    s.lc = Some(Tensor::new(f.n_frames, f.dim, f.data.iter().map(|&v| T::of(v as f64)).collect())?);
                }
                prepared.dims.lc_dim = dim;
            }
            (None, Some(ckpt)) => {
                let (model, artifact) = load_v2lc::<T>(ckpt)?;
                attach_lc_features(&mut prepared, &dataset, &model, &artifact.vocab)?;
            }
            (None, None) => {
                return Err(CliError::Config("the LC branch needs --lc-dir or --checkpoint; pass --no-lc to train without it".into()))
            }
        }
    }
    let tuned = run_finetune(&prepared, fusion)?;
    create_dir(out)?;
    tuned.model.to_checkpoint().save(&out.join("fusion.ckpt"))?;
    let metrics = json!({
        "task": task,
        "use_lc": tuned.model.uses_lc(),
        "best_epoch": tuned.best_epoch,
        "validation": tuned.validation,
        "history": tuned.history,
    });
    write_file(&out.join("metrics.json"), serde_json::to_string_pretty(&metrics).map_err(CliError::data)? + "\n")?;
    write_file(&out.join("predictions.jsonl"), json_lines(&tuned.predictions)?)?;
    for h in &tuned.history {
        emit(h)?;
    }
    emit(&json!({ "best_epoch": tuned.best_epoch, "validation": tuned.validation }))?;
    Ok(ExitCode::SUCCESS)
}

/// Regression when every label is numeric, classification over the sorted
/// union of class names otherwise.
pub fn score_predictions(records: &[PredictionRecord], cfg: &RunConfig) -> Result<MetricReport, CliError> {
    if records.is_empty() {
        return Err(CliError::Data("no predictions".into()));
    }
    let numeric: Option<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| match (&r.prediction, &r.label) {
            (LabelValue::Number(p), LabelValue::Number(l)) => Some((*p, *l)),
            _ => None,
        })
        .collect();
    if let Some(pairs) = numeric {
        let (p, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        return Ok(MetricReport::regression(&p, &l, cfg.fusion.acc2_mode)?);
    }
    let name = |v: &LabelValue| match v {
        LabelValue::Class(c) => c.clone(),
        LabelValue::Number(x) => x.to_string(),
    };
    let classes: Vec<String> =
        records.iter().flat_map(|r| [name(&r.prediction), name(&r.label)]).collect::<BTreeSet<_>>().into_iter().collect();
    let index = |v: &LabelValue| classes.binary_search(&name(v)).unwrap_or(0);
    let p: Vec<usize> = records.iter().map(|r| index(&r.prediction)).collect();
    let l: Vec<usize> = records.iter().map(|r| index(&r.label)).collect();
    Ok(MetricReport::classification(&p, &l)?)
}

pub fn eval(data: &Path, out: Option<&Path>, common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    let text = fs::read_to_string(data).map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{} line {}: {e}", data.display(), i + 1))))
        .collect::<Result<Vec<PredictionRecord>, _>>()?;
    let report = score_predictions(&records, &cfg)?;
    for (name, value) in report.percent_rows() {
        println!("{name:<20} {value:.2}");
    }
    if let Some(path) = out {
        write_file(path, serde_json::to_string_pretty(&report).map_err(CliError::data)? + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    let (v2lc, fusion) = if common.config.is_some() {
        (cfg.v2lc.clone(), cfg.fusion.clone())
    } else {
        (V2LCConfig::tiny(), FusionConfig::tiny())
    };
    let seed = cfg.seed.unwrap_or(0);
    let reports = [
        ("v2lc_contrastive", v2lc_gradcheck(&v2lc, seed)?),
        ("fusion_lc_regression", fusion_gradcheck(&fusion, GradCheckTask::RegressionWithLc, seed, GRADCHECK_EPS)?),
        ("fusion_classification", fusion_gradcheck(&fusion, GradCheckTask::Classification, seed, GRADCHECK_EPS)?),
    ];
    let mut ok = true;
    for (name, r) in &reports {
        let pass = r.max_rel_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        emit(&json!({
            "composite": name,
            "max_rel_error": r.max_rel_error,
            "worst_param": r.worst_param,
            "checked": r.checked,
            "pass": pass,
        }))?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
