//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use onsetnet::config::RunConfig;
use onsetnet::dataset::{generate_synthetic, load_annotations, make_splits, read_manifest, roi_indices, Dataset, SplitPlan, WindowExtractor};
use onsetnet::evaluation::{
    evaluate_scorer, informed_random_baseline, read_predictions, render_report, score_predictions, write_predictions,
    ModelScorer,
};
use onsetnet::model::gradcheck::{gradcheck_suite, GradCheckScope, GRADCHECK_TOLERANCE};
use onsetnet::model::load_checkpoint;
use onsetnet::rng::derive_seed;
use onsetnet::training::{fit, EpochRecord, FitOutputs};

use crate::error::{CliError, CliResult};
use crate::run_manifest::{dataset_digest, file_digest, RunManifest};

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require_manifest(cfg: &RunConfig) -> CliResult<&Path> {
    let p = cfg.manifest.as_path();
    if p.as_os_str().is_empty() {
        return Err(CliError::Config("no dataset manifest: pass --data or set data.manifest".into()));
    }
    if !p.is_file() {
        return Err(CliError::Config(format!("dataset manifest {} does not exist", p.display())));
    }
    Ok(p)
}

fn open_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let mut ds = load_annotations(require_manifest(cfg)?)?;
    ds.set_cache_limit((cfg.cache_videos > 0).then_some(cfg.cache_videos));
    Ok(ds)
}

fn split_plan(cfg: &RunConfig, subjects: &[String]) -> CliResult<SplitPlan> {
    Ok(make_splits(subjects)?.swap_remove(cfg.split))
}

/// The given subject, else the configured split's test subject.
fn pick_subject(cfg: &RunConfig, dataset: &Dataset, subject: Option<String>) -> CliResult<String> {
    match subject {
        Some(s) => {
            dataset.subject(&s)?;
            Ok(s)
        }
        None => Ok(split_plan(cfg, &dataset.subject_ids())?.test),
    }
}

/// Runs `body` between writing the manifest as `running` and rewriting it
/// with the final status.
fn with_manifest<T>(mut manifest: RunManifest, cfg: &RunConfig, body: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    manifest.write(&cfg.out_dir, cfg)?;
    let result = body();
    manifest.finish(result.is_ok());
    manifest.write(&cfg.out_dir, cfg)?;
    result
}

pub fn synth(cfg: &RunConfig, argv: Vec<String>) -> CliResult<()> {
    let summary = generate_synthetic(&cfg.synth, cfg.seed, &cfg.out_dir)?;
    let digest = dataset_digest(&summary.manifest_path)?;
    let mut manifest = RunManifest::new("synth", argv, cfg);
    manifest.add_input("generated dataset", &summary.manifest_path, digest.clone());
    manifest.finish(true);
    manifest.write(&cfg.out_dir, cfg)?;

    let frames = summary.videos * cfg.synth.duration_frames();
    println!("subjects: {}", cfg.synth.subjects);
    println!("videos: {}", summary.videos);
    println!("frames: {frames}");
    println!("onsets: {}", summary.onsets);
    if summary.onsets > 0 {
        println!(
            "onset density: {:.4} per frame (one every {:.1} frames)",
            summary.onsets as f64 / frames as f64,
            frames as f64 / summary.onsets as f64
        );
    }
    println!("dataset sha256: {digest}");
    println!("manifest: {}", summary.manifest_path.display());
    Ok(())
}

fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_P {:.3}  val_R {:.3}  val_F {:.3}",
        r.epoch, r.train_loss, r.val_loss, r.val_precision, r.val_recall, r.val_f
    )
}

pub fn train(cfg: &RunConfig, argv: Vec<String>) -> CliResult<()> {
    let dataset = open_dataset(cfg)?;
    let split = split_plan(cfg, &dataset.subject_ids())?;
    let mut manifest = RunManifest::new("train", argv, cfg);
    manifest.add_input("dataset", &cfg.manifest, dataset_digest(&cfg.manifest)?);
    println!(
        "split {}: train {}, validation {}, test {} (held out)",
        split.split_id,
        split.train.join(" "),
        split.validation,
        split.test
    );
    let out = cfg.out_dir.clone();
    with_manifest(manifest, cfg, || {
        let outputs = FitOutputs {
            checkpoint_dir: Some(out.clone()),
            history_path: Some(out.join("history.csv")),
        };
        let started = Instant::now();
        let result = fit(&dataset, &split, &cfg.model, &cfg.train, &outputs, &mut |r| {
            println!("{}", epoch_line(r))
        })?;
        println!(
            "best epoch {} (val_F {:.3}) saved to {} in {:.1} s",
            result.best_epoch,
            result.best_val_f,
            out.join("best.ckpt").display(),
            started.elapsed().as_secs_f64()
        );
        Ok(())
    })
}

pub fn eval(
    cfg: &RunConfig,
    argv: Vec<String>,
    checkpoint: Option<PathBuf>,
    subject: Option<String>,
    reference: bool,
    predictions: Option<PathBuf>,
) -> CliResult<()> {
    let dataset = open_dataset(cfg)?;
    let subject = pick_subject(cfg, &dataset, subject)?;
    let mut manifest = RunManifest::new("eval", argv, cfg);
    manifest.add_input("dataset", &cfg.manifest, dataset_digest(&cfg.manifest)?);
    let t = &cfg.train;
    let out = cfg.out_dir.clone();
    let report = match predictions {
        Some(path) => {
            manifest.add_input("predictions", &path, file_digest(&path)?);
            with_manifest(manifest, cfg, || {
                let preds = read_predictions(&path)?;
                let method = format!("predictions {}", path.file_name().unwrap_or_default().to_string_lossy());
                Ok(score_predictions(&dataset, &subject, &preds, &method, t.tolerance_sec, t.averaging)?)
            })?
        }
        None => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join("best.ckpt"));
            manifest.add_input("checkpoint", &ckpt, file_digest(&ckpt)?);
            with_manifest(manifest, cfg, || {
                let (model, meta) = load_checkpoint(&ckpt)?;
                eprintln!("checkpoint {} (epoch {}, val_F {:.3})", ckpt.display(), meta.epoch, meta.val_f);
                let mc = model.config();
                let extractor = WindowExtractor::new(mc.roi_pixels, t.crop_margin)?;
                let scorer = ModelScorer {
                    model: &model,
                    extractor: &extractor,
                    rois: roi_indices(&mc.roi_names)?,
                    batch_size: t.eval_batch_size,
                };
                let (report, preds) = evaluate_scorer(&scorer, &dataset, &subject, "visual 3D CNN", t.decode, t.tolerance_sec, t.averaging)?;
                write_predictions(&out.join("predictions.csv"), &preds)?;
                Ok(report)
            })?
        }
    };
    let rendered = render_report(&[report], reference);
    write(&out.join("report.txt"), &rendered.text)?;
    write(&out.join("report.csv"), &rendered.csv)?;
    print!("{}", rendered.text);
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Mean over the subject's videos of the per-video baseline f-score.
fn subject_baseline(dataset: &Dataset, videos: &[usize], trials: usize, seed: u64, tol: f64) -> CliResult<Vec<f64>> {
    videos
        .iter()
        .map(|&v| {
            let a = &dataset.video(v).annotations;
            let video_seed = derive_seed(seed, "baseline-video", &[v as u64]);
            Ok(informed_random_baseline(&a.onsets, a.duration_sec(), trials, video_seed, tol)?)
        })
        .collect()
}

pub fn baseline(cfg: &RunConfig, argv: Vec<String>, subject: Option<String>) -> CliResult<()> {
    let dataset = open_dataset(cfg)?;
    let subject = pick_subject(cfg, &dataset, subject)?;
    let mut manifest = RunManifest::new("baseline", argv, cfg);
    manifest.add_input("dataset", &cfg.manifest, dataset_digest(&cfg.manifest)?);
    let videos = dataset.subject(&subject)?.videos.clone();
    let trials = cfg.baseline_trials;
    let tol = cfg.train.tolerance_sec;
    let out = cfg.out_dir.clone();
    with_manifest(manifest, cfg, || {
        let scores = subject_baseline(&dataset, &videos, trials, cfg.seed, tol)?;
        let mut csv = String::from("video_id,onsets,duration_sec,trials,f\n");
        println!("informed random baseline, subject {subject}, {trials} trials, {:.0} ms tolerance", tol * 1000.0);
        for (&v, f) in videos.iter().zip(&scores) {
            let video = dataset.video(v);
            let a = &video.annotations;
            writeln!(csv, "{},{},{},{trials},{f}", video.video_id, a.onsets.len(), a.duration_sec()).unwrap();
            println!("  {:<20} onsets {:>5}  f {:.4}", video.video_id, a.onsets.len(), f);
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        println!("mean f: {mean:.4}");
        write(&out.join("baseline.csv"), &csv)?;

        // Monte-Carlo spread: the same estimate under 8 seeds with one trial
        // versus the configured number of trials.
        let spread = |n: usize| -> CliResult<(f64, f64)> {
            let means: Vec<f64> = (0..8u64)
                .map(|i| {
                    let s = subject_baseline(&dataset, &videos, n, derive_seed(cfg.seed, "baseline-spread", &[i]), tol)?;
                    Ok(s.iter().sum::<f64>() / s.len().max(1) as f64)
                })
                .collect::<CliResult<_>>()?;
            Ok(mean_std(&means))
        };
        let (m1, s1) = spread(1)?;
        let (mn, sn) = spread(trials)?;
        println!("seed spread over 8 seeds: 1 trial mean {m1:.4} std {s1:.4}; {trials} trials mean {mn:.4} std {sn:.4}");
        Ok(())
    })
}

pub fn gradcheck(cfg: &RunConfig, scope: &str, inject_fault: Option<&str>) -> CliResult<()> {
    let scope = GradCheckScope::parse(scope)?;
    let mut cases = gradcheck_suite(scope, cfg.seed)?;
    if let Some(op) = inject_fault {
        let i = cases.iter().position(|c| c.name() == op).ok_or_else(|| {
            let names: Vec<&str> = cases.iter().map(|c| c.name()).collect();
            CliError::Config(format!("unknown op {op:?}; available: {}", names.join(", ")))
        })?;
        let case = cases.remove(i).corrupt();
        cases.insert(i, case);
    }
    let started = Instant::now();
    let mut failed = Vec::new();
    for case in &cases {
        let r = case.run(cfg.seed)?;
        let ok = r.max_relative_error < GRADCHECK_TOLERANCE;
        println!(
            "{:<20} max_rel_err {:.3e}  checked {:>5}  {}",
            case.name(),
            r.max_relative_error,
            r.checked,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(case.name().to_string());
        }
    }
    println!(
        "{} of {} checks below {GRADCHECK_TOLERANCE:e} in {:.1} s",
        cases.len() - failed.len(),
        cases.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

pub fn splits(cfg: &RunConfig) -> CliResult<()> {
    let manifest = read_manifest(require_manifest(cfg)?)?;
    let ids: Vec<String> = manifest.subjects.iter().map(|s| s.id.clone()).collect();
    for p in make_splits(&ids)? {
        println!(
            "split {}: test {}, validation {}, train {}",
            p.split_id,
            p.test,
            p.validation,
            p.train.join(" ")
        );
    }
    Ok(())
}
