//! The rayon path and the sequential fallback must agree bitwise.

use std::path::Path;

use onsetnet::dataset::{generate_synthetic, load_annotations, make_splits, SynthSpec};
use onsetnet::evaluation::informed_random_trials;
use onsetnet::model::ModelConfig;
use onsetnet::parallel;
use onsetnet::training::{fit, history_csv, FitOutputs, TrainConfig};

fn run_all() -> (String, Vec<u8>, Vec<f64>) {
    let manifest = Path::new(env!("CARGO_TARGET_TMPDIR")).join("parallel-equivalence").join("manifest.json");
    let dataset = load_annotations(&manifest).unwrap();
    let split = make_splits(&dataset.subject_ids()).unwrap().remove(1);
    let model = ModelConfig {
        roi_names: vec!["mouth".into(), "right_hand".into()],
        roi_pixels: (8, 8),
        conv_channels: vec![2, 3, 3, 2, 2],
        fc1_width: 4,
        fc2_width: 4,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        max_epochs: 2,
        batches_per_epoch: Some(4),
        da_factor: 1,
        crop_margin: 2,
        max_jitter: 1.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let r = fit(&dataset, &split, &model, &cfg, &FitOutputs::default(), &mut |_| {}).unwrap();
    let weights = onsetnet::model::encode_checkpoint(&r.final_model, &Default::default());
    let truth: Vec<f64> = (0..30).map(|i| i as f64 * 0.4 + 0.1).collect();
    let trials = informed_random_trials(&truth, 12.0, 64, 5, 0.05).unwrap();
    (history_csv(&r.history), weights, trials)
}

#[test]
fn parallel_and_sequential_runs_are_identical() {
    parallel::configure_threads(4);
    let spec = SynthSpec {
        videos_per_subject: 1,
        duration_sec: 4.0,
        width: 40,
        height: 32,
        roi_size: 10.0,
        ..SynthSpec::default()
    };
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("parallel-equivalence");
    let _ = std::fs::remove_dir_all(&dir);
    generate_synthetic(&spec, 8, &dir).unwrap();

    parallel::set_enabled(true);
    let par = run_all();
    parallel::set_enabled(false);
    let seq = run_all();
    parallel::set_enabled(true);
    assert_eq!(par.0, seq.0);
    assert!(par.1 == seq.1, "final weights differ");
    assert_eq!(par.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), seq.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
