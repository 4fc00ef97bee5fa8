//! Parallel versus sequential execution of the hot paths. The sequential
//! variant switches the runtime flag off; with the `parallel` feature
//! disabled both variants run the same plain loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use onsetnet::dataset::BATCH_SIZE;
use onsetnet::evaluation::informed_random_baseline;
use onsetnet::model::{Model, ModelConfig, StreamBatch};
use onsetnet::nn::{conv3d, conv3d_backward, ConvSpec, LossSpec};
use onsetnet::parallel;
use onsetnet::rng::substream;
use onsetnet::training::{train_step, RmsProp, StepParams};
use onsetnet::Tensor;

fn both(c: &mut Criterion, group: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for (label, on) in [("parallel", true), ("sequential", false)] {
        parallel::set_enabled(on);
        g.bench_function(label, |b| b.iter(&mut f));
    }
    parallel::set_enabled(true);
    g.finish();
}

fn conv_kernels(c: &mut Criterion) {
    let mut rng = substream(0, "bench", &[]);
    let x: Tensor<f32> = Tensor::randn(&[BATCH_SIZE, 16, 7, 16, 16], 1.0, &mut rng);
    let w: Tensor<f32> = Tensor::randn(&[32, 16, 3, 3, 3], 0.1, &mut rng);
    let spec = ConvSpec::new(32, (3, 3, 3), (1, 1)).unwrap();
    let y = conv3d(&x, &w, &spec).unwrap();
    both(c, "conv3d_forward", || {
        black_box(conv3d(&x, &w, &spec).unwrap());
    });
    both(c, "conv3d_backward", || {
        black_box(conv3d_backward(&x, &w, &spec, &y, true).unwrap());
    });
}

fn model_step(c: &mut Criterion) {
    let cfg = ModelConfig {
        roi_pixels: (16, 16),
        conv_channels: vec![4, 8, 8, 8, 8],
        fc1_width: 32,
        fc2_width: 64,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::build(&cfg, &mut substream(0, "init", &[])).unwrap();
    let mut rng = substream(0, "batch", &[]);
    let shape = [BATCH_SIZE, 3, 9, 16, 16];
    let batch = StreamBatch::new((0..cfg.num_streams()).map(|_| Tensor::uniform(&shape, 0.0, 1.0, &mut rng)).collect()).unwrap();
    let targets = Tensor::from_fn(&[BATCH_SIZE, 2], |i| ((i / 2) % 2 == i % 2) as u8 as f32);
    let params = StepParams {
        loss: LossSpec::default(),
        l2_lambda: 1e-4,
        lr: 1e-3,
        grad_clip: None,
    };
    both(c, "train_step", || {
        let mut m = model.clone();
        let mut opt = RmsProp::new(&m.parameters(), 0.9, 1e-8).unwrap();
        black_box(train_step(&mut m, &batch, &targets, &mut opt, &params, &mut substream(0, "dropout", &[])).unwrap());
    });
}

fn baseline(c: &mut Criterion) {
    let truth: Vec<f64> = (0..120).map(|i| 0.25 + i as f64 * 0.5).collect();
    both(c, "informed_random_baseline", || {
        black_box(informed_random_baseline(&truth, 60.0, 1000, 0, 0.05).unwrap());
    });
}

criterion_group!(benches, conv_kernels, model_step, baseline);
criterion_main!(benches);
