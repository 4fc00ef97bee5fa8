//! The composed model loss as a [`Differentiable`] op over all parameters.

use rand::Rng;

use super::{Model, ModelConfig, StreamBatch};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{
    grad_check, BatchNormOp, ConcatOp, Conv3dOp, Corrupted, Differentiable, DropoutOp, GradCheckReport, LinearOp,
    MaxPoolOp, ReluOp, SoftXentOp,
};
use crate::nn::{weighted_soft_xent, ConvSpec, LossSpec, Mode};
use crate::rng::{derive_seed, substream};
use crate::tensor::Tensor;

/// Train-mode loss of a fixed batch as a function of the model parameters.
/// Dropout masks come from `dropout_seed`, so repeated evaluations see the
/// same mask.
pub struct ModelLossOp {
    pub template: Model<f64>,
    pub batch: StreamBatch<f64>,
    pub targets: Tensor<f64>,
    pub loss: LossSpec,
    pub dropout_seed: u64,
}

impl ModelLossOp {
    pub fn parameters(&self) -> Vec<Tensor<f64>> {
        self.template.parameters().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn with_params(&self, params: &[Tensor<f64>]) -> Model<f64> {
        let mut m = self.template.clone();
        for (slot, p) in m.parameters_mut().into_iter().zip(params) {
            *slot = p.clone();
        }
        m
    }
}

impl Differentiable for ModelLossOp {
    fn name(&self) -> &str {
        "model_loss"
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut m = self.with_params(inputs);
        let mut rng = substream(self.dropout_seed, "dropout", &[]);
        let out = m.forward(&self.batch, Mode::Train, &mut rng)?;
        let (loss, _) = weighted_soft_xent(&out.logits, &self.targets, &self.loss)?;
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_output: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut m = self.with_params(inputs);
        let mut rng = substream(self.dropout_seed, "dropout", &[]);
        let (out, tape) = m.forward_with_tape(&self.batch, Mode::Train, &mut rng)?;
        let (_, g) = weighted_soft_xent(&out.logits, &self.targets, &self.loss)?;
        let s = grad_output.data()[0];
        m.backward(&tape, &g.map(|v| v * s))
    }
}

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const GRADCHECK_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckScope {
    Ops,
    Model,
    All,
}

impl GradCheckScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(GradCheckScope::Ops),
            "model" => Ok(GradCheckScope::Model),
            "all" => Ok(GradCheckScope::All),
            other => Err(Error::InvalidArgument(format!("unknown gradcheck scope {other:?} (ops, model, all)"))),
        }
    }
}

/// One op with its tiny double-precision inputs.
pub struct GradCheckCase {
    pub op: Box<dyn Differentiable>,
    pub inputs: Vec<Tensor<f64>>,
}

impl GradCheckCase {
    pub fn name(&self) -> &str {
        self.op.name()
    }

    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        grad_check(&self.op, &self.inputs, GRADCHECK_EPSILON, seed)
    }

    /// Replaces the backward pass with a slightly wrong one.
    pub fn corrupt(self) -> Self {
        GradCheckCase {
            op: Box::new(Corrupted {
                inner: self.op,
                scale: 1.01,
            }),
            inputs: self.inputs,
        }
    }
}

/// Magnitudes in [0.1, 2) with random sign, keeping clear of the relu kink.
fn away_from_zero<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..2.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Two small streams with every layer type, pooling after the first two
/// convolutions.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        roi_names: vec!["mouth".into(), "left_hand".into()],
        roi_pixels: (8, 8),
        channels_in: 2,
        conv_channels: vec![2, 3, 3, 2, 2],
        pool_after: vec![1, 2],
        fc1_width: 4,
        fc2_width: 5,
        dropout_rate: 0.3,
        ..ModelConfig::default()
    }
}

fn model_case(seed: u64) -> Result<GradCheckCase> {
    let cfg = gradcheck_model_config();
    let template = Model::<f64>::build(&cfg, &mut substream(seed, "gradcheck-init", &[]))?;
    let mut rng = substream(seed, "gradcheck-batch", &[]);
    let shape = [4, cfg.channels_in, cfg.input_frames, cfg.roi_pixels.0, cfg.roi_pixels.1];
    let batch = StreamBatch::new(
        (0..cfg.num_streams())
            .map(|_| Tensor::uniform(&shape, 0.0, 1.0, &mut rng))
            .collect(),
    )?;
    let targets = Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.75, 0.25, 1.0, 0.0])?;
    let op = ModelLossOp {
        template,
        batch,
        targets,
        loss: LossSpec::new(1.0, 3.0)?,
        dropout_seed: derive_seed(seed, "gradcheck-dropout", &[]),
    };
    let inputs = op.parameters();
    Ok(GradCheckCase { op: Box::new(op), inputs })
}

/// Every network op at tiny shapes, then the composed model loss.
pub fn gradcheck_suite(scope: GradCheckScope, seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut cases = Vec::new();
    if scope != GradCheckScope::Model {
        let mut rng = substream(seed, "gradcheck-inputs", &[]);
        let mut case = |op: Box<dyn Differentiable>, inputs: Vec<Tensor<f64>>| cases.push(GradCheckCase { op, inputs });
        case(
            Box::new(Conv3dOp(ConvSpec::new(3, (3, 3, 3), (1, 1))?)),
            vec![Tensor::randn(&[2, 2, 5, 4, 4], 1.0, &mut rng), Tensor::randn(&[3, 2, 3, 3, 3], 0.5, &mut rng)],
        );
        case(Box::new(MaxPoolOp((2, 2))), vec![Tensor::randn(&[2, 2, 3, 4, 4], 1.0, &mut rng)]);
        case(Box::new(ReluOp), vec![away_from_zero(&[3, 2, 3, 2, 2], &mut rng)]);
        case(
            Box::new(BatchNormOp { epsilon: 1e-5 }),
            vec![Tensor::randn(&[3, 2, 3, 2, 2], 1.0, &mut rng), Tensor::uniform(&[2], 0.5, 1.5, &mut rng)],
        );
        case(
            Box::new(DropoutOp {
                rate: 0.5,
                seed: derive_seed(seed, "gradcheck-dropout", &[]),
            }),
            vec![Tensor::randn(&[4, 6], 1.0, &mut rng)],
        );
        case(
            Box::new(LinearOp),
            vec![Tensor::randn(&[3, 5], 1.0, &mut rng), Tensor::randn(&[5, 4], 0.5, &mut rng)],
        );
        case(
            Box::new(ConcatOp),
            vec![
                Tensor::randn(&[3, 2], 1.0, &mut rng),
                Tensor::randn(&[3, 4], 1.0, &mut rng),
                Tensor::randn(&[3, 1], 1.0, &mut rng),
            ],
        );
        let targets = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.75, 0.25])?;
        case(
            Box::new(SoftXentOp {
                targets,
                spec: LossSpec::new(1.0, 3.0)?,
            }),
            vec![Tensor::randn(&[3, 2], 1.0, &mut rng)],
        );
    }
    if scope != GradCheckScope::Ops {
        cases.push(model_case(seed)?);
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::model::ModelConfig;
    use crate::nn::gradcheck::grad_check;

    #[test]
    fn composed_loss_matches_finite_differences() {
        let cfg = ModelConfig {
            dropout_rate: 0.3,
            ..tiny_config()
        };
        let template = Model::<f64>::build(&cfg, &mut substream(3, "init", &[])).unwrap();
        let mut rng = substream(3, "batch", &[]);
        let shape = [4, cfg.channels_in, cfg.input_frames, cfg.roi_pixels.0, cfg.roi_pixels.1];
        let batch = StreamBatch::new(vec![
            Tensor::uniform(&shape, 0.0, 1.0, &mut rng),
            Tensor::uniform(&shape, 0.0, 1.0, &mut rng),
        ])
        .unwrap();
        let targets = Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.75, 0.25, 1.0, 0.0]).unwrap();
        let op = ModelLossOp {
            template,
            batch,
            targets,
            loss: LossSpec::new(1.0, 3.0).unwrap(),
            dropout_seed: 5,
        };
        let params = op.parameters();
        let r = grad_check(&op, &params, 1e-6, 0).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn suite_passes_and_lists_each_op_once() {
        let cases = gradcheck_suite(GradCheckScope::All, 11).unwrap();
        let names: Vec<&str> = cases.iter().map(GradCheckCase::name).collect();
        assert_eq!(
            names,
            ["conv3d", "maxpool2d", "relu", "batchnorm", "dropout", "linear", "concat", "weighted_soft_xent", "model_loss"]
        );
        for c in &cases {
            let r = c.run(11).unwrap();
            assert!(r.max_relative_error < GRADCHECK_TOLERANCE, "{}: {r:?}", c.name());
        }
    }

    #[test]
    fn corrupted_case_fails() {
        let case = gradcheck_suite(GradCheckScope::Ops, 1).unwrap().remove(0).corrupt();
        assert!(case.run(1).unwrap().max_relative_error > GRADCHECK_TOLERANCE);
    }
}
