//! One optimization step.

use rand::Rng;

use super::optimizer::RmsProp;
use crate::error::{Error, Result};
use crate::model::{Model, StreamBatch};
use crate::nn::{weighted_soft_xent, LossSpec, Mode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Data loss plus L2 penalty.
    pub loss: f64,
    pub data_loss: f64,
    pub l2: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub loss: LossSpec,
    pub l2_lambda: f64,
    pub lr: f64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub grad_clip: Option<f64>,
}

fn ensure_finite(name: &str, t: &Tensor<f32>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// Train-mode forward, weighted soft cross-entropy plus L2 on weights,
/// backward and an RMSprop update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model<f32>,
    batch: &StreamBatch<f32>,
    targets: &Tensor<f32>,
    optimizer: &mut RmsProp,
    params: &StepParams,
    rng: &mut R,
) -> Result<StepMetrics> {
    let (out, tape) = model.forward_with_tape(batch, Mode::Train, rng)?;
    ensure_finite("logits", &out.logits)?;
    let (data_loss, grad_logits) = weighted_soft_xent(&out.logits, targets, &params.loss)?;
    let data_loss = data_loss as f64;
    if !data_loss.is_finite() {
        return Err(Error::NonFinite("data loss".into()));
    }
    let mut grads = model.backward(&tape, &grad_logits)?;
    let named = model.parameters();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let mut l2 = 0.0;
    let lambda = params.l2_lambda as f32;
    for ((name, w), g) in named.iter().zip(grads.iter_mut()) {
        ensure_finite(&format!("gradient of {name}"), g)?;
        if params.l2_lambda != 0.0 && Model::<f32>::is_regularized(name) {
            l2 += w.sum_squares();
            g.add_scaled(w, lambda)?;
        }
    }
    let l2 = params.l2_lambda * l2 / 2.0;
    let grad_norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if let Some(clip) = params.grad_clip {
        if grad_norm > clip {
            let scale = (clip / grad_norm) as f32;
            for g in &mut grads {
                *g = g.map(|v| v * scale);
            }
        }
    }
    optimizer.step(&names, model.parameters_mut(), &grads, params.lr)?;
    for (name, w) in model.parameters() {
        ensure_finite(&name, w)?;
    }
    Ok(StepMetrics {
        loss: data_loss + l2,
        data_loss,
        l2,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::nn::l2_penalty;
    use crate::rng::substream;

    fn setup(dropout: f64) -> (Model<f32>, StreamBatch<f32>, Tensor<f32>, RmsProp) {
        let mut cfg = tiny_config();
        cfg.dropout_rate = dropout;
        let model = Model::<f32>::build(&cfg, &mut substream(4, "init", &[])).unwrap();
        let mut rng = substream(4, "data", &[]);
        let n = 8;
        let streams = (0..2).map(|_| Tensor::randn(&[n, 2, 9, 8, 8], 1.0, &mut rng)).collect();
        let batch = StreamBatch::new(streams).unwrap();
        let targets = Tensor::from_fn(&[n, 2], |i| if (i / 2) % 3 == 0 { (i % 2) as f32 } else { 1.0 - (i % 2) as f32 });
        let opt = RmsProp::new(&model.parameters(), 0.9, 1e-8).unwrap();
        (model, batch, targets, opt)
    }

    fn params(lr: f64, l2: f64) -> StepParams {
        StepParams {
            loss: LossSpec::default(),
            l2_lambda: l2,
            lr,
            grad_clip: None,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, batch, targets, mut opt) = setup(0.5);
        let before: Vec<Tensor<f32>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        let m = train_step(&mut model, &batch, &targets, &mut opt, &params(0.0, 1e-4), &mut substream(0, "d", &[])).unwrap();
        assert!(m.loss.is_finite());
        let after: Vec<Tensor<f32>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn l2_accounting() {
        let (mut model, batch, targets, mut opt) = setup(0.0);
        let m = train_step(&mut model, &batch, &targets, &mut opt, &params(0.0, 0.0), &mut substream(0, "d", &[])).unwrap();
        assert_eq!(m.loss, m.data_loss);
        assert_eq!(m.l2, 0.0);

        let weights: Vec<Tensor<f32>> = model
            .parameters()
            .into_iter()
            .filter(|(n, _)| Model::<f32>::is_regularized(n))
            .map(|(_, t)| t.clone())
            .collect();
        let (expected, _) = l2_penalty(&weights.iter().collect::<Vec<_>>(), 1e-2);
        let m = train_step(&mut model, &batch, &targets, &mut opt, &params(0.0, 1e-2), &mut substream(0, "d", &[])).unwrap();
        assert!((m.l2 - expected).abs() < 1e-9 * expected.max(1.0));
        assert!((m.loss - m.data_loss - m.l2).abs() < 1e-12);
    }

    #[test]
    fn hard_targets_give_plain_cross_entropy() {
        let (mut model, batch, targets, mut opt) = setup(0.0);
        let m = train_step(&mut model, &batch, &targets, &mut opt, &params(0.0, 0.0), &mut substream(0, "d", &[])).unwrap();
        // recompute from the train-mode forward of an identical model
        let (mut twin, ..) = setup(0.0);
        let out = twin.forward(&batch, Mode::Train, &mut substream(0, "d", &[])).unwrap();
        let ce: f64 = out
            .probs
            .data()
            .chunks(2)
            .zip(targets.data().chunks(2))
            .map(|(p, t)| if t[1] == 1.0 { -(p[1] as f64).ln() } else { -(p[0] as f64).ln() })
            .sum::<f64>()
            / 8.0;
        assert!((m.data_loss - ce).abs() < 1e-6, "{} vs {ce}", m.data_loss);
    }

    #[test]
    fn memorizes_one_batch() {
        let (mut model, batch, targets, mut opt) = setup(0.0);
        let mut losses = vec![];
        for step in 0..200 {
            let m = train_step(&mut model, &batch, &targets, &mut opt, &params(3e-3, 0.0), &mut substream(0, "d", &[step])).unwrap();
            losses.push(m.data_loss);
        }
        let last = *losses.last().unwrap();
        assert!(last < 0.1, "final loss {last}");
        // after warm-up the loss keeps falling
        let late: Vec<f64> = losses[50..].chunks(25).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        assert!(late.windows(2).all(|w| w[1] < w[0]), "{late:?}");
    }

    #[test]
    fn clipping_rescales_the_gradient() {
        // with a tiny clip the scaled gradient drops below epsilon, so the
        // RMSprop step shrinks far below its usual lr-sized magnitude
        let run = |clip: Option<f64>| {
            let (mut model, batch, targets, mut opt) = setup(0.0);
            let before: Vec<Tensor<f32>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
            let mut p = params(1e-3, 0.0);
            p.grad_clip = clip;
            let m = train_step(&mut model, &batch, &targets, &mut opt, &p, &mut substream(0, "d", &[])).unwrap();
            let moved = model
                .parameters()
                .into_iter()
                .zip(&before)
                .map(|((_, a), b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            (m.grad_norm, moved)
        };
        let (norm, free) = run(None);
        let (clipped_norm, clipped) = run(Some(1e-9));
        assert_eq!(norm, clipped_norm);
        assert!(clipped < free / 10.0, "{clipped} vs {free}");
    }

    #[test]
    fn non_finite_values_are_named() {
        let (mut model, batch, targets, mut opt) = setup(0.0);
        let mut streams = batch.clone().into_streams();
        streams[0].data_mut()[0] = f32::NAN;
        let poisoned = StreamBatch::new(streams).unwrap();
        let err = train_step(&mut model, &poisoned, &targets, &mut opt, &params(1e-3, 0.0), &mut substream(0, "d", &[])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n.contains("stream.mouth.conv1")), "{err}");

        let w = model.parameters().into_iter().find(|(n, _)| n == "output.weight").unwrap().1.clone();
        model.set_state_tensor("output.weight", w.map(|_| f32::INFINITY)).unwrap();
        let err = train_step(&mut model, &batch, &targets, &mut opt, &params(1e-3, 0.0), &mut substream(0, "d", &[])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "logits"), "{err}");
    }
}
