//! Plain RMSprop and the per-epoch learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter squared-gradient accumulators, matched to parameters by name.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub epsilon: f64,
    names: Vec<String>,
    accumulators: Vec<Tensor<f32>>,
}

impl RmsProp {
    /// Zero accumulators shaped like `params`.
    pub fn new(params: &[(String, &Tensor<f32>)], rho: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) || !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RMSprop needs rho in [0, 1) and epsilon > 0, got {rho}, {epsilon}"
            )));
        }
        Ok(RmsProp {
            rho,
            epsilon,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            accumulators: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        })
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.accumulators)
    }

    /// `s <- rho s + (1 - rho) g^2; w <- w - lr g / (sqrt(s) + eps)`.
    pub fn step(&mut self, names: &[String], params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if names != self.names.as_slice() || params.len() != grads.len() || params.len() != names.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} names, {} parameters and {} gradients",
                self.names.len(),
                names.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), (s, name)) in params.into_iter().zip(grads).zip(self.accumulators.iter_mut().zip(&self.names)) {
            if p.shape() != g.shape() || p.shape() != s.shape() {
                return Err(Error::Shape(format!(
                    "{name}: parameter {:?}, gradient {:?}, accumulator {:?}",
                    p.shape(),
                    g.shape(),
                    s.shape()
                )));
            }
            let (rho, eps) = (self.rho as f32, self.epsilon as f32);
            let lr = lr as f32;
            for ((w, &g), s) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                *s = rho * *s + (1.0 - rho) * g * g;
                *w -= lr * g / (s.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base_lr * decay^epoch`.
pub fn lr_at(epoch: usize, base_lr: f64, decay: f64) -> f64 {
    base_lr * decay.powi(epoch as i32)
}
