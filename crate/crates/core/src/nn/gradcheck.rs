//! Central finite-difference gradient checking in double precision.
//!
//! An op under test maps a list of input tensors to one output tensor. The
//! checker contracts the output with a fixed random projection `r`, so the
//! scalar objective is `L = <r, op(inputs)>`; the analytic gradient is the
//! op's backward pass applied to `r`.

use rand::Rng;

use super::{
    batchnorm, batchnorm_backward, concat, conv3d, conv3d_backward, dropout, dropout_backward, linear,
    linear_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, split_features, weighted_soft_xent,
    BatchNormState, ConvSpec, LossSpec, Mode,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

pub trait Differentiable {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    /// Gradients with respect to every input, in input order.
    fn backward(&self, inputs: &[Tensor<f64>], grad_output: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

impl<D: Differentiable + ?Sized> Differentiable for Box<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (**self).forward(inputs)
    }
    fn backward(&self, inputs: &[Tensor<f64>], grad_output: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        (**self).backward(inputs, grad_output)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic backward pass of `op` with central differences of
/// step `epsilon`, elementwise over every input.
pub fn grad_check(op: &dyn Differentiable, inputs: &[Tensor<f64>], epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    let out = op.forward(inputs)?;
    let mut rng = substream(seed, "gradcheck-projection", &[]);
    let r = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let y = op.forward(xs)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    let analytic = op.backward(inputs, &r)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Shape(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[ti].shape() {
            return Err(Error::Shape(format!(
                "{}: gradient {ti} has shape {:?}, input has {:?}",
                op.name(),
                grad.shape(),
                inputs[ti].shape()
            )));
        }
        for k in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[k];
            probe[ti].data_mut()[k] = orig + epsilon;
            let plus = objective(&probe)?;
            probe[ti].data_mut()[k] = orig - epsilon;
            let minus = objective(&probe)?;
            probe[ti].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let e = relative_error(grad.data()[k], numeric);
            report.checked += 1;
            if e > report.max_relative_error || e.is_nan() {
                report.max_relative_error = e;
                report.worst = (ti, k);
            }
        }
    }
    Ok(report)
}

/// Wraps an op and perturbs its backward pass; used to prove the checker
/// actually catches broken gradients.
pub struct Corrupted<D> {
    pub inner: D,
    pub scale: f64,
}

impl<D: Differentiable> Differentiable for Corrupted<D> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.inner.forward(inputs)
    }
    fn backward(&self, inputs: &[Tensor<f64>], grad_output: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(self
            .inner
            .backward(inputs, grad_output)?
            .into_iter()
            .map(|g| g.map(|v| v * self.scale + 1e-3))
            .collect())
    }
}

/// Inputs `[x, w]`.
pub struct Conv3dOp(pub ConvSpec);

impl Differentiable for Conv3dOp {
    fn name(&self) -> &str {
        "conv3d"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        conv3d(&inputs[0], &inputs[1], &self.0)
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let grads = conv3d_backward(&inputs[0], &inputs[1], &self.0, g, true)?;
        Ok(vec![grads.input.expect("input gradient requested"), grads.weights])
    }
}

pub struct MaxPoolOp(pub (usize, usize));

impl Differentiable for MaxPoolOp {
    fn name(&self) -> &str {
        "maxpool2d"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(maxpool2d(&inputs[0], self.0)?.0)
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, idx) = maxpool2d(&inputs[0], self.0)?;
        Ok(vec![maxpool2d_backward(g, &idx)?])
    }
}

pub struct ReluOp;

impl Differentiable for ReluOp {
    fn name(&self) -> &str {
        "relu"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(relu(&inputs[0]))
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![relu_backward(&inputs[0], g)?])
    }
}

/// Train-mode batch norm with inputs `[x, gamma]`; running stats start fresh
/// on every call.
pub struct BatchNormOp {
    pub epsilon: f64,
}

impl BatchNormOp {
    fn state(&self, gamma: &Tensor<f64>) -> Result<BatchNormState<f64>> {
        let mut st = BatchNormState::new(gamma.len(), 0.9, self.epsilon)?;
        st.gamma = gamma.clone();
        Ok(st)
    }
}

impl Differentiable for BatchNormOp {
    fn name(&self) -> &str {
        "batchnorm"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(batchnorm(&inputs[0], &mut self.state(&inputs[1])?, Mode::Train)?.0)
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = batchnorm(&inputs[0], &mut self.state(&inputs[1])?, Mode::Train)?;
        let (gx, gg) = batchnorm_backward(g, &cache, &inputs[1])?;
        Ok(vec![gx, gg])
    }
}

/// Train-mode dropout whose mask is regenerated from a fixed seed, so the
/// op is a fixed linear map during the check.
pub struct DropoutOp {
    pub rate: f64,
    pub seed: u64,
}

impl Differentiable for DropoutOp {
    fn name(&self) -> &str {
        "dropout"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut rng = substream(self.seed, "dropout", &[]);
        Ok(dropout(&inputs[0], self.rate, Mode::Train, &mut rng)?.0)
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut rng = substream(self.seed, "dropout", &[]);
        let (_, mask) = dropout(&inputs[0], self.rate, Mode::Train, &mut rng)?;
        Ok(vec![dropout_backward(g, mask.as_ref())?])
    }
}

/// Inputs `[x, w]`.
pub struct LinearOp;

impl Differentiable for LinearOp {
    fn name(&self) -> &str {
        "linear"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        linear(&inputs[0], &inputs[1])
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (gx, gw) = linear_backward(&inputs[0], &inputs[1], g)?;
        Ok(vec![gx, gw])
    }
}

pub struct ConcatOp;

impl Differentiable for ConcatOp {
    fn name(&self) -> &str {
        "concat"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        concat(&inputs.iter().collect::<Vec<_>>())
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
        split_features(g, &widths)
    }
}

/// The loss as a function of the logits (single input); output shape `[1]`.
pub struct SoftXentOp {
    pub targets: Tensor<f64>,
    pub spec: LossSpec,
}

impl Differentiable for SoftXentOp {
    fn name(&self) -> &str {
        "weighted_soft_xent"
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (loss, _) = weighted_soft_xent(&inputs[0], &self.targets, &self.spec)?;
        Tensor::from_vec(&[1], vec![loss])
    }
    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, grad) = weighted_soft_xent(&inputs[0], &self.targets, &self.spec)?;
        let s = g.data()[0];
        Ok(vec![grad.map(|v| v * s)])
    }
}
