use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel batch normalization parameters and running statistics.
///
/// There is a scale (`gamma`) but no shift: the network carries no bias terms
/// anywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormState<T> {
    /// `gamma = 1`, running mean 0, running variance 1.
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if channels == 0 || !(momentum > 0.0 && momentum < 1.0) || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm: channels {channels}, momentum {momentum} (needs (0,1)), epsilon {epsilon} (needs > 0)"
            )));
        }
        Ok(BatchNormState {
            gamma: Tensor::full(&[channels], T::one()),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum,
            epsilon,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    /// Per-channel batch mean, biased variance and value count (train mode).
    batch_stats: Option<(Vec<f64>, Vec<f64>, usize)>,
}

/// `(N, C, inner)` for an input `[N, C, ...]`.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batchnorm needs [N, C, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> BatchNormState<T> {
    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates: `running = momentum * running + (1 - momentum) * batch`,
    /// using the unbiased batch variance. No-op for eval-mode caches.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let Some((mean, var, count)) = &cache.batch_stats else { return };
        let m = self.momentum;
        let unbias = *count as f64 / (*count - 1) as f64;
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::from_f64(m * rm.as_f64() + (1.0 - m) * mean[ch]);
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::from_f64(m * rv.as_f64() + (1.0 - m) * var[ch] * unbias);
        }
    }
}

/// Normalizes over every axis except the channel axis (axis 1) without
/// touching the state. Train mode uses batch statistics, eval mode the
/// running estimates.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, inner) = layout(input.shape())?;
    if c != state.channels() {
        return Err(Error::Shape(format!(
            "batchnorm: input {:?} has {c} channels, state has {}",
            input.shape(),
            state.channels()
        )));
    }
    let count = n * inner;
    let x = input.data();

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batchnorm: train mode needs at least 2 values per channel, input {:?} has {count}",
                    input.shape()
                )));
            }
            (0..c)
                .map(|ch| {
                    let vals = (0..n).flat_map(|i| x[(i * c + ch) * inner..][..inner].iter());
                    let mean = vals.clone().map(|v| v.as_f64()).sum::<f64>() / count as f64;
                    let var = vals.map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count as f64;
                    (mean, var)
                })
                .unzip()
        }
        Mode::Eval => (
            state.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            state.running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64(1.0 / (v + state.epsilon).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let g = state.gamma.data()[ch];
            let off = (i * c + ch) * inner;
            for k in off..off + inner {
                let xh = (x[k] - mean_t[ch]) * inv_std[ch];
                normalized[k] = xh;
                out[k] = g * xh;
            }
        }
    }

    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache {
            normalized: Tensor::from_vec(input.shape(), normalized)?,
            inv_std,
            mode,
            batch_stats: (mode == Mode::Train).then_some((mean, var, count)),
        },
    ))
}

/// [`batchnorm_forward`] followed, in train mode, by the running-statistics
/// update.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (out, cache) = batchnorm_forward(input, state, mode)?;
    state.update_running(&cache);
    Ok((out, cache))
}

/// Returns `(grad_input, grad_gamma)`. In train mode this is the full chain
/// rule through the batch mean and variance.
pub fn batchnorm_backward<T: Scalar>(
    grad_output: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if grad_output.shape() != cache.normalized.shape() {
        return Err(Error::Shape(format!(
            "batchnorm backward: gradient {:?} vs forward {:?}",
            grad_output.shape(),
            cache.normalized.shape()
        )));
    }
    let (n, c, inner) = layout(grad_output.shape())?;
    let count = (n * inner) as f64;
    let gy = grad_output.data();
    let xh = cache.normalized.data();

    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * inner;
            for k in off..off + inner {
                sum_g[ch] += gy[k].as_f64();
                sum_gx[ch] += (gy[k] * xh[k]).as_f64();
            }
        }
    }
    let grad_gamma = Tensor::from_vec(&[c], sum_gx.iter().map(|&v| T::from_f64(v)).collect())?;

    let mut gx = vec![T::zero(); gy.len()];
    for ch in 0..c {
        let g = gamma.data()[ch];
        let scale = g * cache.inv_std[ch];
        let mean_g = T::from_f64(sum_g[ch] / count);
        let mean_gx = T::from_f64(sum_gx[ch] / count);
        for i in 0..n {
            let off = (i * c + ch) * inner;
            for k in off..off + inner {
                gx[k] = match cache.mode {
                    // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
                    Mode::Train => scale * (gy[k] - mean_g - xh[k] * mean_gx),
                    Mode::Eval => scale * gy[k],
                };
            }
        }
    }
    Ok((Tensor::from_vec(grad_output.shape(), gx)?, grad_gamma))
}
