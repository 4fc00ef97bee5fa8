use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Gradient is masked by `input > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_output.shape() {
        return Err(Error::Shape(format!(
            "relu backward: input {:?} vs gradient {:?}",
            input.shape(),
            grad_output.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Per-element multipliers: `0` for dropped units, `1 / (1 - rate)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(pub Tensor<T>);

/// Inverted dropout. Returns `None` for the mask when the op is the identity
/// (eval mode or rate 0).
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let out = Tensor::from_vec(
        input.shape(),
        input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect(),
    )?;
    Ok((out, Some(DropoutMask(mask))))
}

pub fn dropout_backward<T: Scalar>(grad_output: &Tensor<T>, mask: Option<&DropoutMask<T>>) -> Result<Tensor<T>> {
    let Some(DropoutMask(m)) = mask else {
        return Ok(grad_output.clone());
    };
    if m.shape() != grad_output.shape() {
        return Err(Error::Shape(format!(
            "dropout backward: mask {:?} vs gradient {:?}",
            m.shape(),
            grad_output.shape()
        )));
    }
    Tensor::from_vec(
        m.shape(),
        grad_output.data().iter().zip(m.data()).map(|(&g, &k)| g * k).collect(),
    )
}
