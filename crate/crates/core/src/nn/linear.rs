use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `[N, D] x [D, K] -> [N, K]`, no bias.
pub fn linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, d] = input.dims2()?;
    let [wd, k] = weights.dims2()?;
    if d != wd {
        return Err(Error::Shape(format!(
            "linear: input {:?} does not chain with weights {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let row = &mut out[i * k..][..k];
        for j in 0..d {
            let a = x[i * d + j];
            if a == T::zero() {
                continue;
            }
            for (o, &b) in row.iter_mut().zip(&w[j * k..][..k]) {
                *o = *o + a * b;
            }
        }
    }
    Tensor::from_vec(&[n, k], out)
}

/// Returns `(grad_input, grad_weights)`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, d] = input.dims2()?;
    let [_, k] = weights.dims2()?;
    if grad_output.shape() != [n, k] || weights.shape()[0] != d {
        return Err(Error::Shape(format!(
            "linear backward: input {:?}, weights {:?}, gradient {:?}",
            input.shape(),
            weights.shape(),
            grad_output.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let g = grad_output.data();
    let mut gx = vec![T::zero(); n * d];
    for i in 0..n {
        let gr = &g[i * k..][..k];
        for j in 0..d {
            gx[i * d + j] = gr.iter().zip(&w[j * k..][..k]).map(|(&a, &b)| a * b).sum();
        }
    }
    let mut gw = vec![T::zero(); d * k];
    for i in 0..n {
        let gr = &g[i * k..][..k];
        for j in 0..d {
            let a = x[i * d + j];
            for (o, &b) in gw[j * k..][..k].iter_mut().zip(gr) {
                *o = *o + a * b;
            }
        }
    }
    Ok((Tensor::from_vec(&[n, d], gx)?, Tensor::from_vec(&[d, k], gw)?))
}

/// Concatenates `[N, D_i]` tensors along the feature axis.
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let [n, _] = first.dims2()?;
    let mut widths = Vec::with_capacity(inputs.len());
    for t in inputs {
        let [tn, d] = t.dims2()?;
        if tn != n {
            return Err(Error::Shape(format!(
                "concat: batch extents differ ({n} vs {tn})"
            )));
        }
        widths.push(d);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for i in 0..n {
        for (t, &d) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[i * d..][..d]);
        }
    }
    Tensor::from_vec(&[n, total], out)
}

/// Inverse of [`concat`]: slices `[N, sum(widths)]` into `[N, widths[i]]` blocks.
pub fn split_features<T: Scalar>(input: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, total] = input.dims2()?;
    if widths.iter().sum::<usize>() != total {
        return Err(Error::Shape(format!(
            "split_features: widths {widths:?} do not sum to {total}"
        )));
    }
    let mut offset = 0;
    widths
        .iter()
        .map(|&d| {
            let data = (0..n)
                .flat_map(|i| input.data()[i * total + offset..][..d].iter().copied())
                .collect();
            offset += d;
            Tensor::from_vec(&[n, d], data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identity_and_zero_weights() {
        let mut rng = substream(4, "lin", &[]);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye).unwrap(), x);
        let z = linear(&x, &Tensor::zeros(&[4, 2])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_loop_matmul() {
        let mut rng = substream(5, "lin", &[]);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let y = linear(&x, &w).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += x.data()[i * 4 + j] * w.data()[j * 2 + k];
                }
                assert!((y.data()[i * 2 + k] - s).abs() < 1e-6);
            }
        }
        assert!(linear(&x, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn concat_layout_and_round_trip() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let parts = split_features(&c, &[2, 3]).unwrap();
        assert_eq!(parts, vec![a.clone(), b]);
        assert_eq!(concat(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_rejects_batch_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[3, 2]);
        assert!(concat(&[&a, &b]).is_err());
    }
}
