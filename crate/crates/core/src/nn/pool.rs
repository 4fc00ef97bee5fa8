use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of each window's maximum, one per output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Non-overlapping spatial max pooling over `[N, C, T, H, W]`. The time axis
/// is never pooled. Ties go to the first element in row-major scan order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: (usize, usize)) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, t, h, w] = input.dims5()?;
    let (mh, mw) = window;
    if mh == 0 || mw == 0 || h % mh != 0 || w % mw != 0 {
        return Err(Error::Shape(format!(
            "maxpool2d: spatial extents {h}x{w} not divisible by window {mh}x{mw}"
        )));
    }
    let (ho, wo) = (h / mh, w / mw);
    let x = input.data();
    let frame_in = h * w;
    let frame_out = ho * wo;
    let frames = n * c * t;

    let pairs: Vec<(T, usize)> = {
        let mut v = vec![(T::zero(), 0usize); frames * frame_out];
        parallel::for_each_chunk_mut(&mut v, frame_out, |fi, dst| {
            let base = fi * frame_in;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best_idx = base + (oh * mh) * w + ow * mw;
                    let mut best = x[best_idx];
                    for dh in 0..mh {
                        for dw in 0..mw {
                            let idx = base + (oh * mh + dh) * w + ow * mw + dw;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    dst[oh * wo + ow] = (best, best_idx);
                }
            }
        });
        v
    };
    let (values, argmax): (Vec<T>, Vec<usize>) = pairs.into_iter().unzip();
    Ok((
        Tensor::from_vec(&[n, c, t, ho, wo], values)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward<T: Scalar>(grad_output: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_output.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool2d backward: upstream gradient {:?} does not match {} pooled outputs",
            grad_output.shape(),
            indices.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&indices.input_shape);
    let dst = gx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_output.data()) {
        dst[i] = dst[i] + g;
    }
    Ok(gx)
}
