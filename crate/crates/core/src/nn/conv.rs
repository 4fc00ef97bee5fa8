use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// A 3D convolution with unit stride, valid (unpadded) time axis and
/// symmetric zero padding on the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    /// `(kt, kh, kw)`
    pub kernel: (usize, usize, usize),
    /// `(ph, pw)`; there is no temporal padding.
    pub spatial_padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: (usize, usize, usize), spatial_padding: (usize, usize)) -> Result<Self> {
        let (kt, kh, kw) = kernel;
        if out_channels == 0 || kt == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs positive extents, got {out_channels} channels, kernel {kernel:?}"
            )));
        }
        Ok(ConvSpec {
            out_channels,
            kernel,
            spatial_padding,
        })
    }

    /// Output `(t, h, w)` for an input of `(t, h, w)`.
    pub fn output_extents(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let (kt, kh, kw) = self.kernel;
        let (ph, pw) = self.spatial_padding;
        if t < kt || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Shape(format!(
                "conv3d: input extents (t={t}, h={h}, w={w}) with padding ({ph}, {pw}) smaller than kernel {:?}",
                self.kernel
            )));
        }
        Ok((t - kt + 1, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1))
    }
}

struct Geometry {
    n: usize,
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    f: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Self> {
        let [n, c, t, h, w] = input.dims5()?;
        let [f, wc, kt, kh, kw] = weights.dims5()?;
        if wc != c {
            return Err(Error::Shape(format!(
                "conv3d: input has {c} channels but weights expect {wc} (input {:?}, weights {:?})",
                input.shape(),
                weights.shape()
            )));
        }
        if f != spec.out_channels || (kt, kh, kw) != spec.kernel {
            return Err(Error::Shape(format!(
                "conv3d: weights {:?} disagree with spec ({} filters, kernel {:?})",
                weights.shape(),
                spec.out_channels,
                spec.kernel
            )));
        }
        let (to, ho, wo) = spec.output_extents(t, h, w)?;
        let (ph, pw) = spec.spatial_padding;
        Ok(Geometry {
            n,
            c,
            t,
            h,
            w,
            f,
            kt,
            kh,
            kw,
            ph,
            pw,
            to,
            ho,
            wo,
        })
    }

    /// Output columns `ow` for which `ow + dw - pw` lands inside the input.
    #[inline]
    fn ow_range(&self, dw: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(dw);
        let hi = (self.w + self.pw).saturating_sub(dw).min(self.wo);
        (lo, hi.max(lo))
    }

    #[inline]
    fn input_row(&self, oh: usize, dh: usize) -> Option<usize> {
        let ih = (oh + dh).checked_sub(self.ph)?;
        (ih < self.h).then_some(ih)
    }
}

/// Forward 3D convolution. Input `[N, C, T, H, W]`, weights `[F, C, kt, kh, kw]`,
/// output `[N, F, T - kt + 1, H', W']`.
pub fn conv3d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weights, spec)?;
    let plane = g.to * g.ho * g.wo;
    let in_vol = g.t * g.h * g.w;
    let k_vol = g.kt * g.kh * g.kw;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![T::zero(); g.n * g.f * plane];

    parallel::for_each_chunk_mut(&mut out, plane, |idx, dst| {
        let (n, f) = (idx / g.f, idx % g.f);
        for c in 0..g.c {
            let src = &x[(n * g.c + c) * in_vol..][..in_vol];
            let kern = &wt[(f * g.c + c) * k_vol..][..k_vol];
            for dt in 0..g.kt {
                for dh in 0..g.kh {
                    for dw in 0..g.kw {
                        let wv = kern[(dt * g.kh + dh) * g.kw + dw];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = g.ow_range(dw);
                        if lo >= hi {
                            continue;
                        }
                        for ot in 0..g.to {
                            let it = ot + dt;
                            for oh in 0..g.ho {
                                let Some(ih) = g.input_row(oh, dh) else { continue };
                                let o = &mut dst[(ot * g.ho + oh) * g.wo..][lo..hi];
                                let s = &src[(it * g.h + ih) * g.w + lo + dw - g.pw..][..hi - lo];
                                for (a, &b) in o.iter_mut().zip(s) {
                                    *a = *a + wv * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[g.n, g.f, g.to, g.ho, g.wo], out)
}

pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
}

/// Backward pass of [`conv3d`]. The input gradient is skipped when
/// `need_input_grad` is false (first layer of a stream).
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_output: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, weights, spec)?;
    let expected = [g.n, g.f, g.to, g.ho, g.wo];
    if grad_output.shape() != expected {
        return Err(Error::Shape(format!(
            "conv3d backward: upstream gradient {:?}, expected {expected:?}",
            grad_output.shape()
        )));
    }
    let plane = g.to * g.ho * g.wo;
    let in_vol = g.t * g.h * g.w;
    let k_vol = g.kt * g.kh * g.kw;
    let x = input.data();
    let wt = weights.data();
    let gy = grad_output.data();

    // dW[f, c, dt, dh, dw] = sum over n and output positions; one slab per filter.
    let mut gw = vec![T::zero(); g.f * g.c * k_vol];
    parallel::for_each_chunk_mut(&mut gw, g.c * k_vol, |f, dst| {
        for n in 0..g.n {
            let gplane = &gy[(n * g.f + f) * plane..][..plane];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_vol..][..in_vol];
                for dt in 0..g.kt {
                    for dh in 0..g.kh {
                        for dw in 0..g.kw {
                            let (lo, hi) = g.ow_range(dw);
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for ot in 0..g.to {
                                let it = ot + dt;
                                for oh in 0..g.ho {
                                    let Some(ih) = g.input_row(oh, dh) else { continue };
                                    let o = &gplane[(ot * g.ho + oh) * g.wo..][lo..hi];
                                    let s = &src[(it * g.h + ih) * g.w + lo + dw - g.pw..][..hi - lo];
                                    for (&a, &b) in o.iter().zip(s) {
                                        acc = acc + a * b;
                                    }
                                }
                            }
                            let k = c * k_vol + (dt * g.kh + dh) * g.kw + dw;
                            dst[k] = dst[k] + acc;
                        }
                    }
                }
            }
        }
    });

    let grad_input = if need_input_grad {
        let mut gx = vec![T::zero(); g.n * g.c * in_vol];
        parallel::for_each_chunk_mut(&mut gx, g.c * in_vol, |n, dst| {
            for f in 0..g.f {
                let gplane = &gy[(n * g.f + f) * plane..][..plane];
                for c in 0..g.c {
                    let kern = &wt[(f * g.c + c) * k_vol..][..k_vol];
                    let dsrc = &mut dst[c * in_vol..][..in_vol];
                    for dt in 0..g.kt {
                        for dh in 0..g.kh {
                            for dw in 0..g.kw {
                                let wv = kern[(dt * g.kh + dh) * g.kw + dw];
                                let (lo, hi) = g.ow_range(dw);
                                if lo >= hi {
                                    continue;
                                }
                                for ot in 0..g.to {
                                    let it = ot + dt;
                                    for oh in 0..g.ho {
                                        let Some(ih) = g.input_row(oh, dh) else { continue };
                                        let o = &gplane[(ot * g.ho + oh) * g.wo..][lo..hi];
                                        let s = &mut dsrc[(it * g.h + ih) * g.w + lo + dw - g.pw..][..hi - lo];
                                        for (a, &b) in s.iter_mut().zip(o) {
                                            *a = *a + wv * b;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::from_vec(input.shape(), gx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weights: Tensor::from_vec(weights.shape(), gw)?,
    })
}
