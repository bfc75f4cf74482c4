use rand::Rng;

use super::{GradBundle, Real, Tensor};
use crate::error::{Error, Result};

/// Weights `[out, in, k, k]` plus per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [co, _ci, kh, kw] = weight.dims()[..] else {
            return Err(Error::shape("ConvParams", weight.dims(), &[0, 0, 0, 0]));
        };
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::Config(format!(
                "only 1x1 and 3x3 kernels are supported, got {kh}x{kw}"
            )));
        }
        if bias.dims() != [co] {
            return Err(Error::shape("ConvParams bias", bias.dims(), &[co]));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero bias, "same" padding.
    pub fn kaiming(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let weight = Tensor::randn(
            &[out_channels, in_channels, kernel, kernel],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        Self::new(weight, Tensor::zeros(&[out_channels]), stride, kernel / 2)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.dims()),
            bias: Tensor::zeros(self.bias.dims()),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let out = |len: usize| -> Option<usize> {
            let padded = len + 2 * self.padding;
            (padded >= k).then(|| (padded - k) / self.stride + 1)
        };
        match (out(h), out(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape("conv2d output", &[h, w], &[k, k])),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = input.nchw()?;
        if c != self.in_channels() {
            return Err(Error::shape("conv2d", input.dims(), self.weight.dims()));
        }
        Ok((n, c, h, w))
    }
}

/// Output positions `o` in `[lo, hi)` whose input coordinate
/// `o * stride + offset - pad` lands inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > offset {
        ((in_len - 1 + pad - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_direct(input, p)
}

/// Reference cross-correlation by direct loops.
pub fn conv2d_direct<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, ci, h, w) = p.check_input(input)?;
    let (oh, ow) = p.output_hw(h, w)?;
    let co = p.out_channels();
    let k = p.kernel();
    let (s, pad) = (p.stride, p.padding);
    let x = input.data();
    let wt = p.weight.data();
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let y = out.data_mut();
    for b in 0..n {
        for o in 0..co {
            let plane = &mut y[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            plane.fill(p.bias.data()[o]);
            for c in 0..ci {
                let src = &x[(b * ci + c) * h * w..(b * ci + c + 1) * h * w];
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(oh, h, ky, pad, s);
                    for kx in 0..k {
                        let wv = wt[((o * ci + c) * k + ky) * k + kx];
                        let (x_lo, x_hi) = valid_range(ow, w, kx, pad, s);
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - pad;
                            let row = &src[iy * w..(iy + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in x_lo..x_hi {
                                dst[ox] += wv * row[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Same map as [`conv2d_direct`], computed by lowering each sample to a
/// column matrix and multiplying.
pub fn conv2d_im2col<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, ci, h, w) = p.check_input(input)?;
    let (oh, ow) = p.output_hw(h, w)?;
    let co = p.out_channels();
    let k = p.kernel();
    let (s, pad) = (p.stride, p.padding);
    let rows = ci * k * k;
    let cols_len = oh * ow;
    let mut cols = vec![T::zero(); rows * cols_len];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for b in 0..n {
        cols.fill(T::zero());
        for c in 0..ci {
            let src = &input.data()[(b * ci + c) * h * w..(b * ci + c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, ky, pad, s);
                for kx in 0..k {
                    let (x_lo, x_hi) = valid_range(ow, w, kx, pad, s);
                    let r = (c * k + ky) * k + kx;
                    let dst = &mut cols[r * cols_len..(r + 1) * cols_len];
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - pad;
                        for ox in x_lo..x_hi {
                            dst[oy * ow + ox] = src[iy * w + ox * s + kx - pad];
                        }
                    }
                }
            }
        }
        let y = &mut out.data_mut()[b * co * cols_len..(b + 1) * co * cols_len];
        for o in 0..co {
            let dst = &mut y[o * cols_len..(o + 1) * cols_len];
            dst.fill(p.bias.data()[o]);
            let wrow = &p.weight.data()[o * rows..(o + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                let src = &cols[r * cols_len..(r + 1) * cols_len];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += wv * v;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and its parameters.
/// The bundle holds `weight` and `bias`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, GradBundle<T>)> {
    let (n, ci, h, w) = p.check_input(input)?;
    let (oh, ow) = p.output_hw(h, w)?;
    let co = p.out_channels();
    if grad_out.dims() != [n, co, oh, ow] {
        return Err(Error::shape("conv2d_backward", grad_out.dims(), &[n, co, oh, ow]));
    }
    let k = p.kernel();
    let (s, pad) = (p.stride, p.padding);
    let x = input.data();
    let g = grad_out.data();
    let wt = p.weight.data();

    let mut grad_in = Tensor::zeros(input.dims());
    let mut grad_w = Tensor::zeros(p.weight.dims());
    let mut grad_b = Tensor::zeros(p.bias.dims());
    {
        let gi = grad_in.data_mut();
        let gw = grad_w.data_mut();
        let gb = grad_b.data_mut();
        for b in 0..n {
            for o in 0..co {
                let gplane = &g[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                gb[o] += gplane.iter().copied().sum::<T>();
                for c in 0..ci {
                    let base = (b * ci + c) * h * w;
                    for ky in 0..k {
                        let (y_lo, y_hi) = valid_range(oh, h, ky, pad, s);
                        for kx in 0..k {
                            let widx = ((o * ci + c) * k + ky) * k + kx;
                            let wv = wt[widx];
                            let (x_lo, x_hi) = valid_range(ow, w, kx, pad, s);
                            let mut acc = T::zero();
                            for oy in y_lo..y_hi {
                                let iy = oy * s + ky - pad;
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let row = base + iy * w;
                                for ox in x_lo..x_hi {
                                    let ix = row + ox * s + kx - pad;
                                    acc += grow[ox] * x[ix];
                                    gi[ix] += wv * grow[ox];
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let mut grads = GradBundle::new();
    grads.insert("weight", grad_w);
    grads.insert("bias", grad_b);
    Ok((grad_in, grads))
}
