use super::{Real, Tensor};
use crate::error::Result;

/// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.nchw()?;
    let hw = h * w;
    let inv = T::lit(1.0 / hw as f64);
    let data = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_dims[..] else {
        return Err(crate::error::Error::shape("global_avg_pool_backward", input_dims, &[0; 4]));
    };
    if grad_out.dims() != [n, c] {
        return Err(crate::error::Error::shape(
            "global_avg_pool_backward",
            grad_out.dims(),
            &[n, c],
        ));
    }
    let hw = h * w;
    let inv = T::lit(1.0 / hw as f64);
    let mut data = Vec::with_capacity(n * c * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(input_dims, data)
}

/// 3x3 average pooling with padding 1 where padded taps count as zeros
/// (every window divides by 9).
pub fn avg_pool3x3<T: Real>(input: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
    let ninth = T::lit(1.0 / 9.0);
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let y = out.data_mut();
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for iy in window(oy * stride, h) {
                    for ix in window(ox * stride, w) {
                        acc += src[iy * w + ix];
                    }
                }
                y[(p * oh + oy) * ow + ox] = acc * ninth;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool3x3_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_dims: &[usize],
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.nchw()?;
    let (h, w) = (input_dims[2], input_dims[3]);
    let ninth = T::lit(1.0 / 9.0);
    let mut grad_in = Tensor::zeros(input_dims);
    let gi = grad_in.data_mut();
    let g = grad_out.data();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[(p * oh + oy) * ow + ox] * ninth;
                for iy in window(oy * stride, h) {
                    for ix in window(ox * stride, w) {
                        gi[p * h * w + iy * w + ix] += v;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// In-bounds rows/cols of a 3-wide window centred at `center`.
fn window(center: usize, len: usize) -> std::ops::Range<usize> {
    center.saturating_sub(1)..(center + 2).min(len)
}
