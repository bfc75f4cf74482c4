use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Splits `[N, n, H, W]` into `scale` contiguous channel groups of width
/// `n / scale`, preserving order.
pub fn channel_split<T: Real>(input: &Tensor<T>, scale: usize) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = input.nchw()?;
    if scale == 0 || c % scale != 0 {
        return Err(Error::Divisibility {
            channels: c,
            scale,
        });
    }
    let width = c / scale;
    let plane = h * w;
    let x = input.data();
    (0..scale)
        .map(|g| {
            let mut data = Vec::with_capacity(n * width * plane);
            for b in 0..n {
                let start = (b * c + g * width) * plane;
                data.extend_from_slice(&x[start..start + width * plane]);
            }
            Tensor::new(&[n, width, h, w], data)
        })
        .collect()
}

/// Concatenates `[N, c_i, H, W]` tensors along the channel axis.
pub fn channel_concat<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Format("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.nchw()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.nchw()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape("channel_concat", first.dims(), p.dims()));
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.dims()[1];
            data.extend_from_slice(&p.data()[b * pc * plane..(b + 1) * pc * plane]);
        }
    }
    Tensor::new(&[n, total, h, w], data)
}
