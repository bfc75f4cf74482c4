use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::rten::{self, AnyTensor};
use crate::tensor::Tensor;

/// Reads a `[3,H,W]` image from an RTEN tensor or a binary PPM, with values
/// scaled to [0,1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let image = if is_ppm {
        decode_ppm(&bytes)
    } else {
        rten::decode(&bytes).map(|t| match t {
            AnyTensor::F32(t) => t,
            AnyTensor::F64(t) => t.cast(),
        })
    }
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match image.dims() {
        [3, _, _] => Ok(image),
        d => Err(Error::Format(format!("{}: expected a [3,H,W] image, found {d:?}", path.display()))),
    }
}

/// Binary PPM (P6), 8- or 16-bit samples.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Truncated { what: "PPM header", needed: 1 }),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(Error::Format(format!("not a binary PPM (magic {magic:?})")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse()
            .ok()
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::Format(format!("PPM {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval > 65535 {
        return Err(Error::Format(format!("PPM maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * 3 * sample_bytes;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < needed {
        return Err(Error::Truncated {
            what: "PPM raster",
            needed: needed - raster.len(),
        });
    }
    let sample = |i: usize| -> f32 {
        let v = if sample_bytes == 1 {
            raster[i] as u32
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
        };
        v as f32 / maxval as f32
    };
    let plane = width * height;
    Ok(Tensor::from_fn(&[3, height, width], |i| {
        let (c, p) = (i / plane, i % plane);
        sample(p * 3 + c)
    }))
}

/// 8-bit binary PPM; values are clamped to [0,1] and rounded.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [3, h, w] = *image.dims() else {
        return Err(Error::shape("encode_ppm", image.dims(), &[3, 0, 0]));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.dims() else {
        return Err(Error::shape("resize_bilinear", image.dims(), &[3, out_h, out_w]));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("resize target {out_h}x{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, (s - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Copies the `out_h × out_w` window at (`top`, `left`).
pub fn crop(image: &Tensor<f32>, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.dims() else {
        return Err(Error::shape("crop", image.dims(), &[3, out_h, out_w]));
    };
    if top + out_h > h || left + out_w > w {
        return Err(Error::Config(format!(
            "crop {out_h}x{out_w} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for y in top..top + out_h {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&src[row + left..row + left + out_w]);
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Crops at a uniformly random valid offset. Inputs smaller than the target
/// along either axis are first resized up to cover it.
pub fn random_crop(image: &Tensor<f32>, out_h: usize, out_w: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let [_, h, w] = *image.dims() else {
        return Err(Error::shape("random_crop", image.dims(), &[3, out_h, out_w]));
    };
    let resized;
    let (src, h, w) = if h < out_h || w < out_w {
        let (nh, nw) = (h.max(out_h), w.max(out_w));
        resized = resize_bilinear(image, nh, nw)?;
        (&resized, nh, nw)
    } else {
        (image, h, w)
    };
    let top = rng.random_range(0..=h - out_h);
    let left = rng.random_range(0..=w - out_w);
    crop(src, top, left, out_h, out_w)
}
