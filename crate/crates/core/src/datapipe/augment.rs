use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::{random_crop, resize_bilinear};

/// Per-channel standardization applied after augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    /// Images are resized to this multiple of the crop size before cropping.
    pub resize_factor: f64,
    pub rea_probability: f64,
    pub rea_area_range: (f64, f64),
    pub rea_aspect_range: (f64, f64),
    pub rea_max_attempts: usize,
    pub normalization: Option<Normalization>,
    /// Seed of the augmentation stream, independent of pair sampling.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_h: 256,
            crop_w: 128,
            resize_factor: 1.125,
            rea_probability: 0.5,
            rea_area_range: (0.02, 0.4),
            rea_aspect_range: (0.3, 3.33),
            rea_max_attempts: 100,
            normalization: None,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.crop_h == 0 || self.crop_w == 0 {
            return bad(format!("crop size {}x{}", self.crop_h, self.crop_w));
        }
        if !(self.resize_factor >= 1.0 && self.resize_factor.is_finite()) {
            return bad(format!("resize_factor {} must be >= 1", self.resize_factor));
        }
        if !(0.0..=1.0).contains(&self.rea_probability) {
            return bad(format!("rea_probability {} outside [0,1]", self.rea_probability));
        }
        let (lo, hi) = self.rea_area_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("rea_area_range ({lo}, {hi}) must satisfy 0 < lo < hi < 1"));
        }
        let (lo, hi) = self.rea_aspect_range;
        if !(0.0 < lo && lo < hi && hi.is_finite()) {
            return bad(format!("rea_aspect_range ({lo}, {hi}) must satisfy 0 < lo < hi"));
        }
        if let Some(n) = &self.normalization {
            if n.std.iter().any(|&s| !(s > 0.0)) {
                return bad(format!("normalization std {:?} must be positive", n.std));
            }
        }
        Ok(())
    }
}

/// Rectangle overwritten by [`random_erase`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl EraseRegion {
    pub fn area_ratio(&self, h: usize, w: usize) -> f64 {
        (self.height * self.width) as f64 / (h * w) as f64
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

/// With probability `rea_probability`, fills one rectangle (same position in
/// every channel) with independent uniform values in [0,1]. Placements are
/// retried until the rounded rectangle fits with its area ratio and aspect
/// ratio inside the configured ranges; after `rea_max_attempts` failures the
/// image is left unchanged.
pub fn random_erase(
    image: &Tensor<f32>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Option<EraseRegion>)> {
    let [c, h, w] = *image.dims() else {
        return Err(Error::shape("random_erase", image.dims(), &[3, 0, 0]));
    };
    if rng.random::<f64>() >= cfg.rea_probability {
        return Ok((image.clone(), None));
    }
    let (area_lo, area_hi) = cfg.rea_area_range;
    let (asp_lo, asp_hi) = cfg.rea_aspect_range;
    let total = (h * w) as f64;
    for _ in 0..cfg.rea_max_attempts {
        let target = rng.random_range(area_lo..area_hi) * total;
        let aspect = rng.random_range(asp_lo..asp_hi);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let area = (eh * ew) as f64 / total;
        let realized_aspect = eh as f64 / ew as f64;
        if !(area_lo..=area_hi).contains(&area) || !(asp_lo..=asp_hi).contains(&realized_aspect) {
            continue;
        }
        let region = EraseRegion {
            top: rng.random_range(0..=h - eh),
            left: rng.random_range(0..=w - ew),
            height: eh,
            width: ew,
        };
        let mut out = image.clone();
        let data = out.data_mut();
        for ch in 0..c {
            for y in region.top..region.top + eh {
                let row = (ch * h + y) * w;
                for v in &mut data[row + region.left..row + region.left + ew] {
                    *v = rng.random::<f32>();
                }
            }
        }
        return Ok((out, Some(region)));
    }
    Ok((image.clone(), None))
}

pub fn normalize(image: &mut Tensor<f32>, n: &Normalization) {
    let plane = image.len() / 3;
    for (i, v) in image.data_mut().iter_mut().enumerate() {
        let c = i / plane;
        *v = (*v - n.mean[c]) / n.std[c];
    }
}

/// Training transform: resize to `resize_factor` × crop size, random crop,
/// random erasing, optional normalization.
pub fn augment(image: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let rh = (cfg.crop_h as f64 * cfg.resize_factor).round() as usize;
    let rw = (cfg.crop_w as f64 * cfg.resize_factor).round() as usize;
    let resized = resize_bilinear(image, rh, rw)?;
    let cropped = random_crop(&resized, cfg.crop_h, cfg.crop_w, rng)?;
    let (mut out, _) = random_erase(&cropped, cfg, rng)?;
    if let Some(n) = &cfg.normalization {
        normalize(&mut out, n);
    }
    Ok(out)
}

/// Evaluation transform: resize to the crop size, optional normalization.
pub fn prepare_eval(image: &Tensor<f32>, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let mut out = resize_bilinear(image, cfg.crop_h, cfg.crop_w)?;
    if let Some(n) = &cfg.normalization {
        normalize(&mut out, n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: f64) -> AugmentConfig {
        AugmentConfig {
            crop_h: 32,
            crop_w: 16,
            rea_probability: p,
            ..Default::default()
        }
    }

    fn image(rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::uniform(&[3, 32, 16], 0.0, 1.0, rng)
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = image(&mut rng);
        for _ in 0..100 {
            let (out, region) = random_erase(&img, &cfg(0.0), &mut rng).unwrap();
            assert!(region.is_none());
            assert_eq!(out.data(), img.data());
        }
    }

    #[test]
    fn certain_erasure_changes_only_the_rectangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = image(&mut rng);
        for _ in 0..200 {
            let (out, region) = random_erase(&img, &cfg(1.0), &mut rng).unwrap();
            let r = region.expect("32x16 always admits a placement");
            let ratio = r.area_ratio(32, 16);
            assert!((0.02..=0.4).contains(&ratio), "{ratio}");
            for c in 0..3 {
                for y in 0..32 {
                    for x in 0..16 {
                        let i = (c * 32 + y) * 16 + x;
                        if !r.contains(y, x) {
                            assert_eq!(out.data()[i], img.data()[i]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn impossible_placement_leaves_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::full(&[3, 1, 1], 0.5f32);
        let (out, region) = random_erase(&img, &cfg(1.0), &mut rng).unwrap();
        assert!(region.is_none());
        assert_eq!(out, img);
    }

    #[test]
    fn validation() {
        assert!(cfg(0.5).validate().is_ok());
        assert!(cfg(1.5).validate().is_err());
        let mut c = cfg(0.5);
        c.rea_area_range = (0.4, 0.02);
        assert!(c.validate().is_err());
        let mut c = cfg(0.5);
        c.rea_aspect_range = (3.0, 3.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn augment_output_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Tensor::uniform(&[3, 40, 20], 0.0, 1.0, &mut rng);
        let out = augment(&img, &cfg(0.5), &mut rng).unwrap();
        assert_eq!(out.dims(), &[3, 32, 16]);
        assert_eq!(prepare_eval(&img, &cfg(0.5)).unwrap().dims(), &[3, 32, 16]);
    }
}
