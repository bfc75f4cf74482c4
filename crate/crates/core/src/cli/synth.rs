//! Deterministic synthetic re-identification dataset.
//!
//! Each identity wears an upper and a lower garment drawn from a small color
//! palette, with a horizontal stripe pattern on the upper garment.
//! Identities come in pairs that swap the two garment colors, so the mean
//! color of an image does not reveal its identity. Images alternate between
//! two cameras with different color casts; every image also gets a random
//! brightness change, a vertical shift of up to two rows, and seeded
//! Gaussian pixel noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datapipe::{write_manifest, DatasetRecord};
use crate::error::{Error, Result};
use crate::tensor::{rten, Tensor};

pub const IMAGE_DIR: &str = "images";
pub const TRAIN_MANIFEST: &str = "train.csv";
pub const QUERY_MANIFEST: &str = "query.csv";
pub const GALLERY_MANIFEST: &str = "gallery.csv";

const NOISE_STD: f64 = 0.05;
const CAMERA_CAST: [[f32; 3]; 2] = [[1.0, 1.0, 1.0], [0.8, 0.9, 1.1]];
const BRIGHTNESS_JITTER: f32 = 0.1;
const BACKGROUND: f32 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_ids: usize,
    pub imgs_per_id: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_ids: 8,
            imgs_per_id: 8,
            height: 32,
            width: 16,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ids < 2 {
            return Err(Error::Config(format!("need at least 2 identities, got {}", self.n_ids)));
        }
        if self.imgs_per_id < 2 {
            return Err(Error::Config(format!(
                "need at least 2 images per identity, got {}",
                self.imgs_per_id
            )));
        }
        if self.height < 8 || self.width < 4 {
            return Err(Error::Config(format!(
                "images must be at least 8x4, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Records per split, paths relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSplits {
    pub train: Vec<DatasetRecord>,
    pub query: Vec<DatasetRecord>,
    pub gallery: Vec<DatasetRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Signature {
    upper: [f32; 3],
    lower: [f32; 3],
    stripe: [f32; 3],
    period: usize,
}

fn hue_to_rgb(h: f64, value: f64) -> [f32; 3] {
    let f = |offset: f64| (value * (0.5 + 0.5 * (TAU * (h + offset)).cos())) as f32;
    [f(0.0), f(2.0 / 3.0), f(1.0 / 3.0)]
}

/// Ordered color pairs `(upper, lower)` over a palette of `m` colors, each
/// pair followed by its swap: (0,1), (1,0), (0,2), (2,0), ...
fn garment_pairs(n_ids: usize) -> (usize, Vec<(usize, usize)>) {
    let mut m = 2;
    while m * (m - 1) < n_ids {
        m += 1;
    }
    let mut pairs = Vec::with_capacity(m * (m - 1));
    for gap in 1..m {
        for a in 0..m - gap {
            pairs.push((a, a + gap));
            pairs.push((a + gap, a));
        }
    }
    (m, pairs)
}

fn signatures(n_ids: usize, rng: &mut impl Rng) -> Vec<Signature> {
    let (m, pairs) = garment_pairs(n_ids);
    let palette: Vec<[f32; 3]> = (0..m).map(|c| hue_to_rgb(c as f64 / m as f64, 0.9)).collect();
    pairs
        .into_iter()
        .take(n_ids)
        .enumerate()
        .map(|(id, (u, l))| Signature {
            upper: palette[u],
            lower: palette[l],
            stripe: hue_to_rgb(rng.random::<f64>(), 0.3),
            period: 2 + (id / 2) % 3,
        })
        .collect()
}

fn render(sig: &Signature, camera: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Tensor<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let shift = rng.random_range(0..=2usize);
    let (left, right) = (w / 4, w - w / 4);
    let waist = h / 2;
    let brightness = 1.0 + rng.random_range(-BRIGHTNESS_JITTER..=BRIGHTNESS_JITTER);
    let gain: [f32; 3] = std::array::from_fn(|c| CAMERA_CAST[camera][c] * brightness);
    let mut pixels = vec![0f32; 3 * h * w];
    for y in 0..h {
        let fy = y.saturating_sub(shift);
        for x in 0..w {
            let rgb = if x < left || x >= right || y < shift + 1 {
                [BACKGROUND; 3]
            } else if fy < waist {
                if (fy / sig.period) % 2 == 1 {
                    std::array::from_fn(|c| (sig.upper[c] + sig.stripe[c]) * 0.6)
                } else {
                    sig.upper
                }
            } else {
                sig.lower
            };
            for c in 0..3 {
                let v = rgb[c] * gain[c] + noise.sample(rng) as f32;
                pixels[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, h, w], pixels).expect("consistent dims")
}

/// Writes images and manifests under `out_dir`. Identity `i` (1-based) image
/// `j` is seen by camera `j % 2 + 1`; the first half of each identity's
/// images train, the rest split into query (first half) and gallery.
pub fn generate(out_dir: &Path, cfg: &SynthConfig) -> Result<SynthSplits> {
    cfg.validate()?;
    let image_dir = out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut splits = SynthSplits {
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    let n_train = cfg.imgs_per_id.div_ceil(2);
    let n_query = (cfg.imgs_per_id - n_train) / 2;
    for (id, sig) in signatures(cfg.n_ids, &mut rng).iter().enumerate() {
        for j in 0..cfg.imgs_per_id {
            let camera = j % 2;
            let image = render(sig, camera, cfg, &mut rng);
            let name = format!("{:04}_c{}_{:03}.rten", id + 1, camera + 1, j);
            rten::save(image_dir.join(&name), &image)?;
            let record = DatasetRecord {
                image_path: format!("{IMAGE_DIR}/{name}"),
                identity: (id + 1) as i64,
                camera: (camera + 1) as u32,
            };
            if j < n_train {
                splits.train.push(record);
            } else if j < n_train + n_query {
                splits.query.push(record);
            } else {
                splits.gallery.push(record);
            }
        }
    }
    write_manifest(&out_dir.join(TRAIN_MANIFEST), &splits.train)?;
    write_manifest(&out_dir.join(QUERY_MANIFEST), &splits.query)?;
    write_manifest(&out_dir.join(GALLERY_MANIFEST), &splits.gallery)?;
    Ok(splits)
}
