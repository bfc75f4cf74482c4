use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::datapipe::{prepare_eval, AugmentConfig, Dataset, DatasetRecord};
use crate::error::{Error, Result};
use crate::multitask::Descriptor;
use crate::res2net::Model;
use crate::tensor::rten::Reader;
use crate::tensor::{Real, Tensor};

pub const MAGIC: [u8; 4] = *b"R2GX";
pub const VERSION: u8 = 1;

/// Images per forward pass during extraction.
const EXTRACT_CHUNK: usize = 32;

/// L2-normalized gallery descriptors with identity and camera labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    dim: usize,
    rows: Vec<f32>,
    identities: Vec<i32>,
    cameras: Vec<u32>,
    raw_norms: Vec<f32>,
}

impl GalleryIndex {
    /// Normalizes each descriptor; `names[i]` identifies row `i` in errors.
    pub fn build(
        descriptors: &[Vec<f32>],
        identities: Vec<i32>,
        cameras: Vec<u32>,
        names: &[String],
    ) -> Result<Self> {
        let g = descriptors.len();
        if g == 0 {
            return Err(Error::EmptyDataset);
        }
        if identities.len() != g || cameras.len() != g || names.len() != g {
            return Err(Error::Format(format!(
                "gallery of {g} descriptors with {} identities, {} cameras, {} names",
                identities.len(),
                cameras.len(),
                names.len()
            )));
        }
        let dim = descriptors[0].len();
        let mut rows = Vec::with_capacity(g * dim);
        let mut raw_norms = Vec::with_capacity(g);
        for (d, name) in descriptors.iter().zip(names) {
            if d.len() != dim {
                return Err(Error::shape("gallery descriptor", &[d.len()], &[dim]));
            }
            let norm = norm_f64(d);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::ZeroNorm(name.clone()));
            }
            rows.extend(d.iter().map(|&v| (v as f64 / norm) as f32));
            raw_norms.push(norm as f32);
        }
        Ok(Self {
            dim,
            rows,
            identities,
            cameras,
            raw_norms,
        })
    }

    /// Labels from `records`, names from their paths.
    pub fn from_records(descriptors: &[Vec<f32>], records: &[DatasetRecord]) -> Result<Self> {
        let ids = records
            .iter()
            .map(|r| i32::try_from(r.identity).map_err(|_| Error::Format(format!("identity {} exceeds i32", r.identity))))
            .collect::<Result<Vec<_>>>()?;
        let cams = records.iter().map(|r| r.camera).collect();
        let names: Vec<String> = records.iter().map(|r| r.image_path.clone()).collect();
        Self::build(descriptors, ids, cams, &names)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn identity(&self, i: usize) -> i32 {
        self.identities[i]
    }

    pub fn camera(&self, i: usize) -> u32 {
        self.cameras[i]
    }

    pub fn identities(&self) -> &[i32] {
        &self.identities
    }

    pub fn cameras(&self) -> &[u32] {
        &self.cameras
    }

    /// Pre-normalization L2 norms, kept for diagnostics.
    pub fn raw_norms(&self) -> &[f32] {
        &self.raw_norms
    }

    /// Normalized rows as a `[G, d]` tensor.
    pub fn matrix(&self) -> Tensor<f32> {
        Tensor::new(&[self.len(), self.dim], self.rows.clone()).expect("non-empty index")
    }

    /// `R2GX` layout (little-endian): magic, version byte, u32 d, u32 G, then
    /// per row d f32 values, i32 identity, u32 camera. Raw norms are not
    /// stored and decode as 1.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.len() * (4 * self.dim + 8));
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for i in 0..self.len() {
            for &v in self.row(i) {
                v.write_le(&mut out);
            }
            out.extend_from_slice(&self.identities[i].to_le_bytes());
            out.extend_from_slice(&self.cameras[i].to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32("descriptor dim")? as usize;
        let g = r.u32("gallery size")? as usize;
        if dim == 0 || g == 0 {
            return Err(Error::Format(format!("R2GX with d={dim}, G={g}")));
        }
        let mut rows = Vec::with_capacity(g * dim);
        let mut identities = Vec::with_capacity(g);
        let mut cameras = Vec::with_capacity(g);
        for _ in 0..g {
            rows.extend(r.reals::<f32>(dim, "descriptor row")?);
            identities.push(r.i32("identity")?);
            cameras.push(r.u32("camera")?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after R2GX rows", r.remaining())));
        }
        Ok(Self {
            dim,
            rows,
            identities,
            cameras,
            raw_norms: vec![1.0; g],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub(crate) fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Infer-mode descriptors for every record, in record order.
pub fn extract_descriptors(model: &Model<f32>, ds: &Dataset, aug: &AugmentConfig) -> Result<Vec<Descriptor<f32>>> {
    let chunks: Vec<Vec<usize>> = (0..ds.len())
        .collect::<Vec<_>>()
        .chunks(EXTRACT_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let per_chunk = chunks
        .par_iter()
        .map(|idx| {
            let images = idx
                .iter()
                .map(|&i| prepare_eval(&ds.load_image(i)?, aug))
                .collect::<Result<Vec<_>>>()?;
            model.extract_batch(&Tensor::stack(&images)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Extracts, normalizes and labels the descriptors of every record.
pub fn build_gallery(model: &Model<f32>, ds: &Dataset, aug: &AugmentConfig) -> Result<GalleryIndex> {
    let descs = extract_descriptors(model, ds, aug)?;
    let raw: Vec<Vec<f32>> = descs.iter().map(|d| d.values().to_vec()).collect();
    GalleryIndex::from_records(&raw, ds.records())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    fn sample() -> GalleryIndex {
        let d = vec![vec![3.0, 4.0], vec![0.0, 2.0], vec![-1.0, 1.0]];
        GalleryIndex::build(&d, vec![1, -1, 7], vec![1, 2, 3], &names(3)).unwrap()
    }

    #[test]
    fn rows_have_unit_norm() {
        let g = sample();
        assert_eq!(g.len(), 3);
        for i in 0..g.len() {
            assert!((norm_f64(g.row(i)) - 1.0).abs() < 1e-6);
        }
        assert_eq!(g.row(0), &[0.6, 0.8]);
        assert_eq!(g.raw_norms()[0], 5.0);
    }

    #[test]
    fn zero_descriptor_is_named() {
        let d = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let err = GalleryIndex::build(&d, vec![1, 2], vec![1, 1], &names(2)).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm descriptor for g1");
    }

    #[test]
    fn r2gx_round_trip_and_header() {
        let g = sample();
        let bytes = g.encode();
        assert_eq!(&bytes[..5], b"R2GX\x01");
        assert_eq!(&bytes[5..13], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 13 + 3 * 16);
        let back = GalleryIndex::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.identities(), g.identities());
        assert_eq!(back.matrix(), g.matrix());
    }

    #[test]
    fn r2gx_errors() {
        let bytes = sample().encode();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(GalleryIndex::decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(matches!(GalleryIndex::decode(&bad), Err(Error::UnsupportedVersion(99))));
        assert!(matches!(
            GalleryIndex::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }
}
