//! `R2MT` checkpoints.
//!
//! Layout (little-endian): magic `R2MT`, version byte (1), u32 length of the
//! JSON backbone config, the config bytes, u32 entry count, then per entry a
//! u32 name length, the UTF-8 name and an RTEN tensor. Model tensors use
//! their parameter names; momentum buffers are stored as `momentum/<name>`.
//! Entries are sorted by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::res2net::{build_backbone, BackboneConfig, Model};
use crate::tensor::rten::{encode_into, Reader};
use crate::tensor::{GradBundle, Parameters, Real, Tensor};

use super::optim::OptimizerState;

pub const MAGIC: [u8; 4] = *b"R2MT";
pub const VERSION: u8 = 1;
const MOMENTUM_PREFIX: &str = "momentum/";

pub fn encode_checkpoint<T: Real>(model: &Model<T>, state: &OptimizerState<T>) -> Result<Vec<u8>> {
    let mut entries: BTreeMap<String, &Tensor<T>> = BTreeMap::new();
    model.visit("", &mut |name, t, _| {
        entries.insert(name, t);
    });
    for (name, t) in state.velocity.iter() {
        entries.insert(format!("{MOMENTUM_PREFIX}{name}"), t);
    }
    let config = serde_json::to_vec(model.config()).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_into(t, &mut out);
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(Model<T>, OptimizerState<T>)> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let config_len = r.u32("config length")? as usize;
    let config: BackboneConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = r.u32("entry count")? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("checkpoint entry name is not UTF-8".into()))?
            .to_string();
        let t = r.tensor()?;
        if t.dtype() != T::DTYPE {
            return Err(Error::Format(format!("{name}: stored as {:?}, expected {:?}", t.dtype(), T::DTYPE)));
        }
        if entries.insert(name.clone(), t.into_real::<T>()).is_some() {
            return Err(Error::Format(format!("duplicate checkpoint entry {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
    }

    // Initialization is overwritten entry by entry below.
    let mut model = build_backbone::<T>(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut problem = None;
    let mut fill = |name: &str, t: &mut Tensor<T>| match entries.remove(name) {
        Some(v) if v.dims() == t.dims() => *t = v,
        Some(v) => {
            problem.get_or_insert(format!("{name}: stored dims {:?}, model expects {:?}", v.dims(), t.dims()));
        }
        None => {
            problem.get_or_insert(format!("checkpoint lacks {name}"));
        }
    };
    model.visit_mut("", &mut |name, t, _| fill(&name, t));
    let mut velocity = GradBundle::new();
    model.visit("", &mut |name, t, kind| {
        if kind.trainable() {
            let mut v = Tensor::zeros(t.dims());
            fill(&format!("{MOMENTUM_PREFIX}{name}"), &mut v);
            velocity.insert(name, v);
        }
    });
    if let Some(p) = problem {
        return Err(Error::Format(p));
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::Format(format!("unexpected checkpoint entry {extra}")));
    }
    Ok((model, OptimizerState { velocity }))
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, state: &OptimizerState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, state)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(Model<T>, OptimizerState<T>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Model<f32>, OptimizerState<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = build_backbone::<f32>(&BackboneConfig::toy(3), &mut rng).unwrap();
        let mut state = OptimizerState::zeros(&model);
        let names: Vec<String> = state.velocity.names().map(String::from).collect();
        for n in names {
            let v = state.velocity.get_mut(&n).unwrap();
            *v = Tensor::randn(v.dims(), 0.1, &mut rng);
        }
        (model, state)
    }

    #[test]
    fn save_load_save_is_identical() {
        let (model, state) = sample();
        let bytes = encode_checkpoint(&model, &state).unwrap();
        let (m2, s2) = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&m2, &s2).unwrap(), bytes);
        assert_eq!(s2, state);
    }

    #[test]
    fn header_errors_are_distinct() {
        let (model, state) = sample();
        let bytes = encode_checkpoint(&model, &state).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let err = decode_checkpoint::<f32>(&bad).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));
        let mut bad = bytes.clone();
        bad[4] = 99;
        let err = decode_checkpoint::<f32>(&bad).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion(99)));
        assert!(err.to_string().contains("unsupported version"));
        for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint::<f32>(&bytes[..cut]), Err(Error::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn wrong_dtype_rejected() {
        let (model, state) = sample();
        let bytes = encode_checkpoint(&model, &state).unwrap();
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
    }
}
