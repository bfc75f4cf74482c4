#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use r2reid::cli::synth::{generate, SynthConfig, GALLERY_MANIFEST, QUERY_MANIFEST, TRAIN_MANIFEST};
use r2reid::datapipe::{load_dataset, sample_pair_batch, AugmentConfig, Dataset};
use r2reid::res2net::BackboneConfig;
use r2reid::retrieval::{build_gallery, evaluate_model, extract_descriptors, GalleryIndex, Query};
use r2reid::trainer::{train, verification_accuracy, TrainConfig, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Metrics computed straight from the definitions: an item's rank is one
/// plus the number of retained rows that beat it (higher similarity, or
/// equal similarity and lower index); AP averages, over relevant rows, the
/// fraction of relevant rows ranked at or above it divided by its rank;
/// Acc_k indicates whether the best-ranked relevant row is within k.
pub struct OracleResult {
    pub per_query_ap: Vec<f64>,
    pub cmc: Vec<f64>,
    pub map: f64,
    pub dropped: Vec<usize>,
}

pub fn brute_force(queries: &[Query], g: &GalleryIndex, k_max: usize) -> Option<OracleResult> {
    let mut per_query_ap = Vec::new();
    let mut first_ranks = Vec::new();
    let mut dropped = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let qn = q.descriptor.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let sim: Vec<f64> = (0..g.len())
            .map(|j| {
                let mut s = 0.0;
                for (i, &gv) in g.row(j).iter().enumerate() {
                    s += gv as f64 * (q.descriptor[i] as f64 / qn);
                }
                s
            })
            .collect();
        let kept: Vec<usize> = (0..g.len())
            .filter(|&j| !(g.identity(j) == q.identity && g.camera(j) == q.camera))
            .collect();
        let relevant: BTreeSet<usize> = kept
            .iter()
            .copied()
            .filter(|&j| q.identity >= 0 && g.identity(j) == q.identity)
            .collect();
        if relevant.is_empty() {
            dropped.push(qi);
            continue;
        }
        let rank = |j: usize| {
            1 + kept
                .iter()
                .filter(|&&k| sim[k] > sim[j] || (sim[k] == sim[j] && k < j))
                .count()
        };
        let ap = relevant
            .iter()
            .map(|&j| {
                let rj = rank(j);
                relevant.iter().filter(|&&i| rank(i) <= rj).count() as f64 / rj as f64
            })
            .sum::<f64>()
            / relevant.len() as f64;
        per_query_ap.push(ap);
        first_ranks.push(relevant.iter().map(|&j| rank(j)).min().unwrap());
    }
    if per_query_ap.is_empty() {
        return None;
    }
    let n = per_query_ap.len() as f64;
    let cmc = (1..=k_max)
        .map(|k| first_ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect();
    let map = per_query_ap.iter().sum::<f64>() / n;
    Some(OracleResult {
        per_query_ap,
        cmc,
        map,
        dropped,
    })
}

pub struct ToyData {
    pub dir: tempfile::TempDir,
    pub train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

pub fn toy_data(seed: u64) -> ToyData {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    generate(dir.path(), &cfg).unwrap();
    let load = |m: &str| load_dataset(dir.path(), Some(&dir.path().join(m))).unwrap();
    ToyData {
        train: load(TRAIN_MANIFEST),
        query: load(QUERY_MANIFEST),
        gallery: load(GALLERY_MANIFEST),
        dir,
    }
}

/// Paper constants except the decay interval, stretched so the 100 toy
/// epochs are not dominated by decayed rates.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_iterations: Some(200),
        batch_size: 16,
        decay_every: 80,
        seed,
        augment: AugmentConfig {
            crop_h: 32,
            crop_w: 16,
            seed,
            ..AugmentConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub struct ToyMetrics {
    pub train_rank1: f64,
    pub verification_accuracy: f64,
    pub heldout_map: f64,
    pub heldout_rank1: f64,
}

pub fn toy_metrics(out: &TrainOutcome, data: &ToyData, aug: &AugmentConfig) -> ToyMetrics {
    let model = &out.model;
    let train_gallery = build_gallery(model, &data.train, aug).unwrap();
    let on_train = evaluate_model(model, &data.train, &train_gallery, aug, 5).unwrap();
    let gallery = build_gallery(model, &data.gallery, aug).unwrap();
    let heldout = evaluate_model(model, &data.query, &gallery, aug, 5).unwrap();
    let descs = extract_descriptors(model, &data.train, aug).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let pairs: Vec<_> = (0..20)
        .flat_map(|_| sample_pair_batch(&data.train, 16, 0.5, &mut rng).unwrap())
        .collect();
    ToyMetrics {
        train_rank1: on_train.rank1(),
        verification_accuracy: verification_accuracy(model, &descs, &pairs).unwrap(),
        heldout_map: heldout.map,
        heldout_rank1: heldout.rank1(),
    }
}

pub fn toy_run(data: &ToyData, seed: u64) -> TrainOutcome {
    let cfg = toy_train_config(seed);
    train(&cfg, &BackboneConfig::toy(data.train.num_classes()), &data.train, None).unwrap()
}

pub fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
