use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{assemble_batch, Dataset, PairSampler, PairSpec};
use crate::error::{Error, Result};
use crate::multitask::{multitask_step, predict_pair, Descriptor};
use crate::res2net::{build_backbone, BackboneConfig, Model};
use crate::tensor::Tensor;

use super::optim::{learning_rate, sgd_step, OptimizerState, TrainConfig};

/// Seed offset separating the pair-sampling stream from model initialization.
const SAMPLER_STREAM: u64 = 0x5a4d_504c;

/// Per-iteration losses; `iter` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub id_loss_a: f64,
    pub id_loss_b: f64,
    pub verif_loss: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub state: OptimizerState<f32>,
    pub history: Vec<LossRow>,
}

/// Training loop state, stepped one pair batch at a time.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    ds: &'a Dataset,
    images: Vec<Tensor<f32>>,
    sampler: PairSampler,
    sample_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    model: Model<f32>,
    state: OptimizerState<f32>,
    iteration: usize,
    history: Vec<LossRow>,
}

impl<'a> Trainer<'a> {
    /// Decodes every training image up front.
    pub fn new(cfg: TrainConfig, ds: &'a Dataset, model: Model<f32>) -> Result<Self> {
        let images = ds.load_images()?;
        Self::with_images(cfg, ds, images, model)
    }

    pub fn with_images(cfg: TrainConfig, ds: &'a Dataset, images: Vec<Tensor<f32>>, model: Model<f32>) -> Result<Self> {
        cfg.validate()?;
        if model.num_identities() != ds.num_classes() {
            return Err(Error::Config(format!(
                "model has {} identity classes, dataset has {}",
                model.num_identities(),
                ds.num_classes()
            )));
        }
        if images.len() != ds.len() {
            return Err(Error::Config(format!("{} images for {} records", images.len(), ds.len())));
        }
        let sampler = PairSampler::new(ds, cfg.batch_size, cfg.positive_fraction)?;
        let state = OptimizerState::zeros(&model);
        Ok(Self {
            sample_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_STREAM),
            aug_rng: ChaCha8Rng::seed_from_u64(cfg.augment.seed),
            cfg,
            ds,
            images,
            sampler,
            model,
            state,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.sampler.batches_per_epoch()
    }

    /// `total_epochs` passes over the data, capped by `max_iterations`.
    pub fn total_iterations(&self) -> usize {
        let full = self.cfg.total_epochs * self.batches_per_epoch();
        self.cfg.max_iterations.map_or(full, |m| m.min(full))
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn history(&self) -> &[LossRow] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    /// Samples, augments, and applies one SGD update.
    pub fn step(&mut self) -> Result<LossRow> {
        let epoch = self.iteration / self.batches_per_epoch();
        let lr = learning_rate(epoch, &self.cfg);
        let pairs = self.sampler.next_pairs(self.ds, &mut self.sample_rng);
        let batch = assemble_batch(self.ds, &self.images, &pairs, &self.cfg.augment, &mut self.aug_rng)?;
        let (report, grads) = multitask_step(&batch, &mut self.model, &self.cfg.loss_weights)?;
        if !grads.is_finite() {
            return Err(Error::Gradient(format!("non-finite gradient at iteration {}", self.iteration + 1)));
        }
        sgd_step(
            &mut self.model,
            &grads,
            &mut self.state,
            lr,
            self.cfg.momentum,
            self.cfg.weight_decay,
        )?;
        self.iteration += 1;
        let row = LossRow {
            iter: self.iteration,
            epoch,
            lr,
            id_loss_a: report.id_loss_a as f64,
            id_loss_b: report.id_loss_b as f64,
            verif_loss: report.verif_loss as f64,
            total: report.total(&self.cfg.loss_weights) as f64,
        };
        self.history.push(row);
        Ok(row)
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            state: self.state,
            history: self.history,
        }
    }
}

/// Trains `warm_start` if given, otherwise a fresh backbone seeded by
/// `cfg.seed`.
pub fn train(cfg: &TrainConfig, backbone: &BackboneConfig, ds: &Dataset, warm_start: Option<Model<f32>>) -> Result<TrainOutcome> {
    let model = match warm_start {
        Some(m) => m,
        None => build_backbone(backbone, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
    };
    Trainer::new(cfg.clone(), ds, model)?.run()
}

/// CSV with columns `iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total`.
pub fn write_loss_history(path: impl AsRef<Path>, rows: &[LossRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?}\n",
            r.iter, r.epoch, r.lr, r.id_loss_a, r.id_loss_b, r.verif_loss, r.total
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Fraction of `pairs` whose verification-head decision matches the label,
/// using infer-mode descriptors indexed by record position.
pub fn verification_accuracy(model: &Model<f32>, descriptors: &[Descriptor<f32>], pairs: &[PairSpec]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::PairComposition("no pairs to score".into()));
    }
    let mut correct = 0usize;
    for p in pairs {
        let d = |i: usize| {
            descriptors
                .get(i)
                .map(|d| d.values())
                .ok_or(Error::OutOfRange { what: "descriptors", index: i, len: descriptors.len() })
        };
        if predict_pair(d(p.a)?, d(p.b)?, &model.ver_head)? == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}
