//! `r2reid` command-line interface. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

mod config;
pub mod synth;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{manifest_root, CliConfig};

use crate::datapipe::{load_dataset, load_image, prepare_eval, read_manifest, write_manifest, AugmentConfig, Dataset};
use crate::gradcheck::{format_table, run_suite, Scope};
use crate::res2net::{build_backbone, Model};
use crate::retrieval::{build_gallery, evaluate, evaluate_model, extract_descriptors, rank_query, GalleryIndex, Query};
use crate::tensor::{rten, Tensor};
use crate::trainer::{load_checkpoint, save_checkpoint, write_loss_history, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "model.r2mt";
pub const LOSS_FILE: &str = "loss.csv";
pub const DESCRIPTOR_FILE: &str = "descriptors.rten";
pub const INDEX_FILE: &str = "gallery.r2gx";
pub const INDEX_MANIFEST: &str = "gallery.csv";

#[derive(Debug, Parser)]
#[command(name = "r2reid", version, about = "Multi-task person re-identification with a Res2Net backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with train/query/gallery manifests
    Synth(SynthArgs),
    /// Train from a JSON config; writes a checkpoint and a loss CSV
    Train(TrainArgs),
    /// Extract descriptors for a manifest and store a gallery index
    Extract(ExtractArgs),
    /// Rank a gallery index against one query image
    Rank(RankArgs),
    /// Report CMC and mAP for a query set against a gallery
    Eval(EvalArgs),
    /// Compare every backward pass against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of identities (at least 2)
    #[arg(long, default_value_t = 8)]
    pub ids: usize,
    /// Images per identity (at least 2)
    #[arg(long, default_value_t = 8)]
    pub imgs_per_id: usize,
    /// Image height in pixels
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    /// Image width in pixels
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training and augmentation seeds
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's out_dir
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// R2MT checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest CSV of the images to index
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for descriptors.rten, gallery.r2gx and gallery.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Training config whose input size and normalization to apply
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// R2MT checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query image (RTEN or PPM)
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery index written by `extract`
    #[arg(long)]
    pub gallery: PathBuf,
    /// Number of results to print
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Training config whose input size and normalization to apply
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// R2MT checkpoint; requires --query-manifest and --gallery-manifest
    #[arg(long, requires_all = ["query_manifest", "gallery_manifest"], conflicts_with_all = ["query_index", "gallery_index"])]
    pub checkpoint: Option<PathBuf>,
    /// Manifest CSV of the query images
    #[arg(long, requires = "checkpoint")]
    pub query_manifest: Option<PathBuf>,
    /// Manifest CSV of the gallery images
    #[arg(long, requires = "checkpoint")]
    pub gallery_manifest: Option<PathBuf>,
    /// Precomputed query descriptors as an R2GX index
    #[arg(long, requires = "gallery_index")]
    pub query_index: Option<PathBuf>,
    /// Precomputed gallery descriptors as an R2GX index
    #[arg(long, requires = "query_index")]
    pub gallery_index: Option<PathBuf>,
    /// Largest rank reported in the CMC curve
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Training config whose input size and normalization to apply
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// primitives, block, losses, backbone or all
    #[arg(long, default_value = "all")]
    pub scope: Scope,
    /// Random seeds per op
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_SEEDS)]
    pub seeds: u64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} is not a readable file", path.display())))
    }
}

/// Parses `args` (program name first), runs the subcommand, prints errors
/// and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

pub fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = synth::SynthConfig {
        n_ids: a.ids,
        imgs_per_id: a.imgs_per_id,
        height: a.height,
        width: a.width,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let s = synth::generate(&a.out, &cfg).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} images to {} (train {}, query {}, gallery {})",
        s.train.len() + s.query.len() + s.gallery.len(),
        a.out.display(),
        s.train.len(),
        s.query.len(),
        s.gallery.len()
    );
    Ok(())
}

pub fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    require_file("--config", &a.config)?;
    let mut cfg = CliConfig::load(&a.config).map_err(usage)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
        cfg.train.augment.seed = seed;
    }
    let out = a
        .out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set out_dir in the config"))?;
    require_file("train_manifest", &cfg.train_manifest)?;
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let ds = load_dataset(cfg.dataset_root(), Some(&cfg.train_manifest))?;
    if cfg.backbone.num_identities == 0 {
        cfg.backbone.num_identities = ds.num_classes();
    }
    cfg.backbone.validate().map_err(|e| usage(e.to_string()))?;
    let model = build_backbone::<f32>(&cfg.backbone, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let mut trainer = Trainer::new(cfg.train.clone(), &ds, model)?;
    let total = trainer.total_iterations();
    let report_every = (total / 20).max(1);
    while !trainer.is_done() {
        let row = trainer.step()?;
        if row.iter == 1 || row.iter % report_every == 0 || row.iter == total {
            println!(
                "iter {:>6}/{total} epoch {:>4} lr {:.2e} id_a {:.4} id_b {:.4} verif {:.4} total {:.4}",
                row.iter, row.epoch, row.lr, row.id_loss_a, row.id_loss_b, row.verif_loss, row.total
            );
        }
    }
    let outcome = trainer.finish();
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.model, &outcome.state, &ckpt)?;
    write_loss_history(out.join(LOSS_FILE), &outcome.history)?;
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

/// Eval-time transform: the config's crop size and normalization, or the
/// native image size when no config is given.
fn eval_transform(config: Option<&Path>) -> Result<Option<AugmentConfig>, CliError> {
    match config {
        None => Ok(None),
        Some(p) => {
            require_file("--config", p)?;
            let cfg = CliConfig::load(p).map_err(usage)?;
            cfg.train.augment.validate().map_err(|e| usage(e.to_string()))?;
            Ok(Some(cfg.train.augment))
        }
    }
}

/// Native-size transform for a dataset whose images all share one size.
fn native_transform(ds: &Dataset) -> anyhow::Result<AugmentConfig> {
    let first = ds.load_image(0)?;
    let (h, w) = (first.dims()[1], first.dims()[2]);
    Ok(AugmentConfig {
        crop_h: h,
        crop_w: w,
        ..AugmentConfig::default()
    })
}

fn load_model(path: &Path) -> Result<Model<f32>, CliError> {
    require_file("--checkpoint", path)?;
    let (model, _) = load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

fn load_manifest(flag: &str, path: &Path) -> Result<Dataset, CliError> {
    require_file(flag, path)?;
    Ok(load_dataset(manifest_root(path), Some(path)).with_context(|| format!("reading {}", path.display()))?)
}

pub fn cmd_extract(a: ExtractArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    let ds = load_manifest("--manifest", &a.manifest)?;
    let aug = match eval_transform(a.config.as_deref())? {
        Some(t) => t,
        None => native_transform(&ds)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let descs = extract_descriptors(&model, &ds, &aug)?;
    let rows: Vec<Vec<f32>> = descs.iter().map(|d| d.values().to_vec()).collect();
    let matrix = Tensor::new(&[rows.len(), model.descriptor_dim()], rows.concat())?;
    rten::save(a.out.join(DESCRIPTOR_FILE), &matrix)?;
    let index = GalleryIndex::from_records(&rows, ds.records())?;
    index.save(a.out.join(INDEX_FILE))?;
    // Paths are rewritten relative to the output directory when possible.
    let records: Vec<_> = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.image_path = fs::canonicalize(ds.resolve(i))
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or(r.image_path);
            r
        })
        .collect();
    write_manifest(&a.out.join(INDEX_MANIFEST), &records)?;
    println!(
        "extracted {} descriptors of dimension {} into {}",
        index.len(),
        index.dim(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_rank(a: RankArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    require_file("--query", &a.query)?;
    require_file("--gallery", &a.gallery)?;
    if a.top_k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    let index = GalleryIndex::load(&a.gallery)?;
    let names = read_manifest(&a.gallery.with_file_name(INDEX_MANIFEST))
        .ok()
        .filter(|r| r.len() == index.len());
    let image = load_image(&a.query)?;
    let image = match eval_transform(a.config.as_deref())? {
        Some(t) => prepare_eval(&image, &t)?,
        None => image,
    };
    let q = model.extract_descriptor(&image)?;
    let ranked = rank_query(q.values(), &index, |_| false)?;
    println!("rank,similarity,identity,camera,path");
    for (r, (&pos, sim)) in ranked.order.iter().zip(&ranked.similarities).take(a.top_k).enumerate() {
        let path = names.as_ref().map_or_else(|| format!("#{pos}"), |n| n[pos].image_path.clone());
        println!("{},{:.6},{},{},{}", r + 1, sim, index.identity(pos), index.camera(pos), path);
    }
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    if a.top_k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    let result = match (&a.checkpoint, &a.query_index) {
        (Some(ckpt), None) => {
            let model = load_model(ckpt)?;
            let queries = load_manifest("--query-manifest", a.query_manifest.as_deref().expect("clap requires it"))?;
            let gallery_ds =
                load_manifest("--gallery-manifest", a.gallery_manifest.as_deref().expect("clap requires it"))?;
            let aug = match eval_transform(a.config.as_deref())? {
                Some(t) => t,
                None => native_transform(&gallery_ds)?,
            };
            let gallery = build_gallery(&model, &gallery_ds, &aug)?;
            evaluate_model(&model, &queries, &gallery, &aug, a.top_k)?
        }
        (None, Some(qi)) => {
            let gi = a.gallery_index.as_deref().expect("clap requires it");
            require_file("--query-index", qi)?;
            require_file("--gallery-index", gi)?;
            let q = GalleryIndex::load(qi)?;
            let g = GalleryIndex::load(gi)?;
            let queries: Vec<Query> = (0..q.len())
                .map(|i| Query {
                    descriptor: q.row(i).to_vec(),
                    identity: q.identity(i),
                    camera: q.camera(i),
                })
                .collect();
            evaluate(&queries, &g, a.top_k)?
        }
        _ => {
            return Err(usage(
                "pass either --checkpoint with --query-manifest and --gallery-manifest, or --query-index with --gallery-index",
            ))
        }
    };
    print!("{}", result.to_table());
    print!("{}", result.to_csv());
    Ok(())
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let rows = run_suite(a.scope, a.seeds)?;
    print!("{}", format_table(&rows));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!("gradient check failed for {}", failed.join(", "))))
    }
}
