//! Finite-difference checks of every hand-written backward pass, run in
//! 64-bit over several random seeds. Shared by the test suites and the
//! `gradcheck` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::multitask::{identification_loss, square_layer, square_layer_backward, verification_loss, PairLabel};
use crate::res2net::{build_backbone, BackboneConfig, BlockShape, Linear, Model, Res2NetBlockParams, StageConfig};
use crate::tensor::gradcheck::{finite_diff_check, mask_fingerprint, Checkable, Coords, GradCheckReport, Probe};
use crate::tensor::{
    avg_pool3x3, avg_pool3x3_backward, batchnorm, batchnorm_backward, channel_concat, channel_split,
    conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax,
    softmax_backward, BatchNormParams, ConvParams, GradBundle, Mode, Parameters, Tensor,
};

pub const EPS: f64 = 1e-5;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const COMPOSED_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 10;
/// Coordinates perturbed per seed when an op has more parameters.
const MAX_COORDS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Primitives,
    Block,
    Losses,
    Backbone,
    All,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "primitives" => Ok(Scope::Primitives),
            "block" => Ok(Scope::Block),
            "losses" => Ok(Scope::Losses),
            "backbone" => Ok(Scope::Backbone),
            "all" => Ok(Scope::All),
            other => Err(format!(
                "unknown scope {other:?} (expected primitives, block, losses, backbone or all)"
            )),
        }
    }
}

/// Worst result of one op across all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub op: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// A scalar objective assembled from a closure.
pub struct FnCheck<F> {
    point: Vec<f64>,
    grad: Vec<f64>,
    eval: F,
}

impl<F: Fn(&[f64]) -> Probe> FnCheck<F> {
    pub fn new(point: Vec<f64>, grad: Vec<f64>, eval: F) -> Self {
        Self { point, grad, eval }
    }
}

impl<F: Fn(&[f64]) -> Probe> Checkable for FnCheck<F> {
    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn evaluate(&self, x: &[f64]) -> Probe {
        (self.eval)(x)
    }

    fn gradient(&self) -> Vec<f64> {
        self.grad.clone()
    }
}

fn pack(tensors: &[&Tensor<f64>]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unpack(x: &[f64], dims: &[Vec<usize>]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    dims.iter()
        .map(|d| {
            let len: usize = d.iter().product();
            let t = Tensor::new(d, x[off..off + len].to_vec()).expect("consistent layout");
            off += len;
            t
        })
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn coords_for(len: usize, seed: u64) -> Coords {
    if len <= MAX_COORDS {
        Coords::All
    } else {
        Coords::Sample {
            count: MAX_COORDS,
            seed: seed ^ 0x5eed,
        }
    }
}

fn run(check: &dyn Checkable, seed: u64) -> GradCheckReport {
    finite_diff_check(check, EPS, coords_for(check.point().len(), seed))
}

// ---- primitives ---------------------------------------------------------

pub fn conv2d_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, stride) = [(1, 1), (3, 1), (3, 2), (1, 2)][(seed % 4) as usize];
    let (n, ci, co, h, w) = (2, 3, 2, 5, 4);
    let x = Tensor::<f64>::randn(&[n, ci, h, w], 1.0, &mut rng);
    let mut p = ConvParams::kaiming(ci, co, k, stride, &mut rng)?;
    p.bias = Tensor::randn(&[co], 0.5, &mut rng);
    let y = conv2d(&x, &p)?;
    let r = Tensor::randn(y.dims(), 1.0, &mut rng);
    let (gx, gp) = conv2d_backward(&x, &p, &r)?;
    let layout = vec![x.dims().to_vec(), p.weight.dims().to_vec(), p.bias.dims().to_vec()];
    let point = pack(&[&x, &p.weight, &p.bias]);
    let grad = pack(&[&gx, gp.get("weight").unwrap(), gp.get("bias").unwrap()]);
    let check = FnCheck::new(point, grad, |v| {
        let t = unpack(v, &layout);
        let q = ConvParams::new(t[1].clone(), t[2].clone(), stride, k / 2).unwrap();
        Probe::smooth(dot(&conv2d(&t[0], &q).unwrap(), &r))
    });
    Ok(run(&check, seed))
}

pub fn batchnorm_check(seed: u64, mode: Mode) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let x = Tensor::<f64>::randn(&[3, c, 3, 2], 1.5, &mut rng);
    let mut p = BatchNormParams::new(c);
    p.gamma = Tensor::uniform(&[c], 0.5, 1.5, &mut rng);
    p.beta = Tensor::randn(&[c], 0.5, &mut rng);
    p.running_mean = Tensor::randn(&[c], 0.5, &mut rng);
    p.running_var = Tensor::uniform(&[c], 0.5, 2.0, &mut rng);
    let (y, cache) = batchnorm(&x, &p, mode)?;
    let r = Tensor::randn(y.dims(), 1.0, &mut rng);
    let (gx, gp) = batchnorm_backward(&p, &cache, &r)?;
    let layout = vec![x.dims().to_vec(), vec![c], vec![c]];
    let point = pack(&[&x, &p.gamma, &p.beta]);
    let grad = pack(&[&gx, gp.get("gamma").unwrap(), gp.get("beta").unwrap()]);
    let check = FnCheck::new(point, grad, |v| {
        let t = unpack(v, &layout);
        let mut q = p.clone();
        q.gamma = t[1].clone();
        q.beta = t[2].clone();
        Probe::smooth(dot(&batchnorm(&t[0], &q, mode).unwrap().0, &r))
    });
    Ok(run(&check, seed))
}

pub fn relu_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut rng);
    let r = Tensor::randn(x.dims(), 1.0, &mut rng);
    let gx = relu_backward(&x, &r)?;
    let dims = x.dims().to_vec();
    let check = FnCheck::new(x.data().to_vec(), gx.into_data(), |v| {
        let t = Tensor::new(&dims, v.to_vec()).unwrap();
        Probe {
            value: dot(&relu(&t), &r),
            pattern: mask_fingerprint(v.iter().map(|&a| a > 0.0), 0),
        }
    });
    Ok(run(&check, seed))
}

pub fn global_avg_pool_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::randn(&[2, 3, 3, 4], 1.0, &mut rng);
    let r = Tensor::randn(&[2, 3], 1.0, &mut rng);
    let gx = global_avg_pool_backward(&r, x.dims())?;
    let dims = x.dims().to_vec();
    let check = FnCheck::new(x.data().to_vec(), gx.into_data(), |v| {
        let t = Tensor::new(&dims, v.to_vec()).unwrap();
        Probe::smooth(dot(&global_avg_pool(&t).unwrap(), &r))
    });
    Ok(run(&check, seed))
}

pub fn avg_pool_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = 1 + (seed % 2) as usize;
    let x = Tensor::<f64>::randn(&[2, 2, 5, 4], 1.0, &mut rng);
    let y = avg_pool3x3(&x, stride)?;
    let r = Tensor::randn(y.dims(), 1.0, &mut rng);
    let gx = avg_pool3x3_backward(&r, x.dims(), stride)?;
    let dims = x.dims().to_vec();
    let check = FnCheck::new(x.data().to_vec(), gx.into_data(), |v| {
        let t = Tensor::new(&dims, v.to_vec()).unwrap();
        Probe::smooth(dot(&avg_pool3x3(&t, stride).unwrap(), &r))
    });
    Ok(run(&check, seed))
}

/// Split followed by a per-group weighting; the backward of split is concat.
pub fn split_concat_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 4;
    let x = Tensor::<f64>::randn(&[2, 8, 2, 3], 1.0, &mut rng);
    let parts = channel_split(&x, scale)?;
    let rs: Vec<Tensor<f64>> = parts.iter().map(|p| Tensor::randn(p.dims(), 1.0, &mut rng)).collect();
    let gx = channel_concat(&rs)?;
    let dims = x.dims().to_vec();
    let check = FnCheck::new(x.data().to_vec(), gx.into_data(), |v| {
        let t = Tensor::new(&dims, v.to_vec()).unwrap();
        let parts = channel_split(&t, scale).unwrap();
        Probe::smooth(parts.iter().zip(&rs).map(|(p, r)| dot(p, r)).sum())
    });
    Ok(run(&check, seed))
}

pub fn softmax_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 2 + (seed % 6) as usize;
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let r: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = softmax_backward(&softmax(&logits), &r);
    let check = FnCheck::new(logits, grad, |v| {
        Probe::smooth(softmax(v).iter().zip(&r).map(|(p, g)| p * g).sum())
    });
    Ok(run(&check, seed))
}

pub fn square_layer_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let f: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (g1, g2) = square_layer_backward(&f[..d], &f[d..], &r);
    let grad = g1.into_iter().chain(g2).collect();
    let check = FnCheck::new(f, grad, |v| {
        let fs = square_layer(&v[..d], &v[d..]).unwrap();
        Probe::smooth(fs.iter().zip(&r).map(|(a, b)| a * b).sum())
    });
    Ok(run(&check, seed))
}

// ---- composed -----------------------------------------------------------

/// Named trainable tensors of `p` in visit order, plus the flat point.
fn trainable_layout<P: Parameters<f64>>(p: &P) -> (Vec<String>, Vec<Vec<usize>>, Vec<f64>) {
    let mut names = Vec::new();
    let mut dims = Vec::new();
    let mut point = Vec::new();
    p.visit("", &mut |name, t, kind| {
        if kind.trainable() {
            names.push(name);
            dims.push(t.dims().to_vec());
            point.extend_from_slice(t.data());
        }
    });
    (names, dims, point)
}

fn assign_trainable<P: Parameters<f64>>(p: &mut P, x: &[f64]) {
    let mut off = 0;
    p.visit_mut("", &mut |_, t, kind| {
        if kind.trainable() {
            let len = t.len();
            t.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
    });
}

fn flatten_grads(names: &[String], grads: &GradBundle<f64>) -> Vec<f64> {
    names
        .iter()
        .flat_map(|n| {
            grads
                .get(n)
                .unwrap_or_else(|| panic!("backward produced no gradient for {n}"))
                .data()
                .to_vec()
        })
        .collect()
}

/// Perturbs BN affine parameters away from their (1, 0) initialization so
/// every gradient path is exercised.
fn jitter_norms<P: Parameters<f64>>(p: &mut P, rng: &mut ChaCha8Rng) {
    p.visit_mut("", &mut |name, t, _| {
        if name.ends_with("gamma") {
            *t = Tensor::uniform(t.dims(), 0.6, 1.4, rng);
        } else if name.ends_with("beta") || name.ends_with(".bias") {
            *t = Tensor::randn(t.dims(), 0.2, rng);
        }
    });
}

#[derive(Debug, Clone, Copy)]
pub enum BlockVariant {
    /// stride 1, identity shortcut, scale 4
    Normal,
    /// stride 2, projection shortcut, scale 4
    Downsample,
    /// first split convolved too
    FirstSplitConv,
    /// single split, plain bottleneck wiring
    ScaleOne,
}

impl BlockVariant {
    fn shape(self) -> BlockShape {
        let base = BlockShape {
            in_channels: 4,
            width: 1,
            scale: 4,
            out_channels: 4,
            stride: 1,
            first_split_conv: false,
        };
        match self {
            BlockVariant::Normal => base,
            BlockVariant::Downsample => BlockShape {
                width: 2,
                out_channels: 6,
                stride: 2,
                ..base
            },
            BlockVariant::FirstSplitConv => BlockShape {
                first_split_conv: true,
                ..base
            },
            BlockVariant::ScaleOne => BlockShape {
                width: 3,
                scale: 1,
                ..base
            },
        }
    }
}

/// Input and every trainable block tensor, train-mode BN.
pub fn block_check(seed: u64, variant: BlockVariant) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = variant.shape();
    let mut block = Res2NetBlockParams::<f64>::new(shape, &mut rng)?;
    jitter_norms(&mut block, &mut rng);
    let x = Tensor::randn(&[2, shape.in_channels, 5, 5], 1.0, &mut rng);
    let (y, cache) = block.forward(&x, Mode::Train)?;
    let r = Tensor::randn(y.dims(), 1.0, &mut rng);
    let (gx, grads) = block.backward(&cache, &r)?;
    let (names, _, params) = trainable_layout(&block);
    let point: Vec<f64> = x.data().iter().copied().chain(params).collect();
    let grad: Vec<f64> = gx.data().iter().copied().chain(flatten_grads(&names, &grads)).collect();
    let x_len = x.len();
    let x_dims = x.dims().to_vec();
    let check = FnCheck::new(point, grad, |v| {
        let mut b = block.clone();
        assign_trainable(&mut b, &v[x_len..]);
        let input = Tensor::new(&x_dims, v[..x_len].to_vec()).unwrap();
        let (out, c) = b.forward(&input, Mode::Train).unwrap();
        Probe {
            value: dot(&out, &r),
            pattern: c.relu_pattern(0),
        }
    });
    Ok(run(&check, seed))
}

fn random_head(out: usize, d: usize, rng: &mut ChaCha8Rng) -> Linear<f64> {
    let mut head = Linear::gaussian(out, d, 0.5, rng);
    head.bias = Tensor::randn(&[out], 0.3, rng);
    head
}

/// Descriptor and identification head.
pub fn identification_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, d) = (7, 5);
    let head = random_head(k, d, &mut rng);
    let f: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0)).collect();
    let t = rng.random_range(0..k);
    let out = identification_loss(&f, t, &head)?;
    let point = f.iter().copied().chain(pack(&[&head.weight, &head.bias])).collect();
    let grad = out
        .grad_input
        .iter()
        .copied()
        .chain(pack(&[&out.grad_head.weight, &out.grad_head.bias]))
        .collect();
    let check = FnCheck::new(point, grad, |v| {
        let t_ = unpack(&v[d..], &[vec![k, d], vec![k]]);
        let h = Linear {
            weight: t_[0].clone(),
            bias: t_[1].clone(),
        };
        Probe::smooth(identification_loss(&v[..d], t, &h).unwrap().loss)
    });
    Ok(run(&check, seed))
}

/// Both descriptors through the square layer and the verification head.
pub fn verification_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let head = random_head(2, d, &mut rng);
    let f: Vec<f64> = (0..2 * d).map(|_| rng.random_range(0.0..2.0)).collect();
    let label = if seed % 2 == 0 { PairLabel::Same } else { PairLabel::Different };
    let out = verification_loss(&f[..d], &f[d..], label, &head)?;
    let point = f.iter().copied().chain(pack(&[&head.weight, &head.bias])).collect();
    let grad = out
        .grad_f1
        .iter()
        .chain(&out.grad_f2)
        .copied()
        .chain(pack(&[&out.grad_head.weight, &out.grad_head.bias]))
        .collect();
    let check = FnCheck::new(point, grad, |v| {
        let t_ = unpack(&v[2 * d..], &[vec![2, d], vec![2]]);
        let h = Linear {
            weight: t_[0].clone(),
            bias: t_[1].clone(),
        };
        Probe::smooth(verification_loss(&v[..d], &v[d..2 * d], label, &h).unwrap().loss)
    });
    Ok(run(&check, seed))
}

fn tiny_backbone(seed: u64) -> Result<Model<f64>> {
    let cfg = BackboneConfig {
        in_channels: 3,
        stem_channels: 4,
        stem_stride: 1,
        stages: vec![StageConfig::new(1, 4, 1), StageConfig::new(1, 8, 2)],
        scale: 2,
        first_split_conv: false,
        descriptor_dim: 8,
        num_identities: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_backbone::<f64>(&cfg, &mut rng)?;
    jitter_norms(&mut model, &mut rng);
    Ok(model)
}

/// Whole backbone (stem, blocks, pooling) under a random projection of the
/// descriptors.
pub fn backbone_check(seed: u64) -> Result<GradCheckReport> {
    let model = tiny_backbone(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
    let images = Tensor::uniform(&[2, 3, 6, 4], 0.0, 1.0, &mut rng);
    let (f, cache) = model.forward_features(&images, Mode::Train)?;
    let r = Tensor::randn(f.dims(), 1.0, &mut rng);
    let grads = model.backward_features(&cache, &r)?;
    // Heads do not influence the descriptors and stay out of the layout.
    let is_backbone = |name: &str| !name.contains("_head");
    let (names, _, _) = trainable_layout(&model);
    let names: Vec<String> = names.into_iter().filter(|n| is_backbone(n)).collect();
    let mut point = Vec::new();
    model.visit("", &mut |name, t, kind| {
        if kind.trainable() && is_backbone(&name) {
            point.extend_from_slice(t.data());
        }
    });
    let grad = flatten_grads(&names, &grads);
    let check = FnCheck::new(point, grad, |v| {
        let mut m = model.clone();
        let mut off = 0;
        m.visit_mut("", &mut |name, t, kind| {
            if kind.trainable() && is_backbone(&name) {
                let len = t.len();
                t.data_mut().copy_from_slice(&v[off..off + len]);
                off += len;
            }
        });
        let (f, c) = m.forward_features(&images, Mode::Train).unwrap();
        Probe {
            value: dot(&f, &r),
            pattern: c.relu_pattern(),
        }
    });
    Ok(run(&check, seed))
}

type CheckFn = fn(u64) -> Result<GradCheckReport>;

fn ops_in(scope: Scope) -> Vec<(&'static str, f64, CheckFn)> {
    let primitives: Vec<(&'static str, f64, CheckFn)> = vec![
        ("conv2d", PRIMITIVE_TOLERANCE, conv2d_check),
        ("batchnorm_train", PRIMITIVE_TOLERANCE, |s| batchnorm_check(s, Mode::Train)),
        ("batchnorm_infer", PRIMITIVE_TOLERANCE, |s| batchnorm_check(s, Mode::Infer)),
        ("relu", PRIMITIVE_TOLERANCE, relu_check),
        ("global_avg_pool", PRIMITIVE_TOLERANCE, global_avg_pool_check),
        ("avg_pool3x3", PRIMITIVE_TOLERANCE, avg_pool_check),
        ("channel_split_concat", PRIMITIVE_TOLERANCE, split_concat_check),
        ("softmax", PRIMITIVE_TOLERANCE, softmax_check),
        ("square_layer", PRIMITIVE_TOLERANCE, square_layer_check),
    ];
    let block: Vec<(&'static str, f64, CheckFn)> = vec![
        ("res2net_block", COMPOSED_TOLERANCE, |s| block_check(s, BlockVariant::Normal)),
        ("res2net_block_stride2", COMPOSED_TOLERANCE, |s| block_check(s, BlockVariant::Downsample)),
        ("res2net_block_first_split_conv", COMPOSED_TOLERANCE, |s| {
            block_check(s, BlockVariant::FirstSplitConv)
        }),
        ("res2net_block_scale1", COMPOSED_TOLERANCE, |s| block_check(s, BlockVariant::ScaleOne)),
    ];
    let losses: Vec<(&'static str, f64, CheckFn)> = vec![
        ("identification_loss", COMPOSED_TOLERANCE, identification_check),
        ("verification_loss", COMPOSED_TOLERANCE, verification_check),
    ];
    let backbone: Vec<(&'static str, f64, CheckFn)> =
        vec![("backbone", COMPOSED_TOLERANCE, backbone_check)];
    match scope {
        Scope::Primitives => primitives,
        Scope::Block => block,
        Scope::Losses => losses,
        Scope::Backbone => backbone,
        Scope::All => [primitives, block, losses, backbone].concat(),
    }
}

/// Runs every op in `scope` for seeds `0..seeds` and keeps the worst error.
pub fn run_suite(scope: Scope, seeds: u64) -> Result<Vec<GradCheckRow>> {
    ops_in(scope)
        .into_iter()
        .map(|(op, tolerance, f)| {
            let mut row = GradCheckRow {
                op,
                seeds,
                max_rel_error: 0.0,
                tolerance,
                checked: 0,
                skipped_kinks: 0,
            };
            for seed in 0..seeds {
                let r = f(seed)?;
                row.max_rel_error = row.max_rel_error.max(r.max_rel_error);
                row.checked += r.checked;
                row.skipped_kinks += r.skipped_kinks;
            }
            Ok(row)
        })
        .collect()
}

/// Plain-text table, one line per op.
pub fn format_table(rows: &[GradCheckRow]) -> String {
    let mut out = format!(
        "{:<32} {:>6} {:>12} {:>10} {:>8} {:>6}  status\n",
        "op", "seeds", "max_rel_err", "tolerance", "checked", "kinks"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<32} {:>6} {:>12.3e} {:>10.0e} {:>8} {:>6}  {}\n",
            r.op,
            r.seeds,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped_kinks,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::Negated;

    #[test]
    fn negated_block_backward_fails_the_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = random_head(3, 4, &mut rng);
        let f = vec![0.5, 1.0, -0.2, 0.3];
        let out = identification_loss(&f, 1, &head).unwrap();
        let check = FnCheck::new(f.clone(), out.grad_input.clone(), |v| {
            Probe::smooth(identification_loss(v, 1, &head).unwrap().loss)
        });
        assert!(run(&check, 0).passes(PRIMITIVE_TOLERANCE));
        let r = run(&Negated(check), 0);
        assert!(r.max_rel_error > 0.5, "{r:?}");
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("block".parse::<Scope>().unwrap(), Scope::Block);
        assert!("blocks".parse::<Scope>().is_err());
    }
}
