use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, BlockShape, Res2NetBlockParams};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, global_avg_pool,
    global_avg_pool_backward, gradcheck::mask_fingerprint, join, relu, relu_backward,
    BatchNormCache, BatchNormParams, ConvParams, GradBundle, Mode, ParamKind, Parameters, Real,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Bottleneck channels `n`; defaults to `out_channels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck: Option<usize>,
}

impl StageConfig {
    pub fn new(blocks: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            blocks,
            out_channels,
            stride,
            bottleneck: None,
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.bottleneck.unwrap_or(self.out_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    pub scale: usize,
    #[serde(default)]
    pub first_split_conv: bool,
    pub descriptor_dim: usize,
    /// Identity classes of the training set; 0 in a config file means
    /// "take it from the dataset".
    #[serde(default)]
    pub num_identities: usize,
}

impl Default for BackboneConfig {
    /// Desk-scale network: 3x3 stem to 8 channels, stages
    /// `[(1, 8, 1), (1, 16, 2)]`, scale 4, 16-d descriptor.
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 8,
            stem_stride: 1,
            stages: vec![StageConfig::new(1, 8, 1), StageConfig::new(1, 16, 2)],
            scale: 4,
            first_split_conv: false,
            descriptor_dim: 16,
            num_identities: 2,
        }
    }
}

impl BackboneConfig {
    pub fn toy(num_identities: usize) -> Self {
        Self {
            num_identities,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.stem_channels == 0 || self.stem_stride == 0 {
            return bad("stem channels and stride must be positive".into());
        }
        if self.scale == 0 {
            return bad("scale must be at least 1".into());
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.blocks == 0 || st.out_channels == 0 || st.stride == 0 {
                return bad(format!("stage {i} has a zero entry: {st:?}"));
            }
            let n = st.bottleneck_channels();
            if n == 0 || n % self.scale != 0 {
                return Err(Error::Divisibility {
                    channels: n,
                    scale: self.scale,
                });
            }
        }
        let last = self.stages.last().unwrap().out_channels;
        if self.descriptor_dim != last {
            return bad(format!(
                "descriptor_dim {} must equal the final stage's channels {last}",
                self.descriptor_dim
            ));
        }
        if self.num_identities < 2 {
            return bad(format!("need at least 2 identities, got {}", self.num_identities));
        }
        Ok(())
    }

    /// Shapes of every block in order.
    pub fn block_shapes(&self) -> Vec<BlockShape> {
        let mut shapes = Vec::new();
        let mut in_channels = self.stem_channels;
        for st in &self.stages {
            for b in 0..st.blocks {
                shapes.push(BlockShape {
                    in_channels,
                    width: st.bottleneck_channels() / self.scale,
                    scale: self.scale,
                    out_channels: st.out_channels,
                    stride: if b == 0 { st.stride } else { 1 },
                    first_split_conv: self.first_split_conv,
                });
                in_channels = st.out_channels;
            }
        }
        shapes
    }
}

/// Fully connected head on the pooled descriptor: `logits = W f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn gaussian(out: usize, inp: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: Tensor::randn(&[out, inp], std, rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn apply(&self, f: &[T]) -> Result<Vec<T>> {
        let d = self.in_features();
        if f.len() != d {
            return Err(Error::shape("linear", &[f.len()], self.weight.dims()));
        }
        Ok(self
            .weight
            .data()
            .chunks_exact(d)
            .zip(self.bias.data())
            .map(|(row, &b)| b + row.iter().zip(f).map(|(&w, &x)| w * x).sum::<T>())
            .collect())
    }

    /// Returns `W^T g` and accumulates `g f^T`, `g` into `grads`.
    pub fn backward(&self, f: &[T], grad_logits: &[T], grads: &mut Linear<T>) -> Vec<T> {
        let d = self.in_features();
        let mut grad_f = vec![T::zero(); d];
        for (o, &g) in grad_logits.iter().enumerate() {
            let row = &self.weight.data()[o * d..(o + 1) * d];
            let grow = &mut grads.weight.data_mut()[o * d..(o + 1) * d];
            for i in 0..d {
                grad_f[i] += row[i] * g;
                grow[i] += g * f[i];
            }
            grads.bias.data_mut()[o] += g;
        }
        grad_f
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind)) {
        f(join(prefix, "weight"), &self.weight, ParamKind::Weight);
        f(join(prefix, "bias"), &self.bias, ParamKind::NoDecay);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind)) {
        f(join(prefix, "weight"), &mut self.weight, ParamKind::Weight);
        f(join(prefix, "bias"), &mut self.bias, ParamKind::NoDecay);
    }
}

/// Pooled feature vector of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor<T> {
    values: Tensor<T>,
}

impl<T: Real> Descriptor<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Format("descriptor must have positive dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("descriptor has non-finite entries".into()));
        }
        let d = values.len();
        Ok(Self {
            values: Tensor::new(&[d], values)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        self.values.data()
    }

    pub fn norm(&self) -> T {
        self.values().iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Shared backbone plus the identification head (`K x d`) and the
/// verification head (`2 x d`). One parameter set serves both siamese
/// branches.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: BackboneConfig,
    pub stem: ConvParams<T>,
    pub stem_bn: BatchNormParams<T>,
    pub blocks: Vec<Res2NetBlockParams<T>>,
    pub id_head: Linear<T>,
    pub ver_head: Linear<T>,
}

pub const HEAD_INIT_STD: f64 = 0.001;

/// Builds and initializes a model: He-normal convs, BN gamma 1 / beta 0,
/// head weights with std 0.001 and zero biases. Deterministic given `rng`.
pub fn build_backbone<T: Real>(cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    cfg.validate()?;
    let stem = ConvParams::kaiming(cfg.in_channels, cfg.stem_channels, 3, cfg.stem_stride, rng)?;
    let blocks = cfg
        .block_shapes()
        .into_iter()
        .map(|shape| Res2NetBlockParams::new(shape, rng))
        .collect::<Result<Vec<_>>>()?;
    let d = cfg.descriptor_dim;
    Ok(Model {
        config: cfg.clone(),
        stem,
        stem_bn: BatchNormParams::new(cfg.stem_channels),
        blocks,
        id_head: Linear::gaussian(cfg.num_identities, d, HEAD_INIT_STD, rng),
        ver_head: Linear::gaussian(2, d, HEAD_INIT_STD, rng),
    })
}

/// Forward intermediates of [`Model::forward_features`].
#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    images: Tensor<T>,
    stem_bn: BatchNormCache<T>,
    stem_pre: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    pooled_dims: Vec<usize>,
}

impl<T: Real> BackboneCache<T> {
    pub fn relu_pattern(&self) -> u64 {
        let stem = self.stem_pre.data().iter().map(|&v| v > T::zero());
        let mut h = mask_fingerprint(stem, 0);
        for b in &self.blocks {
            h = b.relu_pattern(h);
        }
        h
    }
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.descriptor_dim
    }

    pub fn num_identities(&self) -> usize {
        self.config.num_identities
    }

    /// Images `[N, C, H, W]` to descriptors `[N, d]`.
    pub fn forward_features(
        &self,
        images: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, BackboneCache<T>)> {
        let (_, c, _, _) = images.nchw()?;
        if c != self.config.in_channels {
            return Err(Error::shape("extract_descriptor", images.dims(), self.stem.weight.dims()));
        }
        let s = conv2d(images, &self.stem)?;
        let (stem_pre, stem_bn) = batchnorm(&s, &self.stem_bn, mode)?;
        let mut x = relu(&stem_pre);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, mode)?;
            caches.push(cache);
            x = y;
        }
        let pooled_dims = x.dims().to_vec();
        let f = global_avg_pool(&x)?;
        Ok((
            f,
            BackboneCache {
                images: images.clone(),
                stem_bn,
                stem_pre,
                blocks: caches,
                pooled_dims,
            },
        ))
    }

    /// Backbone gradients given `dL/df` of shape `[N, d]`.
    pub fn backward_features(
        &self,
        cache: &BackboneCache<T>,
        grad_f: &Tensor<T>,
    ) -> Result<GradBundle<T>> {
        let mut grads = GradBundle::new();
        let mut g = global_avg_pool_backward(grad_f, &cache.pooled_dims)?;
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (g_in, g_block) = block.backward(bc, &g)?;
            grads.merge_prefixed(&format!("blocks.{i}"), g_block)?;
            g = g_in;
        }
        let g = relu_backward(&cache.stem_pre, &g)?;
        let (g, g_bn) = batchnorm_backward(&self.stem_bn, &cache.stem_bn, &g)?;
        grads.merge_prefixed("stem_bn", g_bn)?;
        let (_, g_stem) = conv2d_backward(&cache.images, &self.stem, &g)?;
        grads.merge_prefixed("stem", g_stem)?;
        Ok(grads)
    }

    pub fn update_running_stats(&mut self, cache: &BackboneCache<T>) {
        self.stem_bn.update_running(&cache.stem_bn);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.update_running_stats(bc);
        }
    }

    /// Inference-mode descriptor of a single `[C, H, W]` image.
    pub fn extract_descriptor(&self, image: &Tensor<T>) -> Result<Descriptor<T>> {
        if image.dims().len() != 3 {
            return Err(Error::shape("extract_descriptor", image.dims(), &[self.config.in_channels, 0, 0]));
        }
        let batch = Tensor::stack(std::slice::from_ref(image))?;
        let (f, _) = self.forward_features(&batch, Mode::Infer)?;
        Descriptor::new(f.into_data())
    }

    /// Inference-mode descriptors of `[N, C, H, W]` images.
    pub fn extract_batch(&self, images: &Tensor<T>) -> Result<Vec<Descriptor<T>>> {
        let (f, _) = self.forward_features(images, Mode::Infer)?;
        f.data()
            .chunks_exact(self.descriptor_dim())
            .map(|row| Descriptor::new(row.to_vec()))
            .collect()
    }

    /// Names and dims of trainable tensors, in lexicographic order.
    pub fn trainable_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, kind| {
            if kind.trainable() {
                out.push((name, t.dims().to_vec()));
            }
        });
        out.sort();
        out
    }

    /// Same architecture with every tensor converted to `U`.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out: Model<U> = Model {
            config: self.config.clone(),
            stem: cast_conv(&self.stem),
            stem_bn: cast_bn(&self.stem_bn),
            blocks: Vec::new(),
            id_head: Linear {
                weight: self.id_head.weight.cast(),
                bias: self.id_head.bias.cast(),
            },
            ver_head: Linear {
                weight: self.ver_head.weight.cast(),
                bias: self.ver_head.bias.cast(),
            },
        };
        for b in &self.blocks {
            out.blocks.push(b.cast());
        }
        out
    }
}

fn cast_conv<T: Real, U: Real>(c: &ConvParams<T>) -> ConvParams<U> {
    ConvParams {
        weight: c.weight.cast(),
        bias: c.bias.cast(),
        stride: c.stride,
        padding: c.padding,
    }
}

fn cast_bn<T: Real, U: Real>(b: &BatchNormParams<T>) -> BatchNormParams<U> {
    BatchNormParams {
        gamma: b.gamma.cast(),
        beta: b.beta.cast(),
        running_mean: b.running_mean.cast(),
        running_var: b.running_var.cast(),
        epsilon: b.epsilon,
        momentum: b.momentum,
    }
}

impl<T: Real> Res2NetBlockParams<T> {
    pub fn cast<U: Real>(&self) -> Res2NetBlockParams<U> {
        Res2NetBlockParams::from_parts(
            self.shape(),
            cast_conv(&self.reduce),
            cast_bn(&self.reduce_bn),
            self.group_convs.iter().map(cast_conv).collect(),
            self.group_bns.iter().map(cast_bn).collect(),
            cast_conv(&self.expand),
            cast_bn(&self.expand_bn),
            self.shortcut.as_ref().map(|(c, b)| (cast_conv(c), cast_bn(b))),
        )
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.id_head.visit(&join(prefix, "id_head"), f);
        self.ver_head.visit(&join(prefix, "ver_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.id_head.visit_mut(&join(prefix, "id_head"), f);
        self.ver_head.visit_mut(&join(prefix, "ver_head"), f);
    }
}
