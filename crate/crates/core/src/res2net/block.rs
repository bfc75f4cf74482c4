use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool3x3, avg_pool3x3_backward, batchnorm, batchnorm_backward, channel_concat, channel_split,
    conv2d, conv2d_backward, gradcheck::mask_fingerprint, join, relu, relu_backward,
    BatchNormCache, BatchNormParams, ConvParams, GradBundle, Mode, ParamKind, Parameters, Real,
    Tensor,
};

/// Shape of one block. The bottleneck channel count is always
/// `scale * width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub width: usize,
    pub scale: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Convolve the first split too instead of passing it through.
    pub first_split_conv: bool,
}

impl BlockShape {
    pub fn bottleneck_channels(&self) -> usize {
        self.scale * self.width
    }

    /// Index of the first split that goes through a 3x3 conv. A scale-1
    /// block has a single split and always convolves it.
    fn first_conv_split(&self) -> usize {
        if self.first_split_conv || self.scale == 1 {
            0
        } else {
            1
        }
    }

    fn conv_count(&self) -> usize {
        self.scale - self.first_conv_split()
    }

    fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride > 1
    }

    fn validate(&self) -> Result<()> {
        if self.scale == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "scale ({}) and width ({}) must be positive",
                self.scale, self.width
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::Config(format!("degenerate block shape {self:?}")));
        }
        Ok(())
    }
}

/// Parameters of a Res2Net bottleneck: 1x1 reduce to `n = scale * width`
/// channels, hierarchical 3x3 convs over the `scale` splits, 1x1 expand,
/// and an identity or projection shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Res2NetBlockParams<T> {
    shape: BlockShape,
    pub reduce: ConvParams<T>,
    pub reduce_bn: BatchNormParams<T>,
    pub group_convs: Vec<ConvParams<T>>,
    pub group_bns: Vec<BatchNormParams<T>>,
    pub expand: ConvParams<T>,
    pub expand_bn: BatchNormParams<T>,
    pub shortcut: Option<(ConvParams<T>, BatchNormParams<T>)>,
}

impl<T: Real> Res2NetBlockParams<T> {
    /// He-initialized block. `n = shape.scale * shape.width` by construction.
    pub fn new(shape: BlockShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let n = shape.bottleneck_channels();
        let w = shape.width;
        let reduce = ConvParams::kaiming(shape.in_channels, n, 1, 1, rng)?;
        let group_convs = (0..shape.conv_count())
            .map(|_| ConvParams::kaiming(w, w, 3, shape.stride, rng))
            .collect::<Result<Vec<_>>>()?;
        let expand = ConvParams::kaiming(n, shape.out_channels, 1, 1, rng)?;
        let shortcut = if shape.has_projection() {
            Some((
                ConvParams::kaiming(shape.in_channels, shape.out_channels, 1, shape.stride, rng)?,
                BatchNormParams::new(shape.out_channels),
            ))
        } else {
            None
        };
        Ok(Self {
            shape,
            reduce,
            reduce_bn: BatchNormParams::new(n),
            group_bns: (0..group_convs.len()).map(|_| BatchNormParams::new(w)).collect(),
            group_convs,
            expand,
            expand_bn: BatchNormParams::new(shape.out_channels),
            shortcut,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        shape: BlockShape,
        reduce: ConvParams<T>,
        reduce_bn: BatchNormParams<T>,
        group_convs: Vec<ConvParams<T>>,
        group_bns: Vec<BatchNormParams<T>>,
        expand: ConvParams<T>,
        expand_bn: BatchNormParams<T>,
        shortcut: Option<(ConvParams<T>, BatchNormParams<T>)>,
    ) -> Self {
        Self {
            shape,
            reduce,
            reduce_bn,
            group_convs,
            group_bns,
            expand,
            expand_bn,
            shortcut,
        }
    }

    pub fn shape(&self) -> BlockShape {
        self.shape
    }

    pub fn scale(&self) -> usize {
        self.shape.scale
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = input[..] else {
            return Err(Error::shape("res2net_block", input, &[0; 4]));
        };
        if c != self.shape.in_channels {
            return Err(Error::shape("res2net_block", input, &[n, self.shape.in_channels, h, w]));
        }
        let (oh, ow) = self.expand_input_hw(h, w)?;
        Ok(vec![n, self.shape.out_channels, oh, ow])
    }

    fn expand_input_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.group_convs[0].output_hw(h, w)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BlockCache<T>)> {
        self.output_dims(x.dims())?;
        let shape = self.shape;
        let stride = shape.stride;
        let first_conv = shape.first_conv_split();

        let r = conv2d(x, &self.reduce)?;
        let (r_bn, reduce_bn) = batchnorm(&r, &self.reduce_bn, mode)?;
        let z = relu(&r_bn);
        let splits = channel_split(&z, shape.scale)?;

        let mut ys: Vec<Tensor<T>> = Vec::with_capacity(shape.scale);
        let mut branches = Vec::with_capacity(self.group_convs.len());
        for (j, split) in splits.iter().enumerate() {
            if j < first_conv {
                ys.push(if stride == 1 {
                    split.clone()
                } else {
                    avg_pool3x3(split, stride)?
                });
                continue;
            }
            let k = j - first_conv;
            let conv_in = if j > 0 && stride == 1 {
                split.add(&ys[j - 1])?
            } else {
                split.clone()
            };
            let c = conv2d(&conv_in, &self.group_convs[k])?;
            let (pre, bn) = batchnorm(&c, &self.group_bns[k], mode)?;
            ys.push(relu(&pre));
            branches.push(BranchCache { conv_in, bn, pre });
        }

        let u = channel_concat(&ys)?;
        let e = conv2d(&u, &self.expand)?;
        let (e_bn, expand_bn) = batchnorm(&e, &self.expand_bn, mode)?;
        let (shortcut_out, shortcut_bn) = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv2d(x, conv)?;
                let (s_bn, cache) = batchnorm(&s, bn, mode)?;
                (s_bn, Some(cache))
            }
            None => (x.clone(), None),
        };
        let pre = e_bn.add(&shortcut_out)?;
        let out = relu(&pre);
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                reduce_bn,
                reduce_pre: r_bn,
                split_dims: splits[0].dims().to_vec(),
                branches,
                u,
                expand_bn,
                shortcut_bn,
                pre,
            },
        ))
    }

    /// Exact gradients of the block output with respect to its input and
    /// every trainable tensor (names as in [`Parameters::visit`]).
    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, GradBundle<T>)> {
        let shape = self.shape;
        let stride = shape.stride;
        let first_conv = shape.first_conv_split();
        let mut grads = GradBundle::new();

        let g_pre = relu_backward(&cache.pre, grad_out)?;

        let g_x_short = match (&self.shortcut, &cache.shortcut_bn) {
            (Some((conv, bn)), Some(bn_cache)) => {
                let (g_s, g_bn) = batchnorm_backward(bn, bn_cache, &g_pre)?;
                grads.merge_prefixed("shortcut_bn", g_bn)?;
                let (g_x, g_conv) = conv2d_backward(&cache.input, conv, &g_s)?;
                grads.merge_prefixed("shortcut", g_conv)?;
                g_x
            }
            _ => g_pre.clone(),
        };

        let (g_e, g_ebn) = batchnorm_backward(&self.expand_bn, &cache.expand_bn, &g_pre)?;
        grads.merge_prefixed("expand_bn", g_ebn)?;
        let (g_u, g_exp) = conv2d_backward(&cache.u, &self.expand, &g_e)?;
        grads.merge_prefixed("expand", g_exp)?;

        let mut g_ys = channel_split(&g_u, shape.scale)?;
        let mut g_splits: Vec<Option<Tensor<T>>> = vec![None; shape.scale];
        for j in (0..shape.scale).rev() {
            let g_y = &g_ys[j];
            if j < first_conv {
                g_splits[j] = Some(if stride == 1 {
                    g_y.clone()
                } else {
                    avg_pool3x3_backward(g_y, &cache.split_dims, stride)?
                });
                continue;
            }
            let k = j - first_conv;
            let branch = &cache.branches[k];
            let g_bn_out = relu_backward(&branch.pre, g_y)?;
            let (g_c, g_bn) = batchnorm_backward(&self.group_bns[k], &branch.bn, &g_bn_out)?;
            grads.merge_prefixed(&format!("bns.{k}"), g_bn)?;
            let (g_in, g_conv) = conv2d_backward(&branch.conv_in, &self.group_convs[k], &g_c)?;
            grads.merge_prefixed(&format!("convs.{k}"), g_conv)?;
            if j > 0 && stride == 1 {
                // conv_in = x_j + y_{j-1}
                g_ys[j - 1].add_assign(&g_in)?;
            }
            g_splits[j] = Some(g_in);
        }
        let g_splits: Vec<Tensor<T>> = g_splits.into_iter().map(|g| g.expect("every split visited")).collect();
        let g_z = channel_concat(&g_splits)?;
        let g_rbn = relu_backward(&cache.reduce_pre, &g_z)?;
        let (g_r, g_rdbn) = batchnorm_backward(&self.reduce_bn, &cache.reduce_bn, &g_rbn)?;
        grads.merge_prefixed("reduce_bn", g_rdbn)?;
        let (mut g_x, g_red) = conv2d_backward(&cache.input, &self.reduce, &g_r)?;
        grads.merge_prefixed("reduce", g_red)?;
        g_x.add_assign(&g_x_short)?;
        Ok((g_x, grads))
    }

    /// Folds train-mode batch statistics from `cache` into running stats.
    pub fn update_running_stats(&mut self, cache: &BlockCache<T>) {
        self.reduce_bn.update_running(&cache.reduce_bn);
        for (bn, branch) in self.group_bns.iter_mut().zip(&cache.branches) {
            bn.update_running(&branch.bn);
        }
        self.expand_bn.update_running(&cache.expand_bn);
        if let (Some((_, bn)), Some(c)) = (&mut self.shortcut, &cache.shortcut_bn) {
            bn.update_running(c);
        }
    }
}

impl<T: Real> Parameters<T> for Res2NetBlockParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.reduce_bn.visit(&join(prefix, "reduce_bn"), f);
        for (k, (conv, bn)) in self.group_convs.iter().zip(&self.group_bns).enumerate() {
            conv.visit(&join(prefix, &format!("convs.{k}")), f);
            bn.visit(&join(prefix, &format!("bns.{k}")), f);
        }
        self.expand.visit(&join(prefix, "expand"), f);
        self.expand_bn.visit(&join(prefix, "expand_bn"), f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "shortcut"), f);
            bn.visit(&join(prefix, "shortcut_bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.reduce_bn.visit_mut(&join(prefix, "reduce_bn"), f);
        for (k, (conv, bn)) in self.group_convs.iter_mut().zip(&mut self.group_bns).enumerate() {
            conv.visit_mut(&join(prefix, &format!("convs.{k}")), f);
            bn.visit_mut(&join(prefix, &format!("bns.{k}")), f);
        }
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.expand_bn.visit_mut(&join(prefix, "expand_bn"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_mut(&join(prefix, "shortcut"), f);
            bn.visit_mut(&join(prefix, "shortcut_bn"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct BranchCache<T> {
    conv_in: Tensor<T>,
    bn: BatchNormCache<T>,
    pre: Tensor<T>,
}

/// Forward intermediates needed by [`Res2NetBlockParams::backward`].
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    input: Tensor<T>,
    reduce_bn: BatchNormCache<T>,
    reduce_pre: Tensor<T>,
    split_dims: Vec<usize>,
    branches: Vec<BranchCache<T>>,
    u: Tensor<T>,
    expand_bn: BatchNormCache<T>,
    shortcut_bn: Option<BatchNormCache<T>>,
    pre: Tensor<T>,
}

impl<T: Real> BlockCache<T> {
    /// Fingerprint of every ReLU's active set in this block.
    pub fn relu_pattern(&self, seed: u64) -> u64 {
        let positive = |t: &Tensor<T>| t.data().iter().map(|&v| v > T::zero()).collect::<Vec<_>>();
        let mut bits = positive(&self.reduce_pre);
        for b in &self.branches {
            bits.extend(positive(&b.pre));
        }
        bits.extend(positive(&self.pre));
        mask_fingerprint(bits, seed)
    }
}
