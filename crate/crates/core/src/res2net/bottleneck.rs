use crate::error::{Error, Result};
use crate::tensor::{batchnorm, conv2d, relu, BatchNormParams, ConvParams, Mode, Real, Tensor};

use super::Res2NetBlockParams;

/// Plain ResNet bottleneck: 1x1 reduce, one 3x3 conv, 1x1 expand, plus
/// shortcut. Kept as the reference a scale-1 Res2Net block reduces to.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckParams<T> {
    pub reduce: ConvParams<T>,
    pub reduce_bn: BatchNormParams<T>,
    pub conv: ConvParams<T>,
    pub conv_bn: BatchNormParams<T>,
    pub expand: ConvParams<T>,
    pub expand_bn: BatchNormParams<T>,
    pub shortcut: Option<(ConvParams<T>, BatchNormParams<T>)>,
}

impl<T: Real> BottleneckParams<T> {
    /// Copies the weights of a scale-1 Res2Net block.
    pub fn from_scale_one(block: &Res2NetBlockParams<T>) -> Result<Self> {
        if block.scale() != 1 || block.group_convs.len() != 1 {
            return Err(Error::Config(format!(
                "bottleneck copy needs a scale-1 block, got scale {}",
                block.scale()
            )));
        }
        Ok(Self {
            reduce: block.reduce.clone(),
            reduce_bn: block.reduce_bn.clone(),
            conv: block.group_convs[0].clone(),
            conv_bn: block.group_bns[0].clone(),
            expand: block.expand.clone(),
            expand_bn: block.expand_bn.clone(),
            shortcut: block.shortcut.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let z = relu(&batchnorm(&conv2d(x, &self.reduce)?, &self.reduce_bn, mode)?.0);
        let y = relu(&batchnorm(&conv2d(&z, &self.conv)?, &self.conv_bn, mode)?.0);
        let e = batchnorm(&conv2d(&y, &self.expand)?, &self.expand_bn, mode)?.0;
        let short = match &self.shortcut {
            Some((conv, bn)) => batchnorm(&conv2d(x, conv)?, bn, mode)?.0,
            None => x.clone(),
        };
        Ok(relu(&e.add(&short)?))
    }
}
