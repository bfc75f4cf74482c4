use super::{BatchNormParams, ConvParams, Real, Tensor};

/// How the optimizer treats a named tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable, weight-decayed.
    Weight,
    /// Trainable, no weight decay (biases, BN gamma/beta).
    NoDecay,
    /// Not trainable (BN running statistics).
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

/// Enumerates named tensors under a dotted prefix.
pub trait Parameters<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Real> Parameters<T> for ConvParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind)) {
        f(join(prefix, "weight"), &self.weight, ParamKind::Weight);
        f(join(prefix, "bias"), &self.bias, ParamKind::NoDecay);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind)) {
        f(join(prefix, "weight"), &mut self.weight, ParamKind::Weight);
        f(join(prefix, "bias"), &mut self.bias, ParamKind::NoDecay);
    }
}

impl<T: Real> Parameters<T> for BatchNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>, ParamKind)) {
        f(join(prefix, "gamma"), &self.gamma, ParamKind::NoDecay);
        f(join(prefix, "beta"), &self.beta, ParamKind::NoDecay);
        f(join(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer);
        f(join(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>, ParamKind)) {
        f(join(prefix, "gamma"), &mut self.gamma, ParamKind::NoDecay);
        f(join(prefix, "beta"), &mut self.beta, ParamKind::NoDecay);
        f(join(prefix, "running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(join(prefix, "running_var"), &mut self.running_var, ParamKind::Buffer);
    }
}
