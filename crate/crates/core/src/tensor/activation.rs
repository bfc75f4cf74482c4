use super::{Real, Tensor};
use crate::error::Result;

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive. The
/// subgradient at zero is zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.same_dims(grad_out, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.dims(), data)
}

/// Max-shifted softmax over a 1-D slice of logits.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward<T: Real>(probs: &[T], grad_out: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_out).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}
