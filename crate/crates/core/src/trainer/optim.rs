use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multitask::LossWeights;
use crate::datapipe::AugmentConfig;
use crate::tensor::{GradBundle, ParamKind, Parameters, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub total_epochs: usize,
    /// Stops early after this many iterations when set.
    pub max_iterations: Option<usize>,
    pub batch_size: usize,
    pub positive_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            warmup_epochs: 5,
            warmup_factor: 0.1,
            decay_every: 40,
            decay_factor: 0.1,
            total_epochs: 256,
            max_iterations: None,
            batch_size: 16,
            positive_fraction: 0.5,
            momentum: 0.9,
            weight_decay: 5e-4,
            loss_weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor {} outside (0,1)", self.decay_factor));
        }
        if !(self.warmup_factor > 0.0 && self.warmup_factor.is_finite()) {
            return bad(format!("warmup_factor {} must be positive", self.warmup_factor));
        }
        if self.decay_every == 0 {
            return bad("decay_every must be at least 1".into());
        }
        if self.total_epochs == 0 || self.batch_size == 0 {
            return bad("total_epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0,1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        self.augment.validate()
    }
}

/// Warmup overrides the step schedule for `epoch < warmup_epochs`; otherwise
/// the rate decays by `decay_factor` every `decay_every` absolute epochs.
///
/// Factors are applied as divisions by their reciprocals so decimal
/// constants such as 0.05 and 0.1 give exactly 0.005, 0.0005, ...
pub fn learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.base_lr / (1.0 / cfg.warmup_factor);
    }
    let k = (epoch / cfg.decay_every) as i32;
    cfg.base_lr / (1.0 / cfg.decay_factor).powi(k)
}

/// Momentum buffers keyed by trainable parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: GradBundle<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn zeros(model: &impl Parameters<T>) -> Self {
        let mut velocity = GradBundle::new();
        model.visit("", &mut |name, t, kind| {
            if kind.trainable() {
                velocity.insert(name, Tensor::zeros(t.dims()));
            }
        });
        Self { velocity }
    }
}

/// One tensor of the update: `g' = g + wd·θ`, `v ← m·v + g'`, `θ ← θ − lr·v`.
pub fn sgd_update<T: Real>(theta: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((p, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
}

/// Applies [`sgd_update`] to every trainable tensor. Weight decay skips
/// biases and normalization parameters.
pub fn sgd_step<T: Real, M: Parameters<T>>(
    model: &mut M,
    grads: &GradBundle<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut problem = None;
    let mut expected = 0;
    // Validate every entry before mutating anything.
    model.visit("", &mut |name, t, kind| {
        if !kind.trainable() || problem.is_some() {
            return;
        }
        expected += 1;
        match (grads.get(&name), state.velocity.get(&name)) {
            (Some(g), Some(v)) if g.dims() == t.dims() && v.dims() == t.dims() => {}
            (None, _) => problem = Some(format!("missing gradient for {name}")),
            (_, None) => problem = Some(format!("missing momentum buffer for {name}")),
            (Some(g), Some(_)) => {
                problem = Some(format!("gradient for {name} has dims {:?}, parameter {:?}", g.dims(), t.dims()))
            }
        }
    });
    if let Some(p) = problem {
        return Err(Error::Gradient(p));
    }
    if grads.len() != expected {
        return Err(Error::Gradient(format!(
            "{} gradients for {expected} trainable parameters",
            grads.len()
        )));
    }
    let (lr, m) = (T::lit(lr), T::lit(momentum));
    model.visit_mut("", &mut |name, t, kind| {
        if !kind.trainable() {
            return;
        }
        let wd = if kind == ParamKind::Weight { T::lit(weight_decay) } else { T::zero() };
        let g = grads.get(&name).expect("validated");
        let v = state.velocity.get_mut(&name).expect("validated");
        sgd_update(t.data_mut(), g.data(), v.data_mut(), lr, m, wd);
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BatchNormParams;
    use proptest::prelude::*;

    #[test]
    fn plain_sgd_step() {
        let mut theta = [1.0f64];
        let mut v = [0.0];
        sgd_update(&mut theta, &[0.5], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(theta[0], 0.95);
        sgd_update(&mut theta, &[0.0], &mut [0.0], 0.1, 0.0, 0.0);
        assert_eq!(theta[0], 0.95);
    }

    #[test]
    fn momentum_two_steps() {
        let mut theta = [0.0f64];
        let mut v = [0.0];
        sgd_update(&mut theta, &[1.0], &mut v, 0.1, 0.9, 0.0);
        sgd_update(&mut theta, &[1.0], &mut v, 0.1, 0.9, 0.0);
        assert!((theta[0] - -0.29).abs() < 1e-15, "{}", theta[0]);
    }

    #[test]
    fn decay_skips_no_decay_kinds() {
        let mut bn = BatchNormParams::<f64>::new(2);
        bn.beta = Tensor::full(&[2], 1.0);
        let mut state = OptimizerState::zeros(&bn);
        let mut grads = GradBundle::new();
        grads.insert("gamma", Tensor::zeros(&[2]));
        grads.insert("beta", Tensor::zeros(&[2]));
        sgd_step(&mut bn, &grads, &mut state, 0.1, 0.9, 0.5).unwrap();
        assert_eq!(bn.gamma.data(), &[1.0, 1.0]);
        assert_eq!(bn.beta.data(), &[1.0, 1.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut bn = BatchNormParams::<f64>::new(2);
        let mut state = OptimizerState::zeros(&bn);
        let mut grads = GradBundle::new();
        grads.insert("gamma", Tensor::zeros(&[2]));
        let before = bn.clone();
        assert!(matches!(
            sgd_step(&mut bn, &grads, &mut state, 0.1, 0.9, 0.0),
            Err(Error::Gradient(_))
        ));
        assert_eq!(bn.gamma, before.gamma);
        grads.insert("beta", Tensor::zeros(&[3]));
        assert!(sgd_step(&mut bn, &grads, &mut state, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(0, &cfg), 0.005);
        assert_eq!(learning_rate(4, &cfg), 0.005);
        assert_eq!(learning_rate(5, &cfg), 0.05);
        assert_eq!(learning_rate(10, &cfg), 0.05);
        assert_eq!(learning_rate(40, &cfg), 0.005);
        assert_eq!(learning_rate(80, &cfg), 0.0005);
    }

    proptest! {
        #[test]
        fn sgd_descends_a_convex_quadratic(
            a in 0.1f64..10.0,
            c in -5.0f64..5.0,
            theta0 in -5.0f64..5.0,
            frac in 0.01f64..0.99,
        ) {
            // loss = a/2 (θ − c)², curvature a, stable for lr < 2/a
            prop_assume!((theta0 - c).abs() > 1e-6);
            let lr = frac * 2.0 / a;
            let loss = |t: f64| 0.5 * a * (t - c) * (t - c);
            let mut theta = [theta0];
            let g = [a * (theta0 - c)];
            sgd_update(&mut theta, &g, &mut [0.0], lr, 0.0, 0.0);
            prop_assert!(loss(theta[0]) < loss(theta0));
        }

        #[test]
        fn schedule_non_increasing_after_warmup(e in 5usize..255) {
            let cfg = TrainConfig::default();
            prop_assert!(learning_rate(e + 1, &cfg) <= learning_rate(e, &cfg));
        }
    }
}
