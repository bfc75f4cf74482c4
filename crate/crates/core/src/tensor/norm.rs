use super::{GradBundle, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are reported for update.
    Train,
    /// Running statistics; a fixed per-channel affine map.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNormParams<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics recorded in `cache` into the running
    /// estimates. The variance is stored unbiased.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let mom = T::lit(self.momentum);
        let keep = T::one() - mom;
        let m = cache.count;
        let correction = if m > 1 {
            T::lit(m as f64 / (m - 1) as f64)
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = keep * *rm + mom * cache.mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = keep * *rv + mom * cache.var[c] * correction;
        }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

pub fn batchnorm<T: Real>(
    input: &Tensor<T>,
    p: &BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.nchw()?;
    if c != p.channels() {
        return Err(Error::shape("batchnorm", input.dims(), p.gamma.dims()));
    }
    let hw = h * w;
    let count = n * hw;
    let x = input.data();
    let eps = T::lit(p.epsilon);
    let inv_m = T::lit(1.0 / count as f64);

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .copied()
                        .sum::<T>();
                }
                let mu = s * inv_m;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv_m;
            }
        }
        Mode::Infer => {
            mean.copy_from_slice(p.running_mean.data());
            var.copy_from_slice(p.running_var.data());
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut x_hat = Tensor::zeros(input.dims());
    let mut out = Tensor::zeros(input.dims());
    {
        let xh = x_hat.data_mut();
        let y = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let (g, be, mu, is) = (p.gamma.data()[ch], p.beta.data()[ch], mean[ch], inv_std[ch]);
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let v = (x[i] - mu) * is;
                    xh[i] = v;
                    y[i] = g * v + be;
                }
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
            mean,
            var,
            count,
        },
    ))
}

/// Backward through [`batchnorm`]. In train mode the gradient flows through
/// the batch statistics; in infer mode the map is affine. The bundle holds
/// `gamma` and `beta`.
pub fn batchnorm_backward<T: Real>(
    p: &BatchNormParams<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, GradBundle<T>)> {
    grad_out.same_dims(&cache.x_hat, "batchnorm_backward")?;
    let (n, c, h, w) = grad_out.nchw()?;
    let hw = h * w;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut grad_in = Tensor::zeros(grad_out.dims());
    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    let m = T::lit(cache.count as f64);
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        grad_gamma.data_mut()[ch] = sum_gx;
        grad_beta.data_mut()[ch] = sum_g;
        let gamma = p.gamma.data()[ch];
        let is = cache.inv_std[ch];
        let gi = grad_in.data_mut();
        match cache.mode {
            Mode::Train => {
                // d(x_hat) = gamma * g, so its sums are gamma times the above.
                let scale = gamma * is / m;
                for b in 0..n {
                    for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                        gi[i] = scale * (m * g[i] - sum_g - xh[i] * sum_gx);
                    }
                }
            }
            Mode::Infer => {
                for b in 0..n {
                    for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                        gi[i] = g[i] * gamma * is;
                    }
                }
            }
        }
    }
    let mut grads = GradBundle::new();
    grads.insert("gamma", grad_gamma);
    grads.insert("beta", grad_beta);
    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_beta() {
        let mut p = BatchNormParams::<f64>::new(2);
        p.beta = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| if (i / 4) % 2 == 0 { 1.5 } else { -4.0 });
        let (y, _) = batchnorm(&x, &p, Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let expected = if (i / 4) % 2 == 0 { 0.3 } else { -0.7 };
            assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        }
    }

    #[test]
    fn standardized_input_is_nearly_unchanged() {
        // [-1, 1] per channel has mean 0 and biased variance 1.
        let x = Tensor::new(&[2, 1, 1, 1], vec![-1.0f64, 1.0]).unwrap();
        let p = BatchNormParams::new(1);
        let (y, _) = batchnorm(&x, &p, Mode::Train).unwrap();
        let shrink = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + shrink).abs() < 1e-12);
        assert!((y.data()[1] - shrink).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(&[2, 1, 1, 1], vec![1.0f64, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        let (_, cache) = batchnorm(&x, &p, Mode::Train).unwrap();
        p.update_running(&cache);
        // mean 2, unbiased variance 2
        assert!((p.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((p.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);

        let (_, infer_cache) = batchnorm(&x, &p, Mode::Infer).unwrap();
        let before = p.clone();
        p.update_running(&infer_cache);
        assert_eq!(p, before);
    }

    #[test]
    fn infer_mode_is_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = BatchNormParams::<f32>::new(3);
        p.running_mean = Tensor::randn(&[3], 1.0, &mut rng);
        p.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
        let x = Tensor::randn(&[4, 3, 2, 2], 1.0, &mut rng);
        let (batch, _) = batchnorm(&x, &p, Mode::Infer).unwrap();
        for b in 0..4 {
            let single = Tensor::stack(&[x.index_outer(b).unwrap()]).unwrap();
            let (y, _) = batchnorm(&single, &p, Mode::Infer).unwrap();
            assert_eq!(y.data(), batch.index_outer(b).unwrap().data());
        }
    }
}
