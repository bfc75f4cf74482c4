//! Siamese multi-task objective: two identification losses (softmax
//! cross-entropy over identities) and one verification loss (binary
//! cross-entropy on the squared descriptor difference), fused by weighting
//! their gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::res2net::{Linear, Model};
use crate::tensor::{softmax, GradBundle, Mode, Parameters, Real, Tensor};

pub use crate::res2net::Descriptor;

/// Verification target. Index 0 is "same", index 1 is "different".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Same,
    Different,
}

impl PairLabel {
    pub fn of(a: usize, b: usize) -> Self {
        if a == b {
            PairLabel::Same
        } else {
            PairLabel::Different
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            PairLabel::Same => 0,
            PairLabel::Different => 1,
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::Same => "same",
            PairLabel::Different => "different",
        })
    }
}

/// Two image stacks with identity class labels and pair labels.
#[derive(Debug, Clone)]
pub struct PairBatch<T> {
    pub images_a: Tensor<T>,
    pub images_b: Tensor<T>,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub pair_labels: Vec<PairLabel>,
}

impl<T: Real> PairBatch<T> {
    pub fn new(
        images_a: Tensor<T>,
        images_b: Tensor<T>,
        labels_a: Vec<usize>,
        labels_b: Vec<usize>,
        pair_labels: Vec<PairLabel>,
    ) -> Result<Self> {
        let batch = Self {
            images_a,
            images_b,
            labels_a,
            labels_b,
            pair_labels,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.pair_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.pair_labels.len();
        if b == 0 {
            return Err(Error::Format("empty pair batch".into()));
        }
        let (na, ..) = self.images_a.nchw()?;
        self.images_a.same_dims(&self.images_b, "PairBatch")?;
        if na != b || self.labels_a.len() != b || self.labels_b.len() != b {
            return Err(Error::shape(
                "PairBatch",
                &[na, self.labels_a.len(), self.labels_b.len()],
                &[b, b, b],
            ));
        }
        for (i, ((&a, &bb), &label)) in self
            .labels_a
            .iter()
            .zip(&self.labels_b)
            .zip(&self.pair_labels)
            .enumerate()
        {
            if PairLabel::of(a, bb) != label {
                return Err(Error::PairLabel {
                    index: i,
                    label: label.to_string(),
                    a,
                    b: bb,
                });
            }
        }
        Ok(())
    }

    /// The same pairs with sides a and b exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            images_a: self.images_b.clone(),
            images_b: self.images_a.clone(),
            labels_a: self.labels_b.clone(),
            labels_b: self.labels_a.clone(),
            pair_labels: self.pair_labels.clone(),
        }
    }
}

/// Loss, prediction, and gradients of one softmax cross-entropy head.
#[derive(Debug, Clone)]
pub struct HeadLoss<T> {
    pub loss: T,
    pub probs: Vec<T>,
    pub grad_input: Vec<T>,
    pub grad_head: Linear<T>,
}

/// `-log softmax(W z + b)[target]` with gradients w.r.t. `z` and the head.
fn softmax_cross_entropy<T: Real>(z: &[T], target: usize, head: &Linear<T>) -> Result<HeadLoss<T>> {
    let k = head.out_features();
    if target >= k {
        return Err(Error::OutOfRange {
            what: "target class",
            index: target,
            len: k,
        });
    }
    let logits = head.apply(z)?;
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    // (max - l_t) >= 0 and log_sum >= 0, so the loss is never negative.
    let loss = (max - logits[target]) + log_sum;
    let probs = softmax(&logits);
    let mut grad_logits = probs.clone();
    grad_logits[target] -= T::one();
    let mut grad_head = Linear::zeros(k, head.in_features());
    let grad_input = head.backward(z, &grad_logits, &mut grad_head);
    Ok(HeadLoss {
        loss,
        probs,
        grad_input,
        grad_head,
    })
}

/// Identity cross-entropy of descriptor `f` against class `t`; `probs` is
/// the predicted identity distribution.
pub fn identification_loss<T: Real>(f: &[T], t: usize, theta_t: &Linear<T>) -> Result<HeadLoss<T>> {
    softmax_cross_entropy(f, t, theta_t)
}

/// Element-wise squared difference `(f1 - f2)^2`.
pub fn square_layer<T: Real>(f1: &[T], f2: &[T]) -> Result<Vec<T>> {
    if f1.len() != f2.len() {
        return Err(Error::shape("square_layer", &[f1.len()], &[f2.len()]));
    }
    Ok(f1.iter().zip(f2).map(|(&a, &b)| (a - b) * (a - b)).collect())
}

/// Gradients of the square layer w.r.t. `f1` and `f2` given `dL/df_s`.
pub fn square_layer_backward<T: Real>(f1: &[T], f2: &[T], grad_fs: &[T]) -> (Vec<T>, Vec<T>) {
    let two = T::lit(2.0);
    let g1: Vec<T> = f1
        .iter()
        .zip(f2)
        .zip(grad_fs)
        .map(|((&a, &b), &g)| two * (a - b) * g)
        .collect();
    let g2 = g1.iter().map(|&g| -g).collect();
    (g1, g2)
}

#[derive(Debug, Clone)]
pub struct VerificationLoss<T> {
    pub loss: T,
    /// `[q_same, q_different]`
    pub q_hat: Vec<T>,
    pub grad_f1: Vec<T>,
    pub grad_f2: Vec<T>,
    pub grad_head: Linear<T>,
}

/// Binary cross-entropy on `theta_s` applied to the square layer output.
pub fn verification_loss<T: Real>(
    f1: &[T],
    f2: &[T],
    label: PairLabel,
    theta_s: &Linear<T>,
) -> Result<VerificationLoss<T>> {
    if theta_s.out_features() != 2 {
        return Err(Error::shape("verification head", theta_s.weight.dims(), &[2, f1.len()]));
    }
    let fs = square_layer(f1, f2)?;
    let head = softmax_cross_entropy(&fs, label.class_index(), theta_s)?;
    let (grad_f1, grad_f2) = square_layer_backward(f1, f2, &head.grad_input);
    Ok(VerificationLoss {
        loss: head.loss,
        q_hat: head.probs,
        grad_f1,
        grad_f2,
        grad_head: head.grad_head,
    })
}

/// Verification head decision: `Same` when its probability exceeds that of
/// `Different`.
pub fn predict_pair<T: Real>(f1: &[T], f2: &[T], theta_s: &Linear<T>) -> Result<PairLabel> {
    let q = theta_s.apply(&square_layer(f1, f2)?)?;
    Ok(if q[PairLabel::Same.class_index()] > q[PairLabel::Different.class_index()] {
        PairLabel::Same
    } else {
        PairLabel::Different
    })
}

/// Gradient weights of the two identification losses and the verification
/// loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub id_a: f64,
    pub id_b: f64,
    pub verif: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            id_a: 0.5,
            id_b: 0.5,
            verif: 1.0,
        }
    }
}

impl LossWeights {
    pub const ID_A_ONLY: Self = Self { id_a: 1.0, id_b: 0.0, verif: 0.0 };
    pub const ID_B_ONLY: Self = Self { id_a: 0.0, id_b: 1.0, verif: 0.0 };
    pub const VERIF_ONLY: Self = Self { id_a: 0.0, id_b: 0.0, verif: 1.0 };
}

/// Batch-mean losses and per-pair predictions.
#[derive(Debug, Clone)]
pub struct LossReport<T> {
    pub id_loss_a: T,
    pub id_loss_b: T,
    pub verif_loss: T,
    /// `[B, K]`
    pub p_hat_a: Tensor<T>,
    pub p_hat_b: Tensor<T>,
    /// `[B, 2]`
    pub q_hat: Tensor<T>,
}

impl<T: Real> LossReport<T> {
    pub fn total(&self, w: &LossWeights) -> T {
        T::lit(w.id_a) * self.id_loss_a + T::lit(w.id_b) * self.id_loss_b + T::lit(w.verif) * self.verif_loss
    }
}

/// Runs both sides of the batch through the shared backbone in train mode,
/// evaluates all three losses (averaged over the batch), and returns the
/// weighted gradient sum `w_a g_idA + w_b g_idB + w_v g_ver`. The backbone
/// receives contributions from both branches. Running BN statistics are
/// updated from side a, then side b.
pub fn multitask_step<T: Real>(
    batch: &PairBatch<T>,
    model: &mut Model<T>,
    weights: &LossWeights,
) -> Result<(LossReport<T>, GradBundle<T>)> {
    batch.validate()?;
    let b = batch.len();
    let d = model.descriptor_dim();
    let k = model.num_identities();
    let inv_b = T::lit(1.0 / b as f64);
    let (w_a, w_b, w_v) = (T::lit(weights.id_a), T::lit(weights.id_b), T::lit(weights.verif));

    let (f_a, cache_a) = model.forward_features(&batch.images_a, Mode::Train)?;
    let (f_b, cache_b) = model.forward_features(&batch.images_b, Mode::Train)?;

    let mut grad_fa = Tensor::zeros(&[b, d]);
    let mut grad_fb = Tensor::zeros(&[b, d]);
    let mut id_head_grad = Linear::zeros(k, d);
    let mut ver_head_grad = Linear::zeros(2, d);
    let (mut sum_a, mut sum_b, mut sum_v) = (T::zero(), T::zero(), T::zero());
    let mut p_a = Vec::with_capacity(b * k);
    let mut p_b = Vec::with_capacity(b * k);
    let mut q = Vec::with_capacity(b * 2);

    for i in 0..b {
        let fa = &f_a.data()[i * d..(i + 1) * d];
        let fb = &f_b.data()[i * d..(i + 1) * d];
        let la = identification_loss(fa, batch.labels_a[i], &model.id_head)?;
        let lb = identification_loss(fb, batch.labels_b[i], &model.id_head)?;
        let lv = verification_loss(fa, fb, batch.pair_labels[i], &model.ver_head)?;
        sum_a += la.loss;
        sum_b += lb.loss;
        sum_v += lv.loss;
        p_a.extend_from_slice(&la.probs);
        p_b.extend_from_slice(&lb.probs);
        q.extend_from_slice(&lv.q_hat);

        let ca = w_a * inv_b;
        let cb = w_b * inv_b;
        let cv = w_v * inv_b;
        let ga = &mut grad_fa.data_mut()[i * d..(i + 1) * d];
        for j in 0..d {
            ga[j] = ca * la.grad_input[j] + cv * lv.grad_f1[j];
        }
        let gb = &mut grad_fb.data_mut()[i * d..(i + 1) * d];
        for j in 0..d {
            gb[j] = cb * lb.grad_input[j] + cv * lv.grad_f2[j];
        }
        id_head_grad.weight.axpy(ca, &la.grad_head.weight)?;
        id_head_grad.bias.axpy(ca, &la.grad_head.bias)?;
        id_head_grad.weight.axpy(cb, &lb.grad_head.weight)?;
        id_head_grad.bias.axpy(cb, &lb.grad_head.bias)?;
        ver_head_grad.weight.axpy(cv, &lv.grad_head.weight)?;
        ver_head_grad.bias.axpy(cv, &lv.grad_head.bias)?;
    }

    let mut grads = model.backward_features(&cache_a, &grad_fa)?;
    grads.add_scaled(T::one(), &model.backward_features(&cache_b, &grad_fb)?)?;
    let mut head_grads = GradBundle::new();
    id_head_grad.visit("id_head", &mut |name, t, _| head_grads.insert(name, t.clone()));
    ver_head_grad.visit("ver_head", &mut |name, t, _| head_grads.insert(name, t.clone()));
    grads.add_scaled(T::one(), &head_grads)?;

    model.update_running_stats(&cache_a);
    model.update_running_stats(&cache_b);

    let report = LossReport {
        id_loss_a: sum_a * inv_b,
        id_loss_b: sum_b * inv_b,
        verif_loss: sum_v * inv_b,
        p_hat_a: Tensor::new(&[b, k], p_a)?,
        p_hat_b: Tensor::new(&[b, k], p_b)?,
        q_hat: Tensor::new(&[b, 2], q)?,
    };
    Ok((report, grads))
}
