//! Central finite-difference verification of hand-written backward passes.
//!
//! An op under test is reduced to a scalar objective of a flat parameter
//! vector. Each sampled coordinate is perturbed by `±eps` and the numeric
//! slope is compared with the analytic gradient. Piecewise-linear ops
//! (ReLU) report an activation-pattern fingerprint; coordinates whose
//! perturbation flips the pattern straddle a kink, where the function has
//! no derivative, and are skipped and counted rather than compared.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare absolutely at this scale.
pub const DENOM_FLOOR: f64 = 1e-3;

/// Objective value and activation-pattern fingerprint at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub pattern: u64,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Self { value, pattern: 0 }
    }
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Checkable {
    /// Point at which the gradient is checked.
    fn point(&self) -> Vec<f64>;
    fn evaluate(&self, x: &[f64]) -> Probe;
    /// Analytic gradient at [`Checkable::point`].
    fn gradient(&self) -> Vec<f64>;
}

/// Wraps a checkable op and flips the sign of its analytic gradient. Used as
/// a negative control: the checker must reject it.
pub struct Negated<C>(pub C);

impl<C: Checkable> Checkable for Negated<C> {
    fn point(&self) -> Vec<f64> {
        self.0.point()
    }

    fn evaluate(&self, x: &[f64]) -> Probe {
        self.0.evaluate(x)
    }

    fn gradient(&self) -> Vec<f64> {
        self.0.gradient().into_iter().map(|g| -g).collect()
    }
}

/// Which coordinates to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

pub fn finite_diff_check(op: &dyn Checkable, eps: f64, coords: Coords) -> GradCheckReport {
    let x0 = op.point();
    let grad = op.gradient();
    assert_eq!(x0.len(), grad.len(), "gradient length must match the point");
    let base_pattern = op.evaluate(&x0).pattern;
    let indices: Vec<usize> = match coords {
        Coords::All => (0..x0.len()).collect(),
        Coords::Sample { count, seed } if count < x0.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, x0.len(), count).into_vec();
            idx.sort_unstable();
            idx
        }
        Coords::Sample { .. } => (0..x0.len()).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut x = x0.clone();
    for i in indices {
        x[i] = x0[i] + eps;
        let plus = op.evaluate(&x);
        x[i] = x0[i] - eps;
        let minus = op.evaluate(&x);
        x[i] = x0[i];
        if plus.pattern != base_pattern || minus.pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let err = relative_error(grad[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_coord.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_coord = Some(i);
        }
    }
    report
}

/// Order-sensitive FNV-1a fingerprint of a sign mask.
pub fn mask_fingerprint<I: IntoIterator<Item = bool>>(mask: I, seed: u64) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for bit in mask {
        h ^= bit as u64 + 1;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
