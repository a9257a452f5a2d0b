//! Finite approximations to the beta-process directing measure, the
//! beta-prime (odds) transform, and Esscher tilting.

use crate::error::{Error, Result};
use crate::rng::RngHandle;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

/// Weights are clamped into this open interval on construction: the
/// beta-prime transform and the log-pmf need (0, 1) strictly, and deep
/// stick-breaking underflows otherwise.
pub const WEIGHT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// Size-ordered atoms from the stick-breaking construction (c = 1 only).
    StickBreaking,
    /// Unordered i.i.d. Beta(c*alpha/I, c - c*alpha/I) atoms.
    WeakLimit,
}

/// Exponential tilt parameter for the Esscher transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltParameter(pub f64);

impl TiltParameter {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() {
            Ok(TiltParameter(beta))
        } else {
            Err(Error::invalid(format!("tilt must be finite, got {beta}")))
        }
    }
}

/// A truncated weight vector (pi_1, ..., pi_I) approximating the directing
/// measure, together with the parameters it was drawn under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedWeights {
    weights: Vec<f64>,
    alpha: f64,
    c: f64,
    kind: WeightKind,
}

fn clamp_weight(p: f64) -> f64 {
    p.clamp(WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)
}

impl TruncatedWeights {
    pub fn new(weights: Vec<f64>, alpha: f64, c: f64, kind: WeightKind) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("truncation level must be >= 1"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("c must be > 0, got {c}")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let weights: Vec<f64> = weights.into_iter().map(clamp_weight).collect();
        if kind == WeightKind::StickBreaking {
            for pair in weights.windows(2) {
                if pair[1] > pair[0] {
                    return Err(Error::invalid("stick-breaking weights must be non-increasing"));
                }
            }
        }
        Ok(TruncatedWeights { weights, alpha, c, kind })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees I >= 1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn last(&self) -> f64 {
        *self.weights.last().unwrap()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Append atoms (the exact sampler's retrospective stick extension).
    /// Stick-breaking order is preserved by clamping against the current tail.
    pub fn extend_atoms(&mut self, atoms: impl IntoIterator<Item = f64>) {
        for a in atoms {
            let a = clamp_weight(a);
            let a = if self.kind == WeightKind::StickBreaking { a.min(self.last()) } else { a };
            self.weights.push(a);
        }
    }

    /// Replace every weight by a new value, keeping parameters. Used by the
    /// weights Metropolis-Hastings step.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, self.alpha, self.c, self.kind)
    }

    /// Order-independent fingerprint mixing the exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.weights {
            h ^= w.to_bits();
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

/// Odds-transformed weights w_i = pi_i / (1 - pi_i).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPrimeWeights {
    weights: Vec<f64>,
}

impl BetaPrimeWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::invalid("beta-prime weights must be positive and finite"));
        }
        Ok(BetaPrimeWeights { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Scale every weight by e^beta. The restricted conditional law is
    /// invariant under this map.
    pub fn scale(&self, tilt: TiltParameter) -> BetaPrimeWeights {
        let s = tilt.0.exp();
        BetaPrimeWeights { weights: self.weights.iter().map(|w| w * s).collect() }
    }

    /// Invert the odds transform, recovering probabilities.
    pub fn to_probabilities(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w / (1.0 + w)).collect()
    }
}

/// w_i = pi_i / (1 - pi_i), elementwise. Round-trips with
/// [`BetaPrimeWeights::to_probabilities`] to within 1e-12.
pub fn to_beta_prime(weights: &TruncatedWeights) -> BetaPrimeWeights {
    BetaPrimeWeights {
        weights: weights.as_slice().iter().map(|&p| p / (1.0 - p)).collect(),
    }
}

/// pi' = pi e^beta / (pi e^beta + 1 - pi), elementwise. beta = 0 is the
/// identity and tilts compose additively. Computed through the beta-prime
/// representation, which is the same map written in odds space.
pub fn esscher_transform(weights: &TruncatedWeights, tilt: TiltParameter) -> TruncatedWeights {
    let transformed = esscher_probs(weights.as_slice(), tilt.0);
    TruncatedWeights::new(transformed, weights.alpha(), weights.c(), weights.kind())
        .expect("esscher transform preserves weight validity")
}

pub(crate) fn esscher_probs(probs: &[f64], beta: f64) -> Vec<f64> {
    let s = beta.exp();
    probs.iter().map(|&p| p * s / (p * s + 1.0 - p)).collect()
}

/// Default truncation level: large enough that the approximate-method curves
/// track the exact sampler in the benchmark regimes.
pub fn default_truncation(alpha: f64) -> usize {
    50usize.max((10.0 * alpha).ceil() as usize)
}

/// Stick-breaking construction (c = 1 only): u_i ~ Beta(alpha, 1) i.i.d.,
/// pi_i = prod_{j<=i} u_j. Output is size-ordered. Runs in log space so deep
/// truncations do not underflow before the final clamp.
pub fn stick_breaking_weights(
    alpha: f64,
    truncation: usize,
    rng: &mut impl Rng,
) -> Result<TruncatedWeights> {
    stick_breaking_with_c(alpha, 1.0, truncation, rng)
}

pub(crate) fn stick_breaking_with_c(
    alpha: f64,
    c: f64,
    truncation: usize,
    rng: &mut impl Rng,
) -> Result<TruncatedWeights> {
    if c != 1.0 {
        return Err(Error::invalid(
            "stick-breaking construction is only available for c = 1; use the weak limit",
        ));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if truncation == 0 {
        return Err(Error::invalid("truncation level must be >= 1"));
    }
    let beta = Beta::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut log_pi = 0.0;
    let mut weights = Vec::with_capacity(truncation);
    for _ in 0..truncation {
        let u: f64 = beta.sample(rng);
        log_pi += u.max(f64::MIN_POSITIVE).ln();
        weights.push(log_pi.exp());
    }
    TruncatedWeights::new(weights, alpha, 1.0, WeightKind::StickBreaking)
}

/// Weak-limit approximation: pi_i ~ Beta(c*alpha/I, c - c*alpha/I) i.i.d.
/// Requires I > alpha so the second shape parameter is positive.
pub fn weak_limit_weights(
    alpha: f64,
    c: f64,
    truncation: usize,
    rng: &mut impl Rng,
) -> Result<TruncatedWeights> {
    let (a, b) = weak_limit_shapes(alpha, c, truncation)?;
    let beta = Beta::new(a, b).map_err(|e| Error::invalid(e.to_string()))?;
    let weights: Vec<f64> = (0..truncation).map(|_| beta.sample(rng)).collect();
    TruncatedWeights::new(weights, alpha, c, WeightKind::WeakLimit)
}

/// Shape parameters of the weak-limit beta marginal, checked for validity.
pub fn weak_limit_shapes(alpha: f64, c: f64, truncation: usize) -> Result<(f64, f64)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid(format!("c must be > 0, got {c}")));
    }
    let i = truncation as f64;
    if i <= alpha {
        return Err(Error::invalid(format!(
            "weak limit needs truncation I > alpha (got I = {truncation}, alpha = {alpha})"
        )));
    }
    Ok((c * alpha / i, c - c * alpha / i))
}

/// Convenience: draw weights of the requested kind from an [`RngHandle`].
pub fn draw_weights(
    kind: WeightKind,
    alpha: f64,
    c: f64,
    truncation: usize,
    handle: RngHandle,
) -> Result<TruncatedWeights> {
    let mut rng = handle.rng();
    match kind {
        WeightKind::StickBreaking => stick_breaking_with_c(alpha, c, truncation, &mut rng),
        WeightKind::WeakLimit => weak_limit_weights(alpha, c, truncation, &mut rng),
    }
}
