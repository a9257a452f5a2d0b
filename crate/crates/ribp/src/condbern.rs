//! Conditional-Bernoulli machinery: the S_J^I recursion, marginal inclusion
//! probabilities, draw-by-draw sampling with a fixed count, tilt
//! root-solving, and the truncation-error bounds for size-ordered weights.
//!
//! Everything is computed in log space; products of hundreds of
//! probabilities underflow otherwise.

use crate::error::{Error, Result};
use crate::num::{log_add_exp, log_sum_exp};
use crate::restriction::RestrictingDistribution;
use crate::weights::{esscher_probs, TiltParameter, TruncatedWeights, WeightKind};
use rand::Rng;

/// log S_j over the first i elements, built by the two-term recursion
/// S_J^I = pi_I S_{J-1}^{I-1} + (1 - pi_I) S_J^{I-1}.
/// Row i of the result covers the prefix of length i; columns run 0..=j_max.
fn log_s_prefix(probs: &[f64], j_max: usize) -> Vec<Vec<f64>> {
    let i_max = probs.len();
    let mut s = vec![vec![f64::NEG_INFINITY; j_max + 1]; i_max + 1];
    s[0][0] = 0.0;
    for i in 1..=i_max {
        let lp = probs[i - 1].ln();
        let lq = (1.0 - probs[i - 1]).ln();
        for j in 0..=j_max {
            let keep = lq + s[i - 1][j];
            let take = if j > 0 { lp + s[i - 1][j - 1] } else { f64::NEG_INFINITY };
            s[i][j] = log_add_exp(keep, take);
        }
    }
    s
}

/// Suffix analogue: row k covers elements k..I (row I is the empty suffix).
fn log_s_suffix(probs: &[f64], j_max: usize) -> Vec<Vec<f64>> {
    let i_max = probs.len();
    let mut s = vec![vec![f64::NEG_INFINITY; j_max + 1]; i_max + 1];
    s[i_max][0] = 0.0;
    for k in (0..i_max).rev() {
        let lp = probs[k].ln();
        let lq = (1.0 - probs[k]).ln();
        for j in 0..=j_max {
            let keep = lq + s[k + 1][j];
            let take = if j > 0 { lp + s[k + 1][j - 1] } else { f64::NEG_INFINITY };
            s[k][j] = log_add_exp(keep, take);
        }
    }
    s
}

/// log of the Poisson-binomial pmf of the row sum, entries 0..=j_max.
pub fn log_poisson_binomial_pmf(probs: &[f64], j_max: usize) -> Vec<f64> {
    log_s_prefix(probs, j_max).pop().unwrap()
}

/// Cached S tables and marginal inclusion probabilities for one weight
/// vector. Immutable after construction; share read-only across threads.
#[derive(Debug, Clone)]
pub struct InclusionTable {
    fingerprint: u64,
    probs: Vec<f64>,
    j_max: usize,
    /// log S_j^I for j = 0..=j_max (the row-sum pmf at the full truncation).
    log_s_full: Vec<f64>,
    /// Suffix tables, kept for draw-by-draw sampling.
    log_s_suffix: Vec<Vec<f64>>,
    /// eta[k][j]: probability feature k is on given the row has j ones.
    eta: Vec<Vec<f64>>,
}

/// Build the S tables and the eta cache for counts up to `j_max`.
///
/// The leave-one-out tables needed for eta come from a prefix/suffix split
/// rather than I separate recursions, which keeps the cache within the
/// O(I^3) worst case (O(I^2 j_max) in practice).
pub fn build_inclusion_table(weights: &TruncatedWeights, j_max: usize) -> Result<InclusionTable> {
    let probs = weights.as_slice();
    let i_max = probs.len();
    if j_max > i_max {
        return Err(Error::CountExceedsTable { count: j_max, capacity: i_max });
    }
    let prefix = log_s_prefix(probs, j_max);
    let suffix = log_s_suffix(probs, j_max);
    let log_s_full = prefix[i_max].clone();

    let mut eta = vec![vec![0.0; j_max + 1]; i_max];
    for (k, eta_k) in eta.iter_mut().enumerate() {
        let lp = probs[k].ln();
        for j in 1..=j_max {
            // log S_{j-1} over all elements except k.
            let loo = log_sum_exp(
                (0..=(j - 1).min(k)).map(|a| prefix[k][a] + suffix[k + 1][j - 1 - a]),
            );
            eta_k[j] = (lp + loo - log_s_full[j]).exp().clamp(0.0, 1.0);
        }
    }
    Ok(InclusionTable {
        fingerprint: weights.fingerprint(),
        probs: probs.to_vec(),
        j_max,
        log_s_full,
        log_s_suffix: suffix,
        eta,
    })
}

impl InclusionTable {
    pub fn truncation(&self) -> usize {
        self.probs.len()
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, weights: &TruncatedWeights) -> bool {
        self.fingerprint == weights.fingerprint()
    }

    /// eta_{k;j}.
    pub fn eta(&self, k: usize, j: usize) -> f64 {
        self.eta[k][j]
    }

    /// log P(row sum = j) under independent Bernoulli(pi) draws.
    pub fn log_row_sum_pmf(&self, j: usize) -> f64 {
        if j <= self.j_max {
            self.log_s_full[j]
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Conditional log-probability of the pattern of a row given its count:
    /// log [ prod pi^z (1-pi)^(1-z) / S_J^I ]. This is the tilt-invariant part
    /// of the restricted pmf.
    pub fn conditional_pattern_log_pmf(&self, z: &[u8]) -> Result<f64> {
        if z.len() != self.probs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.probs.len(),
                got: z.len(),
                context: "pattern length vs table truncation",
            });
        }
        let j: usize = z.iter().map(|&v| v as usize).sum();
        if j > self.j_max {
            return Err(Error::CountExceedsTable { count: j, capacity: self.j_max });
        }
        let mut lp = -self.log_s_full[j];
        for (&zi, &p) in z.iter().zip(&self.probs) {
            lp += if zi == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        Ok(lp)
    }

    /// Sample a row with exactly `j` ones from the conditional-Bernoulli law.
    /// Walks the features once; at feature k with `r` ones still owed,
    /// P(z_k = 1) = pi_k S_{r-1}(suffix k+1) / S_r(suffix k).
    pub fn sample_row(&self, j: usize, rng: &mut impl Rng) -> Result<Vec<u8>> {
        let i_max = self.probs.len();
        if j > self.j_max {
            return Err(Error::CountExceedsTable { count: j, capacity: self.j_max });
        }
        let mut row = vec![0u8; i_max];
        let mut owed = j;
        for k in 0..i_max {
            if owed == 0 {
                break;
            }
            let remaining = i_max - k;
            let on = if owed == remaining {
                true // every remaining feature is forced on
            } else {
                let lp_on = self.probs[k].ln() + self.log_s_suffix[k + 1][owed - 1]
                    - self.log_s_suffix[k][owed];
                rng.random::<f64>() < lp_on.exp()
            };
            if on {
                row[k] = 1;
                owed -= 1;
            }
        }
        debug_assert_eq!(row.iter().map(|&v| v as usize).sum::<usize>(), j);
        Ok(row)
    }
}

/// One-off conditional-Bernoulli draw with exactly `j` ones from an
/// arbitrary probability vector (no table reuse). Probabilities are clamped
/// to the open unit interval so any j <= len is feasible.
pub fn sample_fixed_count(probs: &[f64], j: usize, rng: &mut impl Rng) -> Result<Vec<u8>> {
    let i_max = probs.len();
    if j > i_max {
        return Err(Error::CountExceedsTable { count: j, capacity: i_max });
    }
    let clamped: Vec<f64> = probs.iter().map(|p| p.clamp(1e-9, 1.0 - 1e-9)).collect();
    let suffix = log_s_suffix(&clamped, j);
    let mut row = vec![0u8; i_max];
    let mut owed = j;
    for k in 0..i_max {
        if owed == 0 {
            break;
        }
        if owed == i_max - k {
            for r in row.iter_mut().take(i_max).skip(k) {
                *r = 1;
            }
            owed = 0;
            break;
        }
        let lp_on = clamped[k].ln() + suffix[k + 1][owed - 1] - suffix[k][owed];
        if rng.random::<f64>() < lp_on.exp() {
            row[k] = 1;
            owed -= 1;
        }
    }
    debug_assert_eq!(owed, 0);
    Ok(row)
}

/// Draw a row with exactly `j` ones distributed as R-BeP(weights, delta_j).
/// The table must have been built from the same weights.
pub fn draw_by_draw_sample(
    table: &InclusionTable,
    weights: &TruncatedWeights,
    j: usize,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    if !table.matches(weights) {
        return Err(Error::invalid("inclusion table was built from different weights"));
    }
    table.sample_row(j, rng)
}

/// log f(sum z) + log BeP(z) - log S_{sum z}: the restricted Bernoulli
/// process pmf. Returns -inf when f puts no mass on the observed count.
pub fn restricted_bernoulli_log_pmf(
    z: &[u8],
    weights: &TruncatedWeights,
    f: &RestrictingDistribution,
) -> Result<f64> {
    let probs = weights.as_slice();
    if z.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            got: z.len(),
            context: "pattern length vs truncation",
        });
    }
    f.check_truncation(probs.len())?;
    let j: usize = z.iter().map(|&v| v as usize).sum();
    let lf = f.log_pmf(j);
    if lf == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let mut lp = lf - log_poisson_binomial_pmf(probs, j)[j];
    for (&zi, &p) in z.iter().zip(probs) {
        lp += if zi == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(lp)
}

/// Solve for the tilt that makes the transformed weights sum to `j`:
/// j = sum_i pi_i e^b / (pi_i e^b + 1 - pi_i). The objective is strictly
/// increasing in b, so bracketed bisection converges unconditionally.
pub fn solve_tilt(weights: &TruncatedWeights, j: usize) -> Result<TiltParameter> {
    let i_max = weights.len();
    if j == 0 || j >= i_max {
        return Err(Error::invalid(format!(
            "tilt target must satisfy 0 < J < I (got J = {j}, I = {i_max})"
        )));
    }
    let target = j as f64;
    let g = |beta: f64| -> f64 {
        esscher_probs(weights.as_slice(), beta).iter().sum::<f64>() - target
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    let mut expand = 0;
    while g(lo) > 0.0 {
        lo *= 2.0;
        expand += 1;
        if expand > 20 {
            return Err(Error::Numerical("tilt bracket expansion failed (low)".into()));
        }
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 20 {
            return Err(Error::Numerical("tilt bracket expansion failed (high)".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let beta = 0.5 * (lo + hi);
    if g(beta).abs() > 1e-9 {
        return Err(Error::Numerical(format!("tilt root residual {} too large", g(beta))));
    }
    Ok(TiltParameter(beta))
}

/// Bounds on the *untruncated* inclusion probability eta_{k;j} for
/// size-ordered (stick-breaking) weights, from the Poisson(alpha pi_I) law of
/// the ones lost to truncation. The upper bound is not clipped to 1.
pub fn inclusion_bounds(weights: &TruncatedWeights, j: usize, k: usize) -> Result<(f64, f64)> {
    if weights.kind() != WeightKind::StickBreaking {
        return Err(Error::invalid(
            "inclusion bounds are only available for stick-breaking (size-ordered) weights",
        ));
    }
    let probs = weights.as_slice();
    let i_max = probs.len();
    if k >= i_max {
        return Err(Error::DimensionMismatch {
            expected: i_max,
            got: k,
            context: "feature index vs truncation",
        });
    }
    if j > i_max {
        return Err(Error::CountExceedsTable { count: j, capacity: i_max });
    }
    if j == 0 {
        return Ok((0.0, 0.0));
    }
    let survive = (-weights.last() * weights.alpha()).exp();
    let s_full = log_poisson_binomial_pmf(probs, j)[j].exp();
    let loo: Vec<f64> = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &p)| p)
        .collect();
    let s_loo = log_poisson_binomial_pmf(&loo, j - 1)[j - 1].exp();
    let pk = probs[k];
    let lower = pk * survive * s_loo / (survive * s_full + 1.0 - survive);
    let upper = pk * (survive * s_loo + 1.0 - survive) / (survive * s_full);
    Ok((lower, upper))
}
