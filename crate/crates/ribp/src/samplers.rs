//! Prior simulation: the Indian buffet predictive generator and the five
//! simulation methods compared in the benchmark harness, each instrumented
//! with proposal/rejection counts and timing.

use crate::condbern::{build_inclusion_table, solve_tilt};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::num::poisson_pmf;
use crate::restriction::RestrictingDistribution;
use crate::weights::{esscher_transform, stick_breaking_weights, TruncatedWeights};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Process CPU time in seconds (wall time is the more familiar number, but
/// CPU time is the stabler cross-machine metric).
pub fn process_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc == 0 {
        ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
    } else {
        0.0
    }
}

pub(crate) fn poisson_draw(rate: f64, rng: &mut impl Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMethod {
    CollapsedRejection,
    UncollapsedRejection,
    TiltedRejection,
    Inclusion,
    ExactRetrospective,
}

impl SimMethod {
    pub const ALL: [SimMethod; 5] = [
        SimMethod::CollapsedRejection,
        SimMethod::UncollapsedRejection,
        SimMethod::TiltedRejection,
        SimMethod::Inclusion,
        SimMethod::ExactRetrospective,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SimMethod::CollapsedRejection => "collapsed-rejection",
            SimMethod::UncollapsedRejection => "uncollapsed-rejection",
            SimMethod::TiltedRejection => "tilted-rejection",
            SimMethod::Inclusion => "inclusion",
            SimMethod::ExactRetrospective => "exact-retrospective",
        }
    }
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SimMethod::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown simulation method '{s}'")))
    }
}

/// Branch counters for the exact retrospective sampler's three-case rule.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ExactCounters {
    /// Proposals with in-truncation sum above the target (always rejected).
    pub sum_above: u64,
    /// Proposals with in-truncation sum equal to the target.
    pub sum_equal: u64,
    /// ... of which accepted by the exp(-pi_I alpha) coin.
    pub sum_equal_accepted: u64,
    /// Proposals with in-truncation sum below the target.
    pub sum_below: u64,
    /// ... of which committed to a tail extension.
    pub commits: u64,
}

/// Accounting for one simulation run. For the rejection-based methods
/// `proposals = accepted + rejections`; inclusion sampling never rejects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub method: SimMethod,
    pub accepted: u64,
    pub proposals: u64,
    pub rejections: u64,
    pub wall_seconds: f64,
    pub cpu_seconds: f64,
    /// Truncation level used (final level for the exact sampler); None for
    /// the collapsed methods, which have no truncation.
    pub truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact: Option<ExactCounters>,
}

impl SimReport {
    fn start(method: SimMethod) -> ReportTimer {
        ReportTimer { method, wall: Instant::now(), cpu: process_cpu_seconds() }
    }

    /// proposals = accepted + rejections must hold after every run.
    pub fn check_accounting(&self) -> bool {
        self.proposals == self.accepted + self.rejections
    }
}

struct ReportTimer {
    method: SimMethod,
    wall: Instant,
    cpu: f64,
}

impl ReportTimer {
    fn finish(self, accepted: u64, proposals: u64, truncation: Option<usize>) -> SimReport {
        SimReport {
            method: self.method,
            accepted,
            proposals,
            rejections: proposals - accepted,
            wall_seconds: self.wall.elapsed().as_secs_f64(),
            cpu_seconds: process_cpu_seconds() - self.cpu,
            truncation,
            exact: None,
        }
    }
}

/// Buffet counts for the collapsed (predictive) representation: m_i per seen
/// dish and the number of customers served, covering every proposal made.
#[derive(Debug, Clone, Default)]
pub struct IbpState {
    counts: Vec<u64>,
    served: u64,
}

impl IbpState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_served(&self) -> u64 {
        self.served
    }

    /// K+: number of dishes sampled at least once.
    pub fn active_columns(&self) -> usize {
        self.counts.len()
    }
}

/// Serve the next customer: existing dish i with probability m_i / n, then
/// Poisson(alpha / n) new dishes. The state absorbs the returned row.
pub fn ibp_predictive_next(state: &mut IbpState, alpha: f64, rng: &mut impl Rng) -> Vec<u8> {
    let n = state.served + 1;
    let mut row = Vec::with_capacity(state.counts.len() + 4);
    for m in state.counts.iter_mut() {
        let on = rng.random::<f64>() < *m as f64 / n as f64;
        if on {
            *m += 1;
        }
        row.push(on as u8);
    }
    let new_dishes = poisson_draw(alpha / n as f64, rng);
    for _ in 0..new_dishes {
        state.counts.push(1);
        row.push(1);
    }
    state.served = n;
    row
}

/// Propose a row from the predictive WITHOUT absorbing it into the counts.
/// Returns (row, number of new dishes).
fn ibp_predictive_peek(counts: &[u64], n: u64, alpha: f64, rng: &mut impl Rng) -> (Vec<u8>, u64) {
    let mut row = Vec::with_capacity(counts.len() + 4);
    for &m in counts {
        row.push((rng.random::<f64>() < m as f64 / n as f64) as u8);
    }
    let new_dishes = poisson_draw(alpha / n as f64, rng);
    row.extend(std::iter::repeat(1).take(new_dishes as usize));
    (row, new_dishes)
}

/// Exact sampling by sub-sampling an exchangeable IBP sequence: every
/// proposal, accepted or not, is folded into the buffet counts, which is what
/// keeps the accepted subsequence exchangeable.
pub fn sample_collapsed_rejection(
    alpha: f64,
    f: &RestrictingDistribution,
    n_rows: usize,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, SimReport)> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let timer = SimReport::start(SimMethod::CollapsedRejection);
    let mut state = IbpState::new();
    let mut matrix = FeatureMatrix::zeros(0, 0);
    let mut proposals = 0u64;
    while matrix.n_rows() < n_rows {
        let row = ibp_predictive_next(&mut state, alpha, rng);
        proposals += 1;
        if proposals % 1_000_000 == 0 {
            log::debug!(
                "collapsed rejection: {} proposals, {}/{} accepted",
                proposals,
                matrix.n_rows(),
                n_rows
            );
        }
        let j: usize = row.iter().map(|&v| v as usize).sum();
        if rng.random::<f64>() < f.pmf(j) {
            matrix.push_row(row);
        }
    }
    matrix.grow_width(state.active_columns());
    let report = timer.finish(n_rows as u64, proposals, None);
    Ok((matrix, report))
}

/// The broken variant of Section "subsets of an exchangeable sequence":
/// proposals are conditioned only on the counts of previously *accepted*
/// rows, which destroys exchangeability. Hard-coded to f = delta_1, c = 1;
/// exists as the oracle for the non-exchangeability test values.
pub fn sample_naive_nonexchangeable(
    alpha: f64,
    n_rows: usize,
    rng: &mut impl Rng,
) -> Result<FeatureMatrix> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    let mut counts: Vec<u64> = Vec::new();
    let mut matrix = FeatureMatrix::zeros(0, 0);
    for n in 1..=n_rows as u64 {
        loop {
            let (row, _) = ibp_predictive_peek(&counts, n, alpha, rng);
            let j: usize = row.iter().map(|&v| v as usize).sum();
            if j == 1 {
                for (i, &v) in row.iter().enumerate() {
                    if i < counts.len() {
                        counts[i] += v as u64;
                    } else if v == 1 {
                        counts.push(1);
                    }
                }
                matrix.push_row(row);
                break;
            }
        }
    }
    Ok(matrix)
}

/// Rejection sampling against an instantiated weight vector. Untilted:
/// propose Bernoulli(pi) entries, accept with probability f(sum). Tilted:
/// draw the target count J ~ f first, Esscher-tilt the weights so the
/// expected sum is J (cached per J), and accept only an exact hit.
pub fn sample_uncollapsed_rejection(
    weights: &TruncatedWeights,
    f: &RestrictingDistribution,
    n_rows: usize,
    rng: &mut impl Rng,
    tilted: bool,
) -> Result<(FeatureMatrix, SimReport)> {
    f.check_truncation(weights.len())?;
    let method = if tilted { SimMethod::TiltedRejection } else { SimMethod::UncollapsedRejection };
    let timer = SimReport::start(method);
    let i_max = weights.len();
    let mut matrix = FeatureMatrix::zeros(0, i_max);
    let mut proposals = 0u64;
    let mut tilt_cache: HashMap<usize, Vec<f64>> = HashMap::new();

    while matrix.n_rows() < n_rows {
        if tilted {
            let j = f.sample(rng);
            if j == 0 || j == i_max {
                // Root is at +/- infinity; the restricted law is degenerate.
                proposals += 1;
                matrix.push_row(if j == 0 { vec![0; i_max] } else { vec![1; i_max] });
                continue;
            }
            if !tilt_cache.contains_key(&j) {
                let tilt = solve_tilt(weights, j)?;
                tilt_cache.insert(j, esscher_transform(weights, tilt).as_slice().to_vec());
            }
            let probs = &tilt_cache[&j];
            loop {
                proposals += 1;
                let row: Vec<u8> =
                    probs.iter().map(|&p| (rng.random::<f64>() < p) as u8).collect();
                let sum: usize = row.iter().map(|&v| v as usize).sum();
                if sum == j {
                    matrix.push_row(row);
                    break;
                }
            }
        } else {
            proposals += 1;
            let row: Vec<u8> = weights
                .as_slice()
                .iter()
                .map(|&p| (rng.random::<f64>() < p) as u8)
                .collect();
            let sum: usize = row.iter().map(|&v| v as usize).sum();
            if rng.random::<f64>() < f.pmf(sum) {
                matrix.push_row(row);
            }
        }
    }
    let report = timer.finish(n_rows as u64, proposals, Some(i_max));
    Ok((matrix, report))
}

/// Draw-by-draw sampling through the inclusion probabilities: J ~ f, then a
/// conditional-Bernoulli row with exactly J ones. No rejections.
pub fn sample_inclusion(
    weights: &TruncatedWeights,
    f: &RestrictingDistribution,
    n_rows: usize,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, SimReport)> {
    f.check_truncation(weights.len())?;
    let timer = SimReport::start(SimMethod::Inclusion);
    let table = build_inclusion_table(weights, f.support_max())?;
    let mut matrix = FeatureMatrix::zeros(0, weights.len());
    for _ in 0..n_rows {
        let j = f.sample(rng);
        matrix.push_row(table.sample_row(j, rng)?);
    }
    let mut report = timer.finish(n_rows as u64, n_rows as u64, Some(weights.len()));
    report.rejections = 0;
    Ok((matrix, report))
}

/// Options for the exact retrospective sampler.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExactOptions {
    /// Initial stick-breaking truncation.
    pub initial_truncation: usize,
    /// Per-row cap on proposal draws plus tail-placement retries; pathological
    /// f/alpha combinations become an explicit error instead of a hang.
    pub proposal_cap: u64,
}

impl ExactOptions {
    pub fn new(initial_truncation: usize) -> Self {
        ExactOptions { initial_truncation, proposal_cap: 1_000_000 }
    }
}

/// Exact sampling with a dynamically grown stick-breaking truncation
/// (c = 1). Per proposal with target J and in-truncation sum K*:
/// K* > J rejects; K* = J accepts with probability exp(-pi_I alpha);
/// K* < J commits with probability Poisson(J - K*; pi_I alpha), after which
/// the missing ones are placed by extending the stick, one atom at a time,
/// from the tail law conditioned on containing exactly that many ones.
/// Returns the final (possibly extended) weights alongside the matrix.
pub fn sample_exact_retrospective(
    alpha: f64,
    f: &RestrictingDistribution,
    n_rows: usize,
    rng: &mut impl Rng,
    options: ExactOptions,
) -> Result<(FeatureMatrix, SimReport, TruncatedWeights)> {
    let timer = SimReport::start(SimMethod::ExactRetrospective);
    let mut weights = stick_breaking_weights(alpha, options.initial_truncation, rng)?;
    let mut counters = ExactCounters::default();
    let mut rows: Vec<Vec<u8>> = Vec::with_capacity(n_rows);
    let mut proposals = 0u64;

    for row_idx in 0..n_rows {
        let j = f.sample(rng);
        let mut budget = options.proposal_cap;
        let row = loop {
            if budget == 0 {
                return Err(Error::ProposalCapExceeded {
                    cap: options.proposal_cap,
                    row: row_idx,
                    hint: "exact retrospective sampler; raise the cap or lower J / raise alpha",
                });
            }
            budget -= 1;
            proposals += 1;
            let mut z: Vec<u8> = weights
                .as_slice()
                .iter()
                .map(|&p| (rng.random::<f64>() < p) as u8)
                .collect();
            let k_star: usize = z.iter().map(|&v| v as usize).sum();
            let lambda = alpha * weights.last();
            if k_star > j {
                counters.sum_above += 1;
                continue;
            }
            if k_star == j {
                counters.sum_equal += 1;
                if rng.random::<f64>() < (-lambda).exp() {
                    counters.sum_equal_accepted += 1;
                    break z;
                }
                continue;
            }
            counters.sum_below += 1;
            let need = j - k_star;
            if rng.random::<f64>() >= poisson_pmf(need, lambda) {
                continue;
            }
            counters.commits += 1;
            place_tail_ones(&mut weights, alpha, need, &mut z, &mut budget, rng).map_err(
                |_| Error::ProposalCapExceeded {
                    cap: options.proposal_cap,
                    row: row_idx,
                    hint: "tail placement in the exact retrospective sampler",
                },
            )?;
            break z;
        };
        rows.push(row);
    }

    let mut matrix = FeatureMatrix::zeros(0, weights.len());
    for mut row in rows {
        row.resize(weights.len(), 0);
        matrix.push_row(row);
    }
    let mut report = timer.finish(n_rows as u64, proposals, Some(weights.len()));
    report.exact = Some(counters);
    Ok((matrix, report, weights))
}

/// Extend the stick until `need` further ones are placed, sampling each new
/// (atom, entry) pair from the tail law conditioned on a total of `need`
/// ones below the current truncation.
///
/// The target density over the stick fraction u is
///   Beta(u; alpha, 1) * [pi u Po(need-1; alpha pi u)
///                        + (1 - pi u) Po(need; alpha pi u)],
/// whose bracket scales as u^need for small weights. Proposing
/// u ~ Beta(alpha + need, 1) absorbs that factor, leaving the acceptance
/// ratio e^{-alpha pi u} [1/(need-1)! + alpha (1 - pi u)/need!] over its
/// supremum — close to one — so placements cost O(1) proposals per atom
/// instead of 1/Po(need; alpha pi) under the bare stick envelope.
fn place_tail_ones(
    weights: &mut TruncatedWeights,
    alpha: f64,
    mut need: usize,
    z: &mut Vec<u8>,
    budget: &mut u64,
    rng: &mut impl Rng,
) -> std::result::Result<(), ()> {
    while need > 0 {
        let pi_cur = weights.last();
        let k = need as f64;
        let inv_km1_fact: f64 = 1.0 / (1..need).map(|t| t as f64).product::<f64>();
        let inv_k_fact = inv_km1_fact / k;
        let sup_g = inv_km1_fact + alpha * inv_k_fact;
        loop {
            if *budget == 0 {
                return Err(());
            }
            *budget -= 1;
            let u = rng.random::<f64>().powf(1.0 / (alpha + k));
            let pu = pi_cur * u;
            let g = (-alpha * pu).exp() * (inv_km1_fact + alpha * (1.0 - pu) * inv_k_fact);
            if rng.random::<f64>() < g / sup_g {
                let lam = alpha * pu;
                let w_on = pu * poisson_pmf(need - 1, lam);
                let w_off = (1.0 - pu) * poisson_pmf(need, lam);
                let on = rng.random::<f64>() < w_on / (w_on + w_off);
                weights.extend_atoms([pu]);
                z.push(on as u8);
                if on {
                    need -= 1;
                }
                break;
            }
        }
    }
    Ok(())
}
