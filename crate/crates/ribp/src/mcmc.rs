//! Posterior inference by MCMC: uncollapsed Gibbs/Metropolis-Hastings over
//! (Z, pi, A) with a weak-limit weight representation, and the collapsed
//! auxiliary-variable sampler that reintroduces discarded predictive rows.

use crate::condbern::{build_inclusion_table, InclusionTable};
use crate::error::{Error, Result};
use crate::lingauss::{log_likelihood_collapsed, posterior_a, sample_a, LinearGaussianModel};
use crate::matrix::FeatureMatrix;
use crate::num::{ln_beta_pdf, sigmoid};
use crate::restriction::RestrictingDistribution;
use crate::rng::RngHandle;
use crate::samplers::poisson_draw;
use crate::weights::{weak_limit_shapes, weak_limit_weights, TruncatedWeights};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Full state of one uncollapsed chain. The inclusion table is rebuilt once
/// per accepted weights move and shared by every row update in the sweep.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub z: FeatureMatrix,
    pub weights: TruncatedWeights,
    pub model: LinearGaussianModel,
    /// Per-row restricting distributions; None is the unrestricted IBP.
    pub f_rows: Option<Vec<RestrictingDistribution>>,
    pub iteration: u64,
    table: Option<InclusionTable>,
    resid: DMatrix<f64>,
    a_sq: Vec<f64>,
    gram_a: DMatrix<f64>,
    flat_likelihood: bool,
}

impl GibbsState {
    /// Initialize at prior weights with Z drawn by inclusion sampling (so the
    /// f constraints hold from iteration zero) and A from its conditional.
    pub fn init(
        x: DMatrix<f64>,
        f_rows: Option<Vec<RestrictingDistribution>>,
        alpha: f64,
        c: f64,
        truncation: usize,
        sigma_a2: f64,
        sigma_n2: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n_rows = x.nrows();
        if let Some(fs) = &f_rows {
            if fs.len() != n_rows {
                return Err(Error::DimensionMismatch {
                    expected: n_rows,
                    got: fs.len(),
                    context: "per-row restrictions vs data rows",
                });
            }
            for f in fs {
                f.check_truncation(truncation)?;
            }
        }
        let weights = weak_limit_weights(alpha, c, truncation, rng)?;
        let j_max = f_rows
            .as_ref()
            .map(|fs| fs.iter().map(|f| f.support_max()).max().unwrap_or(0))
            .unwrap_or(0);
        let table = if f_rows.is_some() {
            Some(build_inclusion_table(&weights, j_max)?)
        } else {
            None
        };
        let mut z = FeatureMatrix::zeros(n_rows, truncation);
        match (&f_rows, &table) {
            (Some(fs), Some(tab)) => {
                for n in 0..n_rows {
                    let j = fs[n].sample(rng);
                    z.set_row(n, tab.sample_row(j, rng)?)?;
                }
            }
            _ => {
                for n in 0..n_rows {
                    for (i, &p) in weights.as_slice().iter().enumerate() {
                        if rng.random::<f64>() < p {
                            z.set(n, i, 1);
                        }
                    }
                }
            }
        }
        let post = posterior_a(&z, &x, sigma_a2, sigma_n2)?;
        let a = sample_a(&post, rng)?;
        let model = LinearGaussianModel::new(a, sigma_a2, sigma_n2, x)?;
        let mut state = GibbsState {
            z,
            weights,
            model,
            f_rows,
            iteration: 0,
            table,
            resid: DMatrix::zeros(0, 0),
            a_sq: Vec::new(),
            gram_a: DMatrix::zeros(0, 0),
            flat_likelihood: false,
        };
        state.refresh_a_caches();
        state.refresh_residuals();
        Ok(state)
    }

    /// Draw every variable from the generative model: weights from the weak
    /// limit, Z from the restricted prior, A from its normal prior, X from
    /// the likelihood. This is the forward leg of a getting-it-right run.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_draw(
        n_rows: usize,
        dims: usize,
        f_rows: Option<Vec<RestrictingDistribution>>,
        alpha: f64,
        c: f64,
        truncation: usize,
        sigma_a2: f64,
        sigma_n2: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut state = Self::init(
            DMatrix::zeros(n_rows, dims),
            f_rows,
            alpha,
            c,
            truncation,
            sigma_a2,
            sigma_n2,
            rng,
        )?;
        state.model.a =
            DMatrix::from_fn(truncation, dims, |_, _| {
                let g: f64 = StandardNormal.sample(rng);
                sigma_a2.sqrt() * g
            });
        state.refresh_a_caches();
        resample_data(&mut state, rng);
        Ok(state)
    }

    /// Ignore the likelihood in every Z/weights update (prior-only sweeps for
    /// stationarity tests).
    pub fn set_flat_likelihood(&mut self, flat: bool) {
        self.flat_likelihood = flat;
    }

    /// Overwrite one row and keep the residual cache consistent.
    pub fn force_row(&mut self, n: usize, row: Vec<u8>) -> Result<()> {
        self.z.set_row(n, row)?;
        let d = self.model.x.ncols();
        for c in 0..d {
            let mut mean = 0.0;
            for i in 0..self.z.width() {
                if self.z.get(n, i) == 1 {
                    mean += self.model.a[(i, c)];
                }
            }
            self.resid[(n, c)] = self.model.x[(n, c)] - mean;
        }
        Ok(())
    }

    pub fn table(&self) -> Option<&InclusionTable> {
        self.table.as_ref()
    }

    pub fn truncation(&self) -> usize {
        self.weights.len()
    }

    fn restricted(&self) -> bool {
        self.f_rows.is_some()
    }

    pub fn refresh_a_caches(&mut self) {
        let a = &self.model.a;
        self.a_sq = (0..a.nrows()).map(|i| a.row(i).iter().map(|v| v * v).sum()).collect();
        self.gram_a = a * a.transpose();
    }

    pub fn refresh_residuals(&mut self) {
        self.resid = &self.model.x - self.z.to_dmatrix() * &self.model.a;
    }

    fn resid_dot_a(&self, n: usize, i: usize) -> f64 {
        let d = self.model.x.ncols();
        (0..d).map(|c| self.resid[(n, c)] * self.model.a[(i, c)]).sum()
    }

    /// Log-likelihood difference for setting z_ni = 1 versus 0, holding the
    /// rest of the row fixed.
    fn entry_loglik_gain(&self, n: usize, i: usize) -> f64 {
        if self.flat_likelihood {
            return 0.0;
        }
        // Residual with z_ni = 0.
        let r0_dot = if self.z.get(n, i) == 1 {
            self.resid_dot_a(n, i) + self.gram_a[(i, i)]
        } else {
            self.resid_dot_a(n, i)
        };
        (2.0 * r0_dot - self.a_sq[i]) / (2.0 * self.model.sigma_n2)
    }

    fn apply_entry(&mut self, n: usize, i: usize, value: u8) {
        let old = self.z.get(n, i);
        if old == value {
            return;
        }
        self.z.set(n, i, value);
        let d = self.model.x.ncols();
        let sign = if value == 1 { -1.0 } else { 1.0 };
        for c in 0..d {
            self.resid[(n, c)] += sign * self.model.a[(i, c)];
        }
    }

    fn row_loglik(&self, n: usize, row: &[u8]) -> f64 {
        if self.flat_likelihood {
            return 0.0;
        }
        let d = self.model.x.ncols();
        let mut ll = 0.0;
        for c in 0..d {
            let mut mean = 0.0;
            for (i, &v) in row.iter().enumerate() {
                if v == 1 {
                    mean += self.model.a[(i, c)];
                }
            }
            let r = self.model.x[(n, c)] - mean;
            ll -= r * r;
        }
        ll / (2.0 * self.model.sigma_n2)
    }

    fn current_row_loglik(&self, n: usize) -> f64 {
        if self.flat_likelihood {
            return 0.0;
        }
        let d = self.model.x.ncols();
        -(0..d).map(|c| self.resid[(n, c)].powi(2)).sum::<f64>() / (2.0 * self.model.sigma_n2)
    }
}

/// Exact conditional P(z_ni = 1 | everything else) for a non-degenerate f_n:
/// odds(1:0) = [f(k+1)/f(k)] * [pi_i/(1-pi_i)] * [S_k^I/S_{k+1}^I] * LR,
/// with k the count of ones elsewhere in the row.
pub fn gibbs_entry_conditional(state: &GibbsState, n: usize, i: usize) -> Result<f64> {
    let k = state.z.row_count(n) - state.z.get(n, i) as usize;
    let (lf0, lf1) = {
        let f = &state
            .f_rows
            .as_ref()
            .ok_or_else(|| Error::invalid("entry update needs a restricted model"))?[n];
        if f.as_point_mass().is_some() {
            return Err(Error::invalid(
                "entry update undefined for point-mass f; use the location update",
            ));
        }
        (f.log_pmf(k), f.log_pmf(k + 1))
    };
    if lf1 == f64::NEG_INFINITY {
        // Covers the (unreachable from a valid state) doubly-degenerate case.
        return Ok(0.0);
    }
    if lf0 == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    let table = state.table.as_ref().expect("restricted state has a table");
    let pi = state.weights.as_slice()[i];
    let log_odds = lf1 - lf0 + pi.ln() - (1.0 - pi).ln() + table.log_row_sum_pmf(k)
        - table.log_row_sum_pmf(k + 1)
        + state.entry_loglik_gain(n, i);
    Ok(sigmoid(log_odds))
}

/// Gibbs-resample a single entry z_ni from its exact two-case conditional.
/// Requires a non-degenerate f_n; point masses cannot move a single entry.
pub fn gibbs_entry_update(
    state: &mut GibbsState,
    n: usize,
    i: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let p1 = gibbs_entry_conditional(state, n, i)?;
    let value = (rng.random::<f64>() < p1) as u8;
    state.apply_entry(n, i, value);
    Ok(())
}

/// Unrestricted analogue: odds(1:0) = [pi/(1-pi)] * LR.
pub fn gibbs_entry_update_unrestricted(
    state: &mut GibbsState,
    n: usize,
    i: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let pi = state.weights.as_slice()[i];
    let log_odds = pi.ln() - (1.0 - pi).ln() + state.entry_loglik_gain(n, i);
    let value = (rng.random::<f64>() < sigmoid(log_odds)) as u8;
    state.apply_entry(n, i, value);
    Ok(())
}

/// Candidate columns and conditional probabilities for relocating the
/// slot-th non-zero entry of a point-mass row: the current column plus every
/// empty column, with probability proportional to the beta-prime weight w_i
/// times the likelihood. The row count never changes.
pub fn gibbs_location_distribution(
    state: &GibbsState,
    n: usize,
    slot: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let f = &state
        .f_rows
        .as_ref()
        .ok_or_else(|| Error::invalid("location update needs a restricted model"))?[n];
    if f.as_point_mass().is_none() {
        return Err(Error::invalid("location update requires a point-mass f"));
    }
    let ones: Vec<usize> = (0..state.z.width()).filter(|&i| state.z.get(n, i) == 1).collect();
    if slot >= ones.len() {
        return Err(Error::invalid(format!(
            "row {n} has {} ones, slot {slot} out of range",
            ones.len()
        )));
    }
    Ok(location_conditional_for_column(state, n, ones[slot]))
}

fn location_conditional_for_column(
    state: &GibbsState,
    n: usize,
    here: usize,
) -> (Vec<usize>, Vec<f64>) {
    let probs = state.weights.as_slice();
    let sigma_n2 = state.model.sigma_n2;
    let r_dot_here = if state.flat_likelihood { 0.0 } else { state.resid_dot_a(n, here) };
    let mut candidates: Vec<usize> = vec![here];
    candidates.extend((0..state.z.width()).filter(|&i| state.z.get(n, i) == 0));
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&i| {
            let w = probs[i].ln() - (1.0 - probs[i]).ln();
            if i == here || state.flat_likelihood {
                return w;
            }
            // ||r + A_here - A_i||^2 - ||r||^2, via cached dot products.
            let delta_sq = 2.0 * r_dot_here - 2.0 * state.resid_dot_a(n, i)
                + state.a_sq[here]
                + state.a_sq[i]
                - 2.0 * state.gram_a[(here, i)];
            w - delta_sq / (2.0 * sigma_n2)
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs_out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = probs_out.iter().sum();
    for p in &mut probs_out {
        *p /= total;
    }
    (candidates, probs_out)
}

fn sample_location(
    state: &GibbsState,
    n: usize,
    here: usize,
    rng: &mut impl Rng,
) -> usize {
    let (candidates, probs) = location_conditional_for_column(state, n, here);
    let mut u = rng.random::<f64>();
    let mut chosen = here;
    for (idx, &c) in candidates.iter().enumerate() {
        u -= probs[idx];
        if u <= 0.0 {
            chosen = c;
            break;
        }
    }
    chosen
}

/// One exact conditional draw for the location of the slot-th non-zero
/// entry. A single call resamples from the correct conditional; repeated
/// scans must go through [`gibbs_location_row_sweep`], which randomizes the
/// label-to-one assignment (re-deriving "the slot-th one" by sorting after
/// every move makes the updated coordinate state-dependent and is not
/// stationary).
pub fn gibbs_location_update(
    state: &mut GibbsState,
    n: usize,
    slot: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    if state.z.row_count(n) == state.z.width() {
        return Ok(()); // J = I: every column occupied, no move possible
    }
    let (candidates, _) = gibbs_location_distribution(state, n, slot)?;
    let here = candidates[0];
    let chosen = sample_location(state, n, here, rng);
    if chosen != here {
        state.apply_entry(n, here, 0);
        state.apply_entry(n, chosen, 1);
    }
    Ok(())
}

/// Resample every non-zero location of a point-mass row once: the ones are
/// labelled by a uniformly random order, then each label's location is
/// Gibbs-updated in turn with the label moving along.
pub fn gibbs_location_row_sweep(
    state: &mut GibbsState,
    n: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    {
        let f = &state
            .f_rows
            .as_ref()
            .ok_or_else(|| Error::invalid("location update needs a restricted model"))?[n];
        if f.as_point_mass().is_none() {
            return Err(Error::invalid("location update requires a point-mass f"));
        }
    }
    let width = state.z.width();
    let count = state.z.row_count(n);
    if count == 0 || count == width {
        return Ok(());
    }
    let mut locations: Vec<usize> = (0..width).filter(|&i| state.z.get(n, i) == 1).collect();
    for t in (1..locations.len()).rev() {
        locations.swap(t, rng.random_range(0..=t));
    }
    for slot in 0..locations.len() {
        let here = locations[slot];
        let chosen = sample_location(state, n, here, rng);
        if chosen != here {
            state.apply_entry(n, here, 0);
            state.apply_entry(n, chosen, 1);
            locations[slot] = chosen;
        }
    }
    Ok(())
}

/// Whole-row Metropolis-Hastings move with the prior given weights as the
/// proposal (J ~ f_n, then a conditional-Bernoulli row); the prior terms
/// cancel and only the likelihood ratio remains. Returns whether the
/// proposal was accepted.
pub fn mh_row_proposal(state: &mut GibbsState, n: usize, rng: &mut impl Rng) -> Result<bool> {
    let proposal: Vec<u8> = match (&state.f_rows, &state.table) {
        (Some(fs), Some(table)) => {
            let j = fs[n].sample(rng);
            table.sample_row(j, rng)?
        }
        _ => state
            .weights
            .as_slice()
            .iter()
            .map(|&p| (rng.random::<f64>() < p) as u8)
            .collect(),
    };
    let gain = state.row_loglik(n, &proposal) - state.current_row_loglik(n);
    let accept = gain >= 0.0 || rng.random::<f64>() < gain.exp();
    if accept {
        commit_row(state, n, proposal);
    }
    Ok(accept)
}

fn commit_row(state: &mut GibbsState, n: usize, row: Vec<u8>) {
    let d = state.model.x.ncols();
    let mut resid_row = vec![0.0; d];
    for c in 0..d {
        let mut mean = 0.0;
        for (i, &v) in row.iter().enumerate() {
            if v == 1 {
                mean += state.model.a[(i, c)];
            }
        }
        resid_row[c] = state.model.x[(n, c)] - mean;
    }
    state.z.set_row(n, row).expect("row width fixed");
    for (c, r) in resid_row.into_iter().enumerate() {
        state.resid[(n, c)] = r;
    }
}

/// Log of the restricted pattern likelihood P(Z | pi, {J_n}) given a table
/// built from pi: the Bernoulli product over entries minus the S_{J_n}
/// normalizers. The f(J_n) factors are constant in pi and omitted.
fn pattern_log_likelihood(z: &FeatureMatrix, probs: &[f64], table: &InclusionTable) -> f64 {
    let m = z.column_counts();
    let n_rows = z.n_rows() as f64;
    let mut ll = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        ll += m[i] as f64 * p.ln() + (n_rows - m[i] as f64) * (1.0 - p).ln();
    }
    for &j in z.row_counts() {
        ll -= table.log_row_sum_pmf(j);
    }
    ll
}

/// Conjugate weak-limit weights draw for the *unrestricted* model: the beta
/// prior and the Bernoulli column counts are conjugate, so this is an exact
/// Gibbs step.
pub fn conjugate_weights_given_z(
    weights: &TruncatedWeights,
    z: &FeatureMatrix,
    rng: &mut impl Rng,
) -> Result<TruncatedWeights> {
    let n_rows = z.n_rows() as f64;
    let i_max = weights.len();
    let (prior_a, prior_b) = weak_limit_shapes(weights.alpha(), weights.c(), i_max)?;
    let mut new_w = Vec::with_capacity(i_max);
    for &mi in &z.column_counts() {
        let dist = Beta::new(prior_a + mi as f64, prior_b + n_rows - mi as f64)
            .map_err(|e| Error::invalid(e.to_string()))?;
        new_w.push(dist.sample(rng));
    }
    weights.with_weights(new_w)
}

/// Restricted weights move given a fixed Z. The independence proposal is the
/// unrestricted weak-limit posterior (prior shapes plus column counts; at
/// N = 0 it equals the prior and the ratio is exactly one); the acceptance
/// ratio combines the weak-limit prior, the restricted pattern likelihood
/// through the S tables, and the proposal densities. Returns the accepted
/// (weights, table) or None on rejection.
pub fn propose_weights_given_z(
    weights: &TruncatedWeights,
    table: &InclusionTable,
    z: &FeatureMatrix,
    rng: &mut impl Rng,
) -> Result<Option<(TruncatedWeights, InclusionTable)>> {
    let n_rows = z.n_rows() as f64;
    let m = z.column_counts();
    let i_max = weights.len();
    let (prior_a, prior_b) = weak_limit_shapes(weights.alpha(), weights.c(), i_max)?;
    let shapes: Vec<(f64, f64)> = m
        .iter()
        .map(|&mi| (prior_a + mi as f64, prior_b + n_rows - mi as f64))
        .collect();
    let mut proposal = Vec::with_capacity(i_max);
    for &(a, b) in &shapes {
        let dist = Beta::new(a, b).map_err(|e| Error::invalid(e.to_string()))?;
        proposal.push(dist.sample(rng));
    }
    let proposed = weights.with_weights(proposal)?;
    let table_new = build_inclusion_table(&proposed, table.j_max())?;

    let target_new = proposed
        .as_slice()
        .iter()
        .map(|&p| ln_beta_pdf(p, prior_a, prior_b))
        .sum::<f64>()
        + pattern_log_likelihood(z, proposed.as_slice(), &table_new);
    let target_old = weights
        .as_slice()
        .iter()
        .map(|&p| ln_beta_pdf(p, prior_a, prior_b))
        .sum::<f64>()
        + pattern_log_likelihood(z, weights.as_slice(), table);
    let q_new: f64 = proposed
        .as_slice()
        .iter()
        .zip(&shapes)
        .map(|(&p, &(a, b))| ln_beta_pdf(p, a, b))
        .sum();
    let q_old: f64 = weights
        .as_slice()
        .iter()
        .zip(&shapes)
        .map(|(&p, &(a, b))| ln_beta_pdf(p, a, b))
        .sum();
    let log_ratio = target_new - target_old - (q_new - q_old);
    if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
        Ok(Some((proposed, table_new)))
    } else {
        Ok(None)
    }
}

/// Joint Metropolis-Hastings update of all weights (conjugate Gibbs draw in
/// the unrestricted case). Rebuilds the inclusion table on acceptance.
pub fn mh_weights_update(state: &mut GibbsState, rng: &mut impl Rng) -> Result<bool> {
    if !state.restricted() {
        state.weights = conjugate_weights_given_z(&state.weights, &state.z, rng)?;
        return Ok(true);
    }
    let table = state.table.as_ref().expect("restricted state has a table");
    match propose_weights_given_z(&state.weights, table, &state.z, rng)? {
        Some((weights, table)) => {
            state.weights = weights;
            state.table = Some(table);
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Draw A exactly from its conjugate conditional and refresh caches.
pub fn draw_a(state: &mut GibbsState, rng: &mut impl Rng) -> Result<()> {
    let post = posterior_a(&state.z, &state.model.x, state.model.sigma_a2, state.model.sigma_n2)?;
    state.model.a = sample_a(&post, rng)?;
    state.refresh_a_caches();
    state.refresh_residuals();
    Ok(())
}

/// One full sweep: entry or location Gibbs for every row, one whole-row MH
/// per row, one weights move, then an exact A draw.
pub fn sweep(state: &mut GibbsState, rng: &mut impl Rng) -> Result<()> {
    let n_rows = state.z.n_rows();
    let width = state.z.width();
    if state.restricted() {
        let point_mass: Vec<Option<usize>> = state
            .f_rows
            .as_ref()
            .unwrap()
            .iter()
            .map(|f| f.as_point_mass())
            .collect();
        for n in 0..n_rows {
            match point_mass[n] {
                Some(_) => gibbs_location_row_sweep(state, n, rng)?,
                None => {
                    for i in 0..width {
                        gibbs_entry_update(state, n, i, rng)?;
                    }
                }
            }
        }
    } else {
        for n in 0..n_rows {
            for i in 0..width {
                gibbs_entry_update_unrestricted(state, n, i, rng)?;
            }
        }
    }
    for n in 0..n_rows {
        mh_row_proposal(state, n, rng)?;
    }
    mh_weights_update(state, rng)?;
    draw_a(state, rng)?;
    state.iteration += 1;
    Ok(())
}

/// Redraw the data X from the likelihood given the current (Z, A): the
/// "successive-conditional" step of a getting-it-right run.
pub fn resample_data(state: &mut GibbsState, rng: &mut impl Rng) {
    let mean = state.z.to_dmatrix() * &state.model.a;
    let sd = state.model.sigma_n2.sqrt();
    for r in 0..mean.nrows() {
        for c in 0..mean.ncols() {
            let g: f64 = StandardNormal.sample(rng);
            state.model.x[(r, c)] = mean[(r, c)] + sd * g;
        }
    }
    state.refresh_residuals();
}

// ---------------------------------------------------------------------------
// Collapsed auxiliary-variable sampler
// ---------------------------------------------------------------------------

/// Auxiliary counts for the collapsed sampler: t_n discarded predictive rows
/// between accepted rows n-1 and n, and their per-column counts c_n, aligned
/// with the columns of Z.
#[derive(Debug, Clone)]
pub struct AuxState {
    pub t: Vec<u64>,
    pub counts: Vec<Vec<u64>>,
}

impl AuxState {
    pub fn empty(n_rows: usize, width: usize) -> Self {
        AuxState { t: vec![0; n_rows], counts: vec![vec![0; width]; n_rows] }
    }

    pub fn total_rows(&self) -> u64 {
        self.t.iter().sum()
    }

    fn grow_width(&mut self, width: usize) {
        for c in &mut self.counts {
            if c.len() < width {
                c.resize(width, 0);
            }
        }
    }

    /// m_i = sum_n (z_ni + c_ni), the augmented column counts.
    pub fn augmented_counts(&self, z: &FeatureMatrix) -> Vec<u64> {
        let mut m: Vec<u64> = z.column_counts().iter().map(|&v| v as u64).collect();
        for c in &self.counts {
            for (i, &v) in c.iter().enumerate() {
                m[i] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CollapsedSweepStats {
    pub row_accepts: u64,
    pub flip_accepts: u64,
    pub cap_hits: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CollapsedOptions {
    /// Per-row cap on auxiliary proposals; hitting it keeps the previous
    /// (t_n, c_n, Z_n) and logs a warning.
    pub cap: u64,
    /// Follow the whole-row move with single-entry flips on occupied columns.
    pub entry_flips: bool,
    /// Ignore the likelihood (prior-only sweeps for tests).
    pub flat_likelihood: bool,
}

impl Default for CollapsedOptions {
    fn default() -> Self {
        CollapsedOptions { cap: 100_000, entry_flips: false, flat_likelihood: false }
    }
}

/// One sweep of the collapsed sampler. Per row, the block of discarded rows
/// and the row itself are proposed jointly by replaying the predictive
/// rejection process against the counts of everything else; the replay's
/// first f-accepted row is the Metropolis-Hastings proposal for Z_n and the
/// acceptance probability is the collapsed likelihood ratio. `f = None` is
/// the unrestricted sampler (every proposal accepted, t_n = 0). Optionally
/// follows with single-entry flips on occupied columns.
#[allow(clippy::too_many_arguments)]
pub fn collapsed_sweep(
    z: &mut FeatureMatrix,
    aux: &mut AuxState,
    x: &DMatrix<f64>,
    sigma_a2: f64,
    sigma_n2: f64,
    alpha: f64,
    f: Option<&RestrictingDistribution>,
    rng: &mut impl Rng,
    options: CollapsedOptions,
) -> Result<CollapsedSweepStats> {
    let n_rows = z.n_rows();
    let cap = options.cap;
    let accept_prob = |j: usize| f.map_or(1.0, |f| f.pmf(j));
    let mut stats = CollapsedSweepStats::default();
    let mut ll_current = if options.flat_likelihood {
        0.0
    } else {
        log_likelihood_collapsed(z, x, sigma_a2, sigma_n2)?
    };

    for n in 0..n_rows {
        // Counts of everything except row n's own z and block.
        let mut rest: Vec<u64> = z.column_counts().iter().map(|&v| v as u64).collect();
        for (i, &v) in z.row(n).iter().enumerate() {
            rest[i] -= v as u64;
        }
        for (r, c) in aux.counts.iter().enumerate() {
            if r != n {
                for (i, &v) in c.iter().enumerate() {
                    rest[i] += v;
                }
            }
        }
        let rest_rows: u64 =
            (n_rows as u64 - 1) + aux.t.iter().enumerate().filter(|&(r, _)| r != n).map(|(_, &t)| t).sum::<u64>();

        // Replay: propose from the predictive given rest + accumulated block
        // until one proposal is f-accepted.
        let mut block: Vec<u64> = rest.clone();
        let mut t_new = 0u64;
        let mut block_rows: Vec<Vec<u8>> = Vec::new();
        let mut attempts = 0u64;
        let accepted_row = loop {
            attempts += 1;
            if attempts > cap {
                break None;
            }
            let customer = rest_rows + t_new + 1;
            let mut row: Vec<u8> = Vec::with_capacity(block.len() + 2);
            for &mi in &block {
                row.push((rng.random::<f64>() < mi as f64 / customer as f64) as u8);
            }
            let new_dishes = poisson_draw(alpha / customer as f64, rng);
            row.extend(std::iter::repeat(1).take(new_dishes as usize));
            let j: usize = row.iter().map(|&v| v as usize).sum();
            if rng.random::<f64>() < accept_prob(j) {
                break Some(row);
            }
            // Fold the discarded row into the block counts.
            if row.len() > block.len() {
                block.resize(row.len(), 0);
            }
            for (i, &v) in row.iter().enumerate() {
                block[i] += v as u64;
            }
            t_new += 1;
            block_rows.push(row);
        };

        let Some(mut proposal) = accepted_row else {
            log::warn!("collapsed sweep: proposal cap {cap} hit at row {n}; keeping previous auxiliaries");
            stats.cap_hits += 1;
            continue;
        };

        // The block and the proposal may have created new columns.
        let full_width = z.width().max(block.len()).max(proposal.len());
        proposal.resize(full_width, 0);
        let mut z_prop = z.clone();
        z_prop.grow_width(full_width);
        z_prop.set_row(n, proposal.clone())?;
        let ll_prop = if options.flat_likelihood {
            0.0
        } else {
            log_likelihood_collapsed(&z_prop, x, sigma_a2, sigma_n2)?
        };
        let gain = ll_prop - ll_current;
        if gain >= 0.0 || rng.random::<f64>() < gain.exp() {
            stats.row_accepts += 1;
            *z = z_prop;
            aux.grow_width(full_width);
            aux.t[n] = t_new;
            let mut c_new = vec![0u64; full_width];
            for row in &block_rows {
                for (i, &v) in row.iter().enumerate() {
                    c_new[i] += v as u64;
                }
            }
            aux.counts[n] = c_new;
            ll_current = ll_prop;
        }
    }

    if options.entry_flips {
        let total_rows = n_rows as u64 + aux.total_rows();
        let mut m = aux.augmented_counts(z);
        for n in 0..n_rows {
            for i in 0..z.width() {
                let m_rest = m[i] - z.get(n, i) as u64;
                if m_rest == 0 || m_rest >= total_rows {
                    continue; // new-dish moves are the whole-row proposal's job
                }
                let old = z.get(n, i);
                let k_other = z.row_count(n) - old as usize;
                let (k_old, k_new) = (k_other + old as usize, k_other + 1 - old as usize);
                if accept_prob(k_new) == 0.0 {
                    continue;
                }
                let mut z_flip = z.clone();
                z_flip.set(n, i, 1 - old);
                let ll_flip = if options.flat_likelihood {
                    0.0
                } else {
                    log_likelihood_collapsed(&z_flip, x, sigma_a2, sigma_n2)?
                };
                let prior_odds_on = m_rest as f64 / (total_rows - m_rest) as f64;
                let log_prior = if old == 0 { prior_odds_on.ln() } else { -prior_odds_on.ln() };
                let log_f_ratio =
                    f.map_or(0.0, |f| f.log_pmf(k_new) - f.log_pmf(k_old));
                let log_r = (ll_flip - ll_current) + log_prior + log_f_ratio;
                if log_r >= 0.0 || rng.random::<f64>() < log_r.exp() {
                    stats.flip_accepts += 1;
                    *z = z_flip;
                    ll_current = ll_flip;
                    m[i] = m_rest + (1 - old) as u64;
                }
            }
        }
    }

    // Drop columns dead in both the matrix and the auxiliaries.
    let m = aux.augmented_counts(z);
    let dead: Vec<usize> = m.iter().enumerate().filter(|(_, &v)| v == 0).map(|(i, _)| i).collect();
    if !dead.is_empty() {
        z.drop_columns(&dead);
        for c in &mut aux.counts {
            let mut keep = Vec::with_capacity(c.len() - dead.len());
            let mut it = dead.iter().peekable();
            for (i, &v) in c.iter().enumerate() {
                if it.peek() == Some(&&i) {
                    it.next();
                } else {
                    keep.push(v);
                }
            }
            *c = keep;
        }
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Chain driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub alpha: f64,
    pub c: f64,
    pub truncation: usize,
    pub sigma_a2: f64,
    pub sigma_n2: f64,
    pub iterations: u64,
    /// Record every `thin`-th iteration (>= 1).
    pub thin: u64,
    pub row_mh: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be >= 1"));
        }
        if self.truncation as f64 <= self.alpha {
            return Err(Error::invalid("truncation must exceed alpha (weak limit)"));
        }
        if !(self.sigma_a2 > 0.0 && self.sigma_n2 > 0.0) {
            return Err(Error::invalid("variances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub iteration: u64,
    pub z: FeatureMatrix,
    pub weights: Vec<f64>,
    pub a: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub log_joint: f64,
    pub heldout_loglik: Option<f64>,
}

#[derive(Debug)]
pub struct ChainOutput {
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
}

fn snapshot(state: &GibbsState) -> PosteriorSample {
    PosteriorSample {
        iteration: state.iteration,
        z: state.z.clone(),
        weights: state.weights.as_slice().to_vec(),
        a: state.model.a.clone(),
    }
}

fn log_joint(state: &GibbsState, observed: &DMatrix<f64>, mask: &HashSet<(usize, usize)>) -> f64 {
    let i_max = state.weights.len();
    let (pa, pb) = weak_limit_shapes(state.weights.alpha(), state.weights.c(), i_max)
        .expect("state weights valid");
    let mut lj: f64 = state.weights.as_slice().iter().map(|&p| ln_beta_pdf(p, pa, pb)).sum();
    match (&state.f_rows, &state.table) {
        (Some(fs), Some(table)) => {
            for n in 0..state.z.n_rows() {
                let j = state.z.row_count(n);
                lj += fs[n].log_pmf(j);
                lj += table
                    .conditional_pattern_log_pmf(state.z.row(n))
                    .unwrap_or(f64::NEG_INFINITY);
            }
        }
        _ => {
            let m = state.z.column_counts();
            let n_rows = state.z.n_rows() as f64;
            for (i, &p) in state.weights.as_slice().iter().enumerate() {
                lj += m[i] as f64 * p.ln() + (n_rows - m[i] as f64) * (1.0 - p).ln();
            }
        }
    }
    let sigma_a2 = state.model.sigma_a2;
    lj += state
        .model
        .a
        .iter()
        .map(|v| -0.5 * (2.0 * std::f64::consts::PI * sigma_a2).ln() - v * v / (2.0 * sigma_a2))
        .sum::<f64>();
    // Observed-entry likelihood at the current parameters.
    let mean = state.z.to_dmatrix() * &state.model.a;
    let sigma_n2 = state.model.sigma_n2;
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_n2).ln();
    for r in 0..observed.nrows() {
        for c in 0..observed.ncols() {
            if !mask.contains(&(r, c)) {
                let d = observed[(r, c)] - mean[(r, c)];
                lj += ln_norm - d * d / (2.0 * sigma_n2);
            }
        }
    }
    lj
}

fn heldout_loglik(
    state: &GibbsState,
    observed: &DMatrix<f64>,
    mask: &[(usize, usize)],
) -> Option<f64> {
    if mask.is_empty() {
        return None;
    }
    let mean = state.z.to_dmatrix() * &state.model.a;
    let sigma_n2 = state.model.sigma_n2;
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_n2).ln();
    Some(
        mask.iter()
            .map(|&(r, c)| {
                let d = observed[(r, c)] - mean[(r, c)];
                ln_norm - d * d / (2.0 * sigma_n2)
            })
            .sum(),
    )
}

/// Run an uncollapsed chain. `x` holds the full data (including true values
/// at masked entries); the chain never conditions on masked entries — they
/// are re-imputed from the current (Z, A) draw before every sweep and the
/// trace reports their predictive log-likelihood instead.
pub fn run_chain(
    config: &ChainConfig,
    x: &DMatrix<f64>,
    f_rows: Option<Vec<RestrictingDistribution>>,
    mask: &[(usize, usize)],
    handle: RngHandle,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = handle.rng();
    let mask_set: HashSet<(usize, usize)> = mask.iter().copied().collect();
    let mut working = x.clone();
    for &(r, c) in mask {
        working[(r, c)] = 0.0;
    }
    let mut state = GibbsState::init(
        working,
        f_rows,
        config.alpha,
        config.c,
        config.truncation,
        config.sigma_a2,
        config.sigma_n2,
        &mut rng,
    )?;
    let mut samples = vec![snapshot(&state)];
    let mut trace = vec![TraceRow {
        iteration: 0,
        log_joint: log_joint(&state, x, &mask_set),
        heldout_loglik: heldout_loglik(&state, x, mask),
    }];
    for it in 1..=config.iterations {
        if !mask.is_empty() {
            let mean = state.z.to_dmatrix() * &state.model.a;
            let sd = state.model.sigma_n2.sqrt();
            for &(r, c) in mask {
                let g: f64 = StandardNormal.sample(&mut rng);
                state.model.x[(r, c)] = mean[(r, c)] + sd * g;
            }
            state.refresh_residuals();
        }
        if config.row_mh {
            sweep(&mut state, &mut rng)?;
        } else {
            sweep_no_row_mh(&mut state, &mut rng)?;
        }
        trace.push(TraceRow {
            iteration: it,
            log_joint: log_joint(&state, x, &mask_set),
            heldout_loglik: heldout_loglik(&state, x, mask),
        });
        if it % config.thin == 0 {
            samples.push(snapshot(&state));
        }
    }
    Ok(ChainOutput { samples, trace })
}

fn sweep_no_row_mh(state: &mut GibbsState, rng: &mut impl Rng) -> Result<()> {
    let n_rows = state.z.n_rows();
    let width = state.z.width();
    if state.restricted() {
        let point_mass: Vec<Option<usize>> =
            state.f_rows.as_ref().unwrap().iter().map(|f| f.as_point_mass()).collect();
        for n in 0..n_rows {
            match point_mass[n] {
                Some(_) => gibbs_location_row_sweep(state, n, rng)?,
                None => {
                    for i in 0..width {
                        gibbs_entry_update(state, n, i, rng)?;
                    }
                }
            }
        }
    } else {
        for n in 0..n_rows {
            for i in 0..width {
                gibbs_entry_update_unrestricted(state, n, i, rng)?;
            }
        }
    }
    mh_weights_update(state, rng)?;
    draw_a(state, rng)?;
    state.iteration += 1;
    Ok(())
}
