//! Hybrid mean-field variational inference: coordinate ascent over the
//! feature assignments Z, feature values A, and per-row counts J, with the
//! weights held fixed during the variational updates and resampled by
//! Metropolis-Hastings every few sweeps.
//!
//! The count-conditional factor uses the inclusion probabilities eta_{ik}
//! as a fully factored surrogate for the conditional-Bernoulli row law; the
//! gamma and nu updates below are exact coordinate ascent for that
//! surrogate objective, which is what makes the reported ELBO monotone at
//! fixed weights.

use crate::condbern::{build_inclusion_table, sample_fixed_count, InclusionTable};
use crate::error::{Error, Result};
use crate::lingauss::posterior_a;
use crate::matrix::FeatureMatrix;
use crate::mcmc::{conjugate_weights_given_z, propose_weights_given_z};
use crate::num::{safe_logit, sigmoid};
use crate::restriction::RestrictingDistribution;
use crate::rng::RngHandle;
use crate::weights::{weak_limit_weights, TruncatedWeights};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Mean-field state: independent Gaussians on the feature rows A_i (mean
/// phi_i, isotropic variance phi_var_i), independent Bernoullis nu_ni on the
/// assignments, and per-row multinomials gamma_n over the count support.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub phi: DMatrix<f64>,
    pub phi_var: Vec<f64>,
    pub nu: DMatrix<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub weights: TruncatedWeights,
    /// None is the unrestricted-IBP variant (no count factor).
    pub f_rows: Option<Vec<RestrictingDistribution>>,
    table: InclusionTable,
    x: DMatrix<f64>,
    sigma_a2: f64,
    sigma_n2: f64,
    /// Cached s_n = sum_j nu_nj phi_j, one row per observation.
    s: DMatrix<f64>,
}

impl VariationalState {
    pub fn init(
        x: DMatrix<f64>,
        f_rows: Option<Vec<RestrictingDistribution>>,
        weights: TruncatedWeights,
        sigma_a2: f64,
        sigma_n2: f64,
    ) -> Result<Self> {
        let n_rows = x.nrows();
        let i_max = weights.len();
        if let Some(fs) = &f_rows {
            if fs.len() != n_rows {
                return Err(Error::DimensionMismatch {
                    expected: n_rows,
                    got: fs.len(),
                    context: "per-row restrictions vs data rows",
                });
            }
            for f in fs {
                f.check_truncation(i_max)?;
            }
        }
        let j_max = f_rows
            .as_ref()
            .map(|fs| fs.iter().map(|f| f.support_max()).max().unwrap_or(0))
            .unwrap_or(0);
        let table = build_inclusion_table(&weights, j_max)?;
        // nu starts at the mean count spread over the features; gamma at the
        // prior f; phi at the conjugate posterior of a thresholded nu.
        let nu = match &f_rows {
            Some(fs) => DMatrix::from_fn(n_rows, i_max, |n, _| {
                (fs[n].mean() / i_max as f64).clamp(1e-4, 1.0 - 1e-4)
            }),
            None => DMatrix::from_fn(n_rows, i_max, |_, i| weights.as_slice()[i]),
        };
        let gamma = match &f_rows {
            Some(fs) => fs
                .iter()
                .map(|f| (0..=f.support_max()).map(|k| f.pmf(k)).collect())
                .collect(),
            None => vec![Vec::new(); n_rows],
        };
        let z_init = FeatureMatrix::from_rows(
            (0..n_rows)
                .map(|n| (0..i_max).map(|i| (nu[(n, i)] >= 0.5) as u8).collect())
                .collect(),
        )?;
        let post = posterior_a(&z_init, &x, sigma_a2, sigma_n2)?;
        let phi = post.mean;
        let phi_var = (0..i_max).map(|i| post.covariance[(i, i)].max(1e-12)).collect();
        let s = &nu * &phi;
        Ok(VariationalState {
            phi,
            phi_var,
            nu,
            gamma,
            weights,
            f_rows,
            table,
            x,
            sigma_a2,
            sigma_n2,
            s,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    pub fn table(&self) -> &InclusionTable {
        &self.table
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Replace the weights (after a resample step) and rebuild the table.
    pub fn set_weights(&mut self, weights: TruncatedWeights, table: InclusionTable) {
        self.weights = weights;
        self.table = table;
    }

    pub fn refresh_s(&mut self) {
        self.s = &self.nu * &self.phi;
    }

    /// E_q[log eta-surrogate row term] for row n at count k.
    fn row_count_term(&self, n: usize, k: usize) -> f64 {
        let i_max = self.truncation();
        let mut acc = 0.0;
        for i in 0..i_max {
            let nu = self.nu[(n, i)];
            let eta = self.table.eta(i, k);
            if nu > 0.0 {
                acc += nu * eta.ln();
            }
            if nu < 1.0 {
                acc += (1.0 - nu) * (1.0 - eta).ln();
            }
            if acc == f64::NEG_INFINITY {
                return acc;
            }
        }
        acc
    }
}

/// Coordinate update for gamma_n:
/// log gamma_nk ~ log f_n(k) + sum_i [nu ln eta_ik + (1-nu) ln(1-eta_ik)],
/// exponentiated and normalized over the support of f_n.
pub fn update_gamma(state: &mut VariationalState, n: usize) -> Result<()> {
    let f = &state
        .f_rows
        .as_ref()
        .ok_or_else(|| Error::invalid("gamma update needs a restricted model"))?[n];
    let support = f.support_max();
    let mut logits = Vec::with_capacity(support + 1);
    for k in 0..=support {
        let lf = f.log_pmf(k);
        logits.push(if lf == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lf + state.row_count_term(n, k)
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gamma = &mut state.gamma[n];
    gamma.resize(support + 1, 0.0);
    if max == f64::NEG_INFINITY {
        // Numerical wipe-out; fall back to the prior masses.
        for (k, g) in gamma.iter_mut().enumerate() {
            *g = f.pmf(k);
        }
        return Ok(());
    }
    let mut total = 0.0;
    for (k, g) in gamma.iter_mut().enumerate() {
        *g = (logits[k] - max).exp();
        total += *g;
    }
    for g in gamma.iter_mut() {
        *g /= total;
    }
    Ok(())
}

/// Coordinate update for nu_ni:
/// xi = sum_k gamma_nk logit(eta_ik)
///      - (1/2 sigma_n^2) (-2 phi_i X_n^T + Tr(Phi_i) + phi_i phi_i^T
///                         + 2 phi_i sum_{j != i} nu_nj phi_j^T),
/// nu = sigmoid(xi). The unrestricted variant replaces the count term by
/// logit(pi_i).
pub fn update_nu(state: &mut VariationalState, n: usize, i: usize) -> Result<()> {
    let prior_term = match &state.f_rows {
        Some(_) => {
            let gamma = &state.gamma[n];
            let mut acc = 0.0;
            for (k, &g) in gamma.iter().enumerate() {
                if g > 0.0 {
                    acc += g * safe_logit(state.table.eta(i, k));
                }
            }
            acc
        }
        None => safe_logit(state.weights.as_slice()[i]),
    };
    let d = state.dims();
    let old = state.nu[(n, i)];
    let mut phi_x = 0.0;
    let mut phi_s = 0.0;
    let mut phi_sq = 0.0;
    for c in 0..d {
        let p = state.phi[(i, c)];
        phi_x += p * state.x[(n, c)];
        phi_s += p * state.s[(n, c)];
        phi_sq += p * p;
    }
    let tr = d as f64 * state.phi_var[i];
    let data_term = -(-2.0 * phi_x + tr + phi_sq + 2.0 * (phi_s - old * phi_sq))
        / (2.0 * state.sigma_n2);
    let nu = sigmoid(prior_term + data_term);
    state.nu[(n, i)] = nu;
    let delta = nu - old;
    if delta != 0.0 {
        for c in 0..d {
            state.s[(n, c)] += delta * state.phi[(i, c)];
        }
    }
    Ok(())
}

/// Coordinate update for (phi_i, Phi_i): the conjugate Gaussian given
/// E[Z] = nu, which is exactly isotropic per feature.
pub fn update_a(state: &mut VariationalState) -> Result<()> {
    let i_max = state.truncation();
    let d = state.dims();
    let n_rows = state.n_rows();
    for i in 0..i_max {
        let nu_sum: f64 = (0..n_rows).map(|n| state.nu[(n, i)]).sum();
        let denom = state.sigma_n2 / state.sigma_a2 + nu_sum;
        let new_var = state.sigma_n2 / denom;
        let mut new_phi = vec![0.0; d];
        for n in 0..n_rows {
            let nu = state.nu[(n, i)];
            if nu == 0.0 {
                continue;
            }
            for (c, np) in new_phi.iter_mut().enumerate() {
                *np += nu * (state.x[(n, c)] - state.s[(n, c)] + nu * state.phi[(i, c)]);
            }
        }
        for np in new_phi.iter_mut() {
            *np /= denom;
        }
        // Shift the s cache by nu_ni * (phi_new - phi_old).
        for n in 0..n_rows {
            let nu = state.nu[(n, i)];
            if nu == 0.0 {
                continue;
            }
            for c in 0..d {
                state.s[(n, c)] += nu * (new_phi[c] - state.phi[(i, c)]);
            }
        }
        for (c, &np) in new_phi.iter().enumerate() {
            state.phi[(i, c)] = np;
        }
        state.phi_var[i] = new_var;
    }
    Ok(())
}

/// One full coordinate-ascent sweep: gamma for every row, nu for every
/// entry, then A.
pub fn coordinate_sweep(state: &mut VariationalState) -> Result<()> {
    if state.f_rows.is_some() {
        for n in 0..state.n_rows() {
            update_gamma(state, n)?;
        }
    }
    for n in 0..state.n_rows() {
        for i in 0..state.truncation() {
            update_nu(state, n, i)?;
        }
    }
    update_a(state)?;
    Ok(())
}

fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Evidence lower bound at the current state, for fixed weights. Uses the
/// same eta-surrogate count factor as the updates, so a coordinate sweep can
/// never decrease it. Degenerate factors (0/1 probabilities, zero variances)
/// contribute zero entropy.
pub fn elbo(state: &VariationalState) -> f64 {
    let n_rows = state.n_rows();
    let d = state.dims();
    let i_max = state.truncation();
    let (sigma_a2, sigma_n2) = (state.sigma_a2, state.sigma_n2);

    // E log p(X | Z, A).
    let mut quad = 0.0;
    for n in 0..n_rows {
        let mut x_sq = 0.0;
        let mut x_s = 0.0;
        let mut s_sq = 0.0;
        for c in 0..d {
            x_sq += state.x[(n, c)] * state.x[(n, c)];
            x_s += state.x[(n, c)] * state.s[(n, c)];
            s_sq += state.s[(n, c)] * state.s[(n, c)];
        }
        quad += x_sq - 2.0 * x_s + s_sq;
        for i in 0..i_max {
            let nu = state.nu[(n, i)];
            if nu == 0.0 {
                continue;
            }
            let phi_sq: f64 = (0..d).map(|c| state.phi[(i, c)].powi(2)).sum();
            quad += nu * (phi_sq + d as f64 * state.phi_var[i]) - nu * nu * phi_sq;
        }
    }
    let mut bound = -0.5 * (n_rows * d) as f64 * (LN_2PI + sigma_n2.ln()) - quad / (2.0 * sigma_n2);

    // E log p(A) and H[q(A)].
    for i in 0..i_max {
        let phi_sq: f64 = (0..d).map(|c| state.phi[(i, c)].powi(2)).sum();
        let v = state.phi_var[i];
        bound += -0.5 * d as f64 * (LN_2PI + sigma_a2.ln())
            - (phi_sq + d as f64 * v) / (2.0 * sigma_a2);
        if v > 0.0 {
            bound += 0.5 * d as f64 * (1.0 + LN_2PI + v.ln());
        }
    }

    // Count factor and assignment factor.
    match &state.f_rows {
        Some(fs) => {
            for n in 0..n_rows {
                for (k, &g) in state.gamma[n].iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    bound += g * fs[n].log_pmf(k);
                    bound += g * state.row_count_term(n, k);
                    bound -= g * g.ln();
                }
            }
        }
        None => {
            for n in 0..n_rows {
                for i in 0..i_max {
                    let nu = state.nu[(n, i)];
                    let pi = state.weights.as_slice()[i];
                    if nu > 0.0 {
                        bound += nu * pi.ln();
                    }
                    if nu < 1.0 {
                        bound += (1.0 - nu) * (1.0 - pi).ln();
                    }
                }
            }
        }
    }

    // H[q(Z)].
    for n in 0..n_rows {
        for i in 0..i_max {
            bound += bernoulli_entropy(state.nu[(n, i)]);
        }
    }
    bound
}

/// Sample (Z, A, J) from the variational posterior. For restricted rows,
/// J_n ~ gamma_n and the row is a conditional-Bernoulli draw on the nu
/// probabilities with that exact count; unrestricted rows are independent
/// Bernoulli(nu).
pub fn sample_from_q(
    state: &VariationalState,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, DMatrix<f64>)> {
    let n_rows = state.n_rows();
    let i_max = state.truncation();
    let mut z = FeatureMatrix::zeros(n_rows, i_max);
    for n in 0..n_rows {
        match &state.f_rows {
            Some(_) => {
                let gamma = &state.gamma[n];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut j = 0;
                for (k, &g) in gamma.iter().enumerate() {
                    acc += g;
                    j = k;
                    if u < acc {
                        break;
                    }
                }
                let nu_row: Vec<f64> = (0..i_max).map(|i| state.nu[(n, i)]).collect();
                z.set_row(n, sample_fixed_count(&nu_row, j, rng)?)?;
            }
            None => {
                for i in 0..i_max {
                    if rng.random::<f64>() < state.nu[(n, i)] {
                        z.set(n, i, 1);
                    }
                }
            }
        }
    }
    let a = DMatrix::from_fn(i_max, state.dims(), |i, c| {
        let g: f64 = StandardNormal.sample(rng);
        state.phi[(i, c)] + state.phi_var[i].sqrt() * g
    });
    Ok((z, a))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridConfig {
    pub alpha: f64,
    pub c: f64,
    pub truncation: usize,
    pub sigma_a2: f64,
    pub sigma_n2: f64,
    /// Total coordinate-ascent sweeps.
    pub sweeps: u64,
    /// Resample the weights every this many sweeps (0 = never: pure
    /// mean-field at fixed weights).
    pub resample_every: u64,
    /// Declare a fixed-weights segment converged when the relative ELBO
    /// change between sweeps falls below this and resample early.
    pub elbo_tol: f64,
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
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
pub struct HybridSample {
    pub sweep: u64,
    pub z: FeatureMatrix,
    pub a: DMatrix<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug)]
pub struct HybridOutput {
    /// (sweep, elbo-at-fixed-weights, segment id).
    pub elbo_trace: Vec<(u64, f64, u32)>,
    /// One sample per weights-resample event plus a final one.
    pub samples: Vec<HybridSample>,
    /// Held-out log-likelihood per sample, when a mask was supplied.
    pub heldout_trace: Vec<(u64, f64)>,
    pub final_state: VariationalState,
}

/// The hybrid loop: coordinate ascent at fixed weights, then sample
/// (Z, A, J) from q and Metropolis-Hastings resample the weights given the
/// sampled Z (conjugate draw in the unrestricted variant), rebuild the
/// inclusion table, and continue. Masked data entries are imputed with the
/// current variational predictive mean before every sweep.
pub fn hybrid_fit(
    config: &HybridConfig,
    x: &DMatrix<f64>,
    f_rows: Option<Vec<RestrictingDistribution>>,
    mask: &[(usize, usize)],
    handle: RngHandle,
) -> Result<HybridOutput> {
    config.validate()?;
    let mut rng = handle.rng();
    let mut working = x.clone();
    for &(r, c) in mask {
        working[(r, c)] = 0.0;
    }
    let weights = weak_limit_weights(config.alpha, config.c, config.truncation, &mut rng)?;
    let mut state = VariationalState::init(
        working,
        f_rows,
        weights,
        config.sigma_a2,
        config.sigma_n2,
    )?;

    let mut elbo_trace = Vec::new();
    let mut samples = Vec::new();
    let mut heldout_trace = Vec::new();
    let mut segment: u32 = 0;
    let mut prev_elbo = f64::NEG_INFINITY;

    let resample = |state: &mut VariationalState,
                        sweep_idx: u64,
                        rng: &mut rand_chacha::ChaCha12Rng,
                        samples: &mut Vec<HybridSample>,
                        heldout_trace: &mut Vec<(u64, f64)>|
     -> Result<()> {
        let (z, a) = sample_from_q(state, rng)?;
        if !mask.is_empty() {
            let mean = z.to_dmatrix() * &a;
            let ln_norm = -0.5 * (LN_2PI + config.sigma_n2.ln());
            let hll: f64 = mask
                .iter()
                .map(|&(r, c)| {
                    let d = x[(r, c)] - mean[(r, c)];
                    ln_norm - d * d / (2.0 * config.sigma_n2)
                })
                .sum();
            heldout_trace.push((sweep_idx, hll));
        }
        match &state.f_rows {
            Some(_) => {
                if let Some((w, t)) =
                    propose_weights_given_z(&state.weights, state.table(), &z, rng)?
                {
                    state.set_weights(w, t);
                }
            }
            None => {
                let w = conjugate_weights_given_z(&state.weights, &z, rng)?;
                let t = build_inclusion_table(&w, 0)?;
                state.set_weights(w, t);
            }
        }
        samples.push(HybridSample {
            sweep: sweep_idx,
            z,
            a,
            weights: state.weights.as_slice().to_vec(),
        });
        Ok(())
    };

    for sweep_idx in 1..=config.sweeps {
        if !mask.is_empty() {
            state.refresh_s();
            for &(r, c) in mask {
                state.x[(r, c)] = state.s[(r, c)];
            }
        }
        coordinate_sweep(&mut state)?;
        let bound = elbo(&state);
        elbo_trace.push((sweep_idx, bound, segment));
        let converged = prev_elbo.is_finite()
            && (bound - prev_elbo).abs() <= config.elbo_tol * bound.abs().max(1.0);
        prev_elbo = bound;
        let scheduled =
            config.resample_every > 0 && sweep_idx % config.resample_every == 0;
        if (scheduled || converged) && sweep_idx < config.sweeps && config.resample_every > 0 {
            resample(&mut state, sweep_idx, &mut rng, &mut samples, &mut heldout_trace)?;
            segment += 1;
            prev_elbo = f64::NEG_INFINITY;
        }
    }
    resample(&mut state, config.sweeps, &mut rng, &mut samples, &mut heldout_trace)?;
    Ok(HybridOutput { elbo_trace, samples, heldout_trace, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lingauss::{log_likelihood, LinearGaussianModel};
    use crate::weights::WeightKind;

    fn test_weights(probs: &[f64]) -> TruncatedWeights {
        TruncatedWeights::new(probs.to_vec(), 1.0, 1.0, WeightKind::WeakLimit).unwrap()
    }

    fn random_state(
        n_rows: usize,
        i_max: usize,
        dims: usize,
        f: Option<RestrictingDistribution>,
        seed: u64,
    ) -> VariationalState {
        let mut rng = RngHandle::new(seed).rng();
        let x = DMatrix::from_fn(n_rows, dims, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let weights = weak_limit_weights(1.0, 1.0, i_max, &mut rng).unwrap();
        VariationalState::init(x, f.map(|f| vec![f; n_rows]), weights, 1.0, 0.5).unwrap()
    }

    #[test]
    fn gamma_point_mass_is_one_hot() {
        let mut state =
            random_state(2, 5, 2, Some(RestrictingDistribution::point_mass(2)), 1);
        update_gamma(&mut state, 0).unwrap();
        assert_eq!(state.gamma[0].len(), 3);
        assert_eq!(state.gamma[0][2], 1.0);
        assert_eq!(state.gamma[0][0] + state.gamma[0][1], 0.0);
    }

    #[test]
    fn gamma_matches_two_term_hand_computation() {
        // With nu = 0 everywhere the count term at k is
        // sum_i ln(1 - eta_{ik}); with f uniform on {0, 1} this gives a
        // two-term softmax that we can write out directly.
        let f = RestrictingDistribution::table(vec![1.0, 1.0]).unwrap();
        let mut state = random_state(1, 3, 2, Some(f), 2);
        for i in 0..3 {
            state.nu[(0, i)] = 0.0;
        }
        state.refresh_s();
        update_gamma(&mut state, 0).unwrap();
        let term0: f64 = (0..3).map(|i| (1.0 - state.table().eta(i, 0)).ln()).sum();
        let term1: f64 = (0..3).map(|i| (1.0 - state.table().eta(i, 1)).ln()).sum();
        let w0 = (0.5f64.ln() + term0).exp();
        let w1 = (0.5f64.ln() + term1).exp();
        assert!((state.gamma[0][0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((state.gamma[0][1] - w1 / (w0 + w1)).abs() < 1e-12);
        // Interior nu kills the k = 0 cell (eta_{i0} = 0).
        for i in 0..3 {
            state.nu[(0, i)] = 0.3;
        }
        state.refresh_s();
        update_gamma(&mut state, 0).unwrap();
        assert_eq!(state.gamma[0][0], 0.0);
        assert_eq!(state.gamma[0][1], 1.0);
    }

    #[test]
    fn gamma_rows_normalize() {
        let f = RestrictingDistribution::uniform_window(2, 1);
        let mut state = random_state(4, 6, 3, Some(f), 3);
        for n in 0..4 {
            update_gamma(&mut state, n).unwrap();
            let total: f64 = state.gamma[n].iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nu_is_half_at_symmetric_eta_and_no_data() {
        // Equal weights make eta_{i,k} = k/I; at k = I/2 the prior logit is
        // zero. Zero phi and zero variance kill the data term.
        let f = RestrictingDistribution::point_mass(2);
        let weights = test_weights(&[0.4; 4]);
        let x = DMatrix::zeros(1, 2);
        let mut state =
            VariationalState::init(x, Some(vec![f]), weights, 1.0, 0.5).unwrap();
        update_gamma(&mut state, 0).unwrap();
        state.phi.fill(0.0);
        state.phi_var = vec![0.0; 4];
        state.refresh_s();
        for i in 0..4 {
            update_nu(&mut state, 0, i).unwrap();
            assert!((state.nu[(0, i)] - 0.5).abs() < 1e-12, "nu = {}", state.nu[(0, i)]);
        }
    }

    #[test]
    fn nu_matches_hand_expanded_formula() {
        let f = RestrictingDistribution::table(vec![0.2, 0.5, 0.3]).unwrap();
        let mut state = random_state(1, 2, 1, Some(f), 4);
        update_gamma(&mut state, 0).unwrap();
        let (n, i) = (0, 1);
        let gamma = state.gamma[n].clone();
        let eta: Vec<f64> = (0..=2).map(|k| state.table().eta(i, k)).collect();
        let phi_i = state.phi[(i, 0)];
        let phi_other = state.phi[(1 - i, 0)];
        let nu_other = state.nu[(n, 1 - i)];
        let v = state.phi_var[i];
        let x = state.data()[(n, 0)];
        let prior: f64 = (0..=2)
            .filter(|&k| gamma[k] > 0.0)
            .map(|k| gamma[k] * (eta[k].ln() - (1.0 - eta[k]).ln()))
            .sum();
        let data = -(-2.0 * phi_i * x + v + phi_i * phi_i + 2.0 * phi_i * nu_other * phi_other)
            / (2.0 * 0.5);
        let want = 1.0 / (1.0 + (-(prior + data)).exp());
        update_nu(&mut state, n, i).unwrap();
        assert!((state.nu[(n, i)] - want).abs() < 1e-12);
    }

    #[test]
    fn a_update_limits() {
        // nu = 0 everywhere: prior.
        let f = RestrictingDistribution::point_mass(1);
        let mut state = random_state(3, 4, 2, Some(f), 5);
        state.nu.fill(0.0);
        state.refresh_s();
        update_a(&mut state).unwrap();
        assert!(state.phi.amax() < 1e-14);
        for &v in &state.phi_var {
            assert!((v - 1.0).abs() < 1e-12); // sigma_a2 = 1
        }

        // Single observation, single feature, nu = 1: the scalar conjugate
        // posterior mean x * sigma_a2 / (sigma_a2 + sigma_n2).
        let weights = test_weights(&[0.5]);
        let x = DMatrix::from_element(1, 1, 2.0);
        let mut state = VariationalState::init(
            x,
            Some(vec![RestrictingDistribution::point_mass(1)]),
            weights,
            1.0,
            0.5,
        )
        .unwrap();
        state.nu[(0, 0)] = 1.0;
        state.refresh_s();
        update_a(&mut state).unwrap();
        assert!((state.phi[(0, 0)] - 2.0 * 1.0 / 1.5).abs() < 1e-12);
        assert!((state.phi_var[0] - 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn a_update_fixed_point_matches_exact_conjugacy() {
        // With nu binary (a degenerate q(Z)), iterating the A updates
        // converges to the exact joint posterior mean.
        let f = RestrictingDistribution::point_mass(2);
        let mut state = random_state(6, 4, 3, Some(f), 6);
        let mut rng = RngHandle::new(7).rng();
        let mut z = FeatureMatrix::zeros(6, 4);
        for n in 0..6 {
            let row = sample_fixed_count(&[0.5; 4], 2, &mut rng).unwrap();
            for (i, &v) in row.iter().enumerate() {
                state.nu[(n, i)] = v as f64;
                if v == 1 {
                    z.set(n, i, 1);
                }
            }
        }
        state.refresh_s();
        for _ in 0..400 {
            update_a(&mut state).unwrap();
        }
        let post = posterior_a(&z, state.data(), 1.0, 0.5).unwrap();
        assert!(
            (&state.phi - &post.mean).amax() < 1e-8,
            "max diff {}",
            (&state.phi - &post.mean).amax()
        );
    }

    #[test]
    fn elbo_non_decreasing_on_random_instances() {
        for seed in 0..20u64 {
            let f = if seed % 2 == 0 {
                RestrictingDistribution::uniform_window(2, 1)
            } else {
                RestrictingDistribution::table(vec![0.3, 0.4, 0.3]).unwrap()
            };
            let mut state = random_state(5, 4 + (seed as usize % 3), 2, Some(f), 100 + seed);
            let mut prev = f64::NEG_INFINITY;
            for sweep_idx in 0..12 {
                coordinate_sweep(&mut state).unwrap();
                let bound = elbo(&state);
                assert!(
                    bound >= prev - 1e-8,
                    "seed {seed} sweep {sweep_idx}: {bound} < {prev}"
                );
                prev = bound;
            }
        }
    }

    #[test]
    fn elbo_non_decreasing_unrestricted() {
        for seed in 0..8u64 {
            let mut state = random_state(5, 4, 2, None, 200 + seed);
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..12 {
                coordinate_sweep(&mut state).unwrap();
                let bound = elbo(&state);
                assert!(bound >= prev - 1e-8);
                prev = bound;
            }
        }
    }

    #[test]
    fn elbo_at_degenerate_q_is_log_joint() {
        let f = RestrictingDistribution::point_mass(2);
        let mut state = random_state(3, 4, 2, Some(f.clone()), 8);
        let mut rng = RngHandle::new(9).rng();
        let mut z = FeatureMatrix::zeros(3, 4);
        for n in 0..3 {
            let row = sample_fixed_count(&[0.5; 4], 2, &mut rng).unwrap();
            for (i, &v) in row.iter().enumerate() {
                state.nu[(n, i)] = v as f64;
                if v == 1 {
                    z.set(n, i, 1);
                }
            }
            state.gamma[n] = vec![0.0, 0.0, 1.0];
        }
        let a = state.phi.clone();
        state.phi_var = vec![0.0; 4];
        state.refresh_s();
        let bound = elbo(&state);

        // Direct joint: likelihood + A prior + count prior + surrogate rows.
        let model =
            LinearGaussianModel::new(a.clone(), 1.0, 0.5, state.data().clone()).unwrap();
        let mut joint = log_likelihood(&z, &model).unwrap();
        joint += a
            .iter()
            .map(|v| -0.5 * (LN_2PI + 0f64) - v * v / 2.0)
            .sum::<f64>();
        for n in 0..3 {
            joint += f.log_pmf(2);
            for i in 0..4 {
                let eta = state.table().eta(i, 2);
                joint += if z.get(n, i) == 1 { eta.ln() } else { (1.0 - eta).ln() };
            }
        }
        assert!((bound - joint).abs() < 1e-9, "elbo {bound} vs joint {joint}");
    }

    #[test]
    fn elbo_invariant_under_feature_permutation() {
        let f = RestrictingDistribution::uniform_window(1, 1);
        let mut state = random_state(4, 3, 2, Some(f), 10);
        coordinate_sweep(&mut state).unwrap();
        let base = elbo(&state);
        // Swap features 0 and 2 along with their weights; eta columns move
        // with the weights, so the bound is unchanged.
        let mut probs = state.weights.as_slice().to_vec();
        probs.swap(0, 2);
        let swapped = state.weights.with_weights(probs).unwrap();
        let table = build_inclusion_table(&swapped, state.table().j_max()).unwrap();
        let mut other = state.clone();
        other.set_weights(swapped, table);
        for n in 0..4 {
            let tmp = other.nu[(n, 0)];
            other.nu[(n, 0)] = other.nu[(n, 2)];
            other.nu[(n, 2)] = tmp;
        }
        for c in 0..2 {
            let tmp = other.phi[(0, c)];
            other.phi[(0, c)] = other.phi[(2, c)];
            other.phi[(2, c)] = tmp;
        }
        other.phi_var.swap(0, 2);
        other.refresh_s();
        assert!((elbo(&other) - base).abs() < 1e-9);
    }

    #[test]
    fn point_mass_rows_concentrate_expected_count() {
        // Flat likelihood: after the first sweep nu_i = eta_{iJ}, whose sum
        // is exactly J.
        let f = RestrictingDistribution::point_mass(3);
        let mut rng = RngHandle::new(11).rng();
        let x = DMatrix::zeros(4, 2);
        let weights = weak_limit_weights(2.0, 1.0, 10, &mut rng).unwrap();
        let mut state =
            VariationalState::init(x, Some(vec![f; 4]), weights, 1.0, 1e12).unwrap();
        for _ in 0..50 {
            coordinate_sweep(&mut state).unwrap();
        }
        for n in 0..4 {
            let total: f64 = (0..10).map(|i| state.nu[(n, i)]).sum();
            assert!((total - 3.0).abs() < 0.5, "row {n} E[count] = {total}");
        }
    }

    #[test]
    fn hybrid_fit_deterministic_and_monotone_segments() {
        let mut rng = RngHandle::new(12).rng();
        let x = DMatrix::from_fn(6, 3, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let f = RestrictingDistribution::uniform_window(2, 1);
        let config = HybridConfig {
            alpha: 1.5,
            c: 1.0,
            truncation: 5,
            sigma_a2: 1.0,
            sigma_n2: 0.5,
            sweeps: 30,
            resample_every: 10,
            elbo_tol: 0.0,
        };
        let run = |seed: u64| {
            hybrid_fit(&config, &x, Some(vec![f.clone(); 6]), &[], RngHandle::new(seed)).unwrap()
        };
        let a = run(13);
        let b = run(13);
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.z, sb.z);
            assert_eq!(sa.weights, sb.weights);
        }
        // ELBO is monotone within each fixed-weights segment.
        for w in a.elbo_trace.windows(2) {
            if w[0].2 == w[1].2 {
                assert!(w[1].1 >= w[0].1 - 1e-8, "{:?} -> {:?}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn hybrid_fit_never_resampling_is_pure_mean_field() {
        let mut rng = RngHandle::new(14).rng();
        let x = DMatrix::from_fn(5, 2, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let f = RestrictingDistribution::table(vec![0.5, 0.5]).unwrap();
        let config = HybridConfig {
            alpha: 1.0,
            c: 1.0,
            truncation: 4,
            sigma_a2: 1.0,
            sigma_n2: 0.5,
            sweeps: 25,
            resample_every: 0,
            elbo_tol: 1e-12,
        };
        let out =
            hybrid_fit(&config, &x, Some(vec![f; 5]), &[], RngHandle::new(15)).unwrap();
        // Single segment, globally monotone.
        assert!(out.elbo_trace.iter().all(|&(_, _, seg)| seg == 0));
        for w in out.elbo_trace.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-8);
        }
        assert_eq!(out.samples.len(), 1); // only the final sample
    }

    #[test]
    fn hybrid_fit_reports_heldout() {
        let mut rng = RngHandle::new(16).rng();
        let x = DMatrix::from_fn(5, 4, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let config = HybridConfig {
            alpha: 1.0,
            c: 1.0,
            truncation: 4,
            sigma_a2: 1.0,
            sigma_n2: 0.5,
            sweeps: 12,
            resample_every: 6,
            elbo_tol: 0.0,
        };
        let mask = [(0usize, 0usize), (3, 2)];
        let out = hybrid_fit(&config, &x, None, &mask, RngHandle::new(17)).unwrap();
        assert!(!out.heldout_trace.is_empty());
        for &(_, hll) in &out.heldout_trace {
            assert!(hll.is_finite());
        }
    }
}
