//! Linear-Gaussian observation model X = Z A + eps and its conditionals:
//! the explicit likelihood, the marginal likelihood with A integrated out,
//! and the conjugate posterior over A.

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.8378770664093453;

/// Feature values, variances, and data for the linear-Gaussian model.
/// A is I x D with independent Normal(0, sigma_a2) entries; the noise is
/// Normal(0, sigma_n2) per entry of the N x D data matrix.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub sigma_a2: f64,
    pub sigma_n2: f64,
    pub x: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(a: DMatrix<f64>, sigma_a2: f64, sigma_n2: f64, x: DMatrix<f64>) -> Result<Self> {
        if !(sigma_a2.is_finite() && sigma_a2 > 0.0 && sigma_n2.is_finite() && sigma_n2 > 0.0) {
            return Err(Error::invalid("variances must be positive and finite"));
        }
        if a.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                got: x.ncols(),
                context: "feature-value columns vs data columns",
            });
        }
        Ok(LinearGaussianModel { a, sigma_a2, sigma_n2, x })
    }
}

/// sum_{n,d} log Normal(x_nd; (ZA)_nd, sigma_n2).
pub fn log_likelihood(z: &FeatureMatrix, model: &LinearGaussianModel) -> Result<f64> {
    if z.width() != model.a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: model.a.nrows(),
            got: z.width(),
            context: "matrix width vs feature count",
        });
    }
    if z.n_rows() != model.x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: model.x.nrows(),
            got: z.n_rows(),
            context: "matrix rows vs data rows",
        });
    }
    let resid = &model.x - z.to_dmatrix() * &model.a;
    let nd = (model.x.nrows() * model.x.ncols()) as f64;
    Ok(-0.5 * nd * (LN_2PI + model.sigma_n2.ln())
        - resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * model.sigma_n2))
}

/// Cholesky with escalating diagonal jitter; duplicate rows of Z make
/// near-singular Gram matrices common in small problems.
fn cholesky_jittered(mut m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(1.0);
    let mut jitter = 0.0;
    for _ in 0..8 {
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::new(m.clone()) {
            return Ok(ch);
        }
        jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 100.0 };
    }
    Err(Error::Numerical("cholesky failed despite jitter".into()))
}

/// Marginal log-likelihood with A integrated out: each data column is
/// Normal(0, sigma_a2 Z Z^T + sigma_n2 I_N). Uses the N x N form when
/// N <= I and the I x I Woodbury form otherwise (cubic cost in the smaller
/// dimension).
pub fn log_likelihood_collapsed(
    z: &FeatureMatrix,
    x: &DMatrix<f64>,
    sigma_a2: f64,
    sigma_n2: f64,
) -> Result<f64> {
    if z.n_rows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: z.n_rows(),
            context: "matrix rows vs data rows",
        });
    }
    let (n, d, i) = (x.nrows(), x.ncols(), z.width());
    let zm = z.to_dmatrix();
    let nd = (n * d) as f64;
    if n <= i {
        let mut c = sigma_a2 * &zm * zm.transpose();
        for r in 0..n {
            c[(r, r)] += sigma_n2;
        }
        let ch = cholesky_jittered(c)?;
        let logdet: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let solved = ch.solve(x);
        let quad: f64 = x.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
        Ok(-0.5 * (nd * LN_2PI + d as f64 * logdet + quad))
    } else {
        let mut m = zm.transpose() * &zm;
        for r in 0..i {
            m[(r, r)] += sigma_n2 / sigma_a2;
        }
        let ch = cholesky_jittered(m)?;
        let logdet_m: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let logdet =
            (n as f64 - i as f64) * sigma_n2.ln() + i as f64 * sigma_a2.ln() + logdet_m;
        let b = zm.transpose() * x;
        let solved = ch.solve(&b);
        let quad_corr: f64 = b.iter().zip(solved.iter()).map(|(a, s)| a * s).sum();
        let quad = (x.iter().map(|v| v * v).sum::<f64>() - quad_corr) / sigma_n2;
        Ok(-0.5 * (nd * LN_2PI + d as f64 * logdet + quad))
    }
}

/// Conjugate posterior over A given Z: columns share the covariance
/// sigma_n2 (Z^T Z + (sigma_n2/sigma_a2) I)^{-1}.
#[derive(Debug, Clone)]
pub struct PosteriorA {
    pub mean: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn posterior_a(
    z: &FeatureMatrix,
    x: &DMatrix<f64>,
    sigma_a2: f64,
    sigma_n2: f64,
) -> Result<PosteriorA> {
    if z.n_rows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: z.n_rows(),
            context: "matrix rows vs data rows",
        });
    }
    let zm = z.to_dmatrix();
    let i = z.width();
    let mut m = zm.transpose() * &zm;
    for r in 0..i {
        m[(r, r)] += sigma_n2 / sigma_a2;
    }
    let ch = cholesky_jittered(m)?;
    let mean = ch.solve(&(zm.transpose() * x));
    let covariance = ch.inverse() * sigma_n2;
    Ok(PosteriorA { mean, covariance })
}

/// One exact draw of A from its conjugate posterior.
pub fn sample_a(post: &PosteriorA, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let i = post.mean.nrows();
    let d = post.mean.ncols();
    let ch = cholesky_jittered(post.covariance.clone())?;
    let g = DMatrix::from_fn(i, d, |_, _| StandardNormal.sample(rng));
    Ok(&post.mean + ch.l() * g)
}
