//! Synthetic-data generators for the two benchmark experiment designs: the
//! 15-feature recovery task and the one-inflated-Poisson spike/slab task.

use crate::condbern::build_inclusion_table;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::restriction::RestrictingDistribution;
use crate::weights::stick_breaking_weights;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// 15 ground-truth features; 80% of rows activate a random 14 of them,
    /// 20% a single one. Per-row restriction: uniform over the true count
    /// plus or minus one.
    FifteenFeature,
    /// 80% of rows have exactly one feature, 20% a Poisson(lambda) count.
    /// `partial = true` emits per-group restrictions (delta_1 vs
    /// Poisson(lambda)); otherwise every row shares the mixture.
    OneInflatedPoisson { lambda: f64, partial: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scenario: Scenario,
    pub n_rows: usize,
    pub dims: usize,
    pub sigma_a2: f64,
    pub sigma_n2: f64,
}

impl SynthSpec {
    pub fn fifteen_feature() -> Self {
        SynthSpec {
            scenario: Scenario::FifteenFeature,
            n_rows: 500,
            dims: 36,
            sigma_a2: 1.0,
            sigma_n2: 0.25,
        }
    }

    pub fn one_inflated_poisson(lambda: f64, partial: bool) -> Self {
        SynthSpec {
            scenario: Scenario::OneInflatedPoisson { lambda, partial },
            n_rows: 500,
            dims: 36,
            sigma_a2: 1.0,
            sigma_n2: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.dims == 0 {
            return Err(Error::invalid("synthetic data needs positive dimensions"));
        }
        if !(self.sigma_a2 > 0.0 && self.sigma_n2 > 0.0) {
            return Err(Error::invalid("variances must be positive"));
        }
        if let Scenario::OneInflatedPoisson { lambda, .. } = self.scenario {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::invalid("slab mean lambda must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub x: DMatrix<f64>,
    pub z_true: FeatureMatrix,
    pub a_true: DMatrix<f64>,
    pub f_rows: Vec<RestrictingDistribution>,
    pub labels: Vec<&'static str>,
}

pub fn generate(spec: &SynthSpec, rng: &mut impl Rng) -> Result<SynthData> {
    spec.validate()?;
    let (z_true, f_rows, labels) = match &spec.scenario {
        Scenario::FifteenFeature => fifteen_feature_assignments(spec.n_rows, rng),
        Scenario::OneInflatedPoisson { lambda, partial } => {
            one_inflated_assignments(spec.n_rows, *lambda, *partial, rng)?
        }
    };
    let i_true = z_true.width();
    let a_true = DMatrix::from_fn(i_true, spec.dims, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        spec.sigma_a2.sqrt() * g
    });
    let mut x = z_true.to_dmatrix() * &a_true;
    let sd = spec.sigma_n2.sqrt();
    for r in 0..spec.n_rows {
        for c in 0..spec.dims {
            let g: f64 = StandardNormal.sample(rng);
            x[(r, c)] += sd * g;
        }
    }
    Ok(SynthData { x, z_true, a_true, f_rows, labels })
}

fn fifteen_feature_assignments(
    n_rows: usize,
    rng: &mut impl Rng,
) -> (FeatureMatrix, Vec<RestrictingDistribution>, Vec<&'static str>) {
    const I_TRUE: usize = 15;
    let n_sparse = n_rows / 5;
    let n_dense = n_rows - n_sparse;
    let mut z = FeatureMatrix::zeros(n_rows, I_TRUE);
    let mut f_rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for n in 0..n_dense {
        // A uniformly random 14-subset: all features but one.
        let out = rng.random_range(0..I_TRUE);
        for i in 0..I_TRUE {
            if i != out {
                z.set(n, i, 1);
            }
        }
        f_rows.push(RestrictingDistribution::uniform_window(14, 1));
        labels.push("dense");
    }
    for n in n_dense..n_rows {
        z.set(n, rng.random_range(0..I_TRUE), 1);
        f_rows.push(RestrictingDistribution::uniform_window(1, 1));
        labels.push("sparse");
    }
    (z, f_rows, labels)
}

fn one_inflated_assignments(
    n_rows: usize,
    lambda: f64,
    partial: bool,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, Vec<RestrictingDistribution>, Vec<&'static str>)> {
    let spike = RestrictingDistribution::point_mass(1);
    let slab = RestrictingDistribution::poisson(lambda)?;
    let mixture = RestrictingDistribution::mixture(vec![
        (0.8, spike.clone()),
        (0.2, slab.clone()),
    ])?;
    // Ground-truth columns from a stick-breaking draw wide enough for the
    // slab's truncated support; the generating concentration matches the
    // mean count so column frequencies decay realistically.
    let i_true = slab.support_max().max(15);
    let alpha_gen = 0.8 + 0.2 * lambda;
    let weights = stick_breaking_weights(alpha_gen, i_true, rng)?;
    let table = build_inclusion_table(&weights, slab.support_max())?;

    let mut z = FeatureMatrix::zeros(n_rows, i_true);
    let mut f_rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for n in 0..n_rows {
        let is_spike = rng.random::<f64>() < 0.8;
        let j = if is_spike { 1 } else { slab.sample(rng) };
        z.set_row(n, table.sample_row(j, rng)?)?;
        labels.push(if is_spike { "spike" } else { "slab" });
        f_rows.push(if partial {
            if is_spike { spike.clone() } else { slab.clone() }
        } else {
            mixture.clone()
        });
    }
    Ok((z, f_rows, labels))
}
