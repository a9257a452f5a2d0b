//! Restricting distributions: the pmf `f` over per-row counts of non-zero
//! entries. Unbounded variants (Poisson) are truncated at the smallest
//! support with cumulative mass >= 1 - 1e-10 and renormalized, so every
//! instance has finite support; the recursions downstream require that.

use crate::error::{Error, Result};
use rand::Rng;
use std::fmt;
use std::str::FromStr;

/// Mass threshold at which unbounded restricting distributions are truncated.
pub const TRUNCATION_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    PointMass(usize),
    UniformWindow { center: usize, halfwidth: usize },
    Poisson(f64),
    Mixture(Vec<(f64, RestrictingDistribution)>),
    Table(Vec<f64>),
}

/// A distribution over the number of non-zero entries in a row.
///
/// The pmf is stored densely over `0..=support_max` and sums to one exactly
/// (renormalized at construction). `support_max` is the largest count with
/// non-zero mass; call sites pairing an instance with a truncation level `I`
/// must check `support_max <= I`.
#[derive(Debug, Clone)]
pub struct RestrictingDistribution {
    variant: Variant,
    pmf: Vec<f64>,
    log_pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl PartialEq for RestrictingDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
    }
}

impl RestrictingDistribution {
    fn from_variant(variant: Variant, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("restricting distribution has empty support"));
        }
        if raw.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid("restriction pmf entries must be finite and non-negative"));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("restriction pmf has zero total mass"));
        }
        let mut pmf: Vec<f64> = raw.iter().map(|p| p / total).collect();
        // Drop trailing zero mass so support_max is tight.
        while pmf.len() > 1 && *pmf.last().unwrap() == 0.0 {
            pmf.pop();
        }
        let log_pmf = pmf
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(RestrictingDistribution { variant, pmf, log_pmf, cdf })
    }

    /// f = delta_J: every row has exactly `j` non-zero entries.
    pub fn point_mass(j: usize) -> Self {
        let mut raw = vec![0.0; j + 1];
        raw[j] = 1.0;
        Self::from_variant(Variant::PointMass(j), raw).expect("point mass is always valid")
    }

    /// Uniform over the integers in `center ± halfwidth`, clipped at zero.
    pub fn uniform_window(center: usize, halfwidth: usize) -> Self {
        let lo = center.saturating_sub(halfwidth);
        let hi = center + halfwidth;
        let mut raw = vec![0.0; hi + 1];
        for p in raw.iter_mut().take(hi + 1).skip(lo) {
            *p = 1.0;
        }
        Self::from_variant(Variant::UniformWindow { center, halfwidth }, raw)
            .expect("uniform window is always valid")
    }

    /// Poisson(lambda), truncated at cumulative mass 1 - 1e-10 and renormalized.
    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!("poisson lambda must be >= 0, got {lambda}")));
        }
        if lambda == 0.0 {
            return Ok(Self::point_mass(0));
        }
        let mut raw = Vec::new();
        let mut log_p = -lambda; // log pmf at 0
        let mut cum = 0.0;
        let mut k = 0usize;
        loop {
            raw.push(log_p.exp());
            cum += raw[k];
            if 1.0 - cum <= TRUNCATION_MASS && k as f64 >= lambda {
                break;
            }
            k += 1;
            log_p += lambda.ln() - (k as f64).ln();
            if k > 100_000 {
                return Err(Error::invalid(format!("poisson lambda {lambda} too large to truncate")));
            }
        }
        Self::from_variant(Variant::Poisson(lambda), raw)
    }

    /// Finite mixture. Component weights must be positive; they are normalized.
    pub fn mixture(parts: Vec<(f64, RestrictingDistribution)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if parts.iter().any(|(w, _)| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let wsum: f64 = parts.iter().map(|(w, _)| w).sum();
        let max_support = parts.iter().map(|(_, c)| c.support_max()).max().unwrap();
        let mut raw = vec![0.0; max_support + 1];
        for (w, comp) in &parts {
            for (k, &p) in comp.pmf.iter().enumerate() {
                raw[k] += (w / wsum) * p;
            }
        }
        Self::from_variant(Variant::Mixture(parts), raw)
    }

    /// Explicit pmf over `0..raw.len()`. Entries are renormalized.
    pub fn table(raw: Vec<f64>) -> Result<Self> {
        Self::from_variant(Variant::Table(raw.clone()), raw)
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    /// Largest count with non-zero mass.
    pub fn support_max(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn pmf(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    pub fn log_pmf(&self, k: usize) -> f64 {
        self.log_pmf.get(k).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, &p)| k as f64 * p).sum()
    }

    /// Some(j) if this is a point mass at j (the Gibbs location-update case).
    pub fn as_point_mass(&self) -> Option<usize> {
        let nonzero: Vec<usize> =
            self.pmf.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(k, _)| k).collect();
        if nonzero.len() == 1 {
            Some(nonzero[0])
        } else {
            None
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.support_max())
    }

    /// Error unless `support_max <= truncation`.
    pub fn check_truncation(&self, truncation: usize) -> Result<()> {
        if self.support_max() > truncation {
            Err(Error::SupportExceedsTruncation {
                support_max: self.support_max(),
                truncation,
            })
        } else {
            Ok(())
        }
    }
}

// Spec-string grammar, shared by the CLI `--f` flag and f_spec.json:
//   delta:J | uniform:center:halfwidth | poisson:lambda
//   | mix:w1*spec1+w2*spec2+... | table:p0,p1,...
impl fmt::Display for RestrictingDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.variant {
            Variant::PointMass(j) => write!(f, "delta:{j}"),
            Variant::UniformWindow { center, halfwidth } => write!(f, "uniform:{center}:{halfwidth}"),
            Variant::Poisson(lambda) => write!(f, "poisson:{lambda}"),
            Variant::Mixture(parts) => {
                write!(f, "mix:")?;
                for (idx, (w, comp)) in parts.iter().enumerate() {
                    if idx > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{w}*{comp}")?;
                }
                Ok(())
            }
            Variant::Table(raw) => {
                write!(f, "table:")?;
                for (idx, p) in raw.iter().enumerate() {
                    if idx > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for RestrictingDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("bad f spec '{s}': expected kind:args")))?;
        let parse_usize = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad integer '{t}' in f spec '{s}'")))
        };
        let parse_f64 = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number '{t}' in f spec '{s}'")))
        };
        match kind {
            "delta" => Ok(Self::point_mass(parse_usize(rest)?)),
            "uniform" => {
                let (c, h) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("bad f spec '{s}': uniform:center:halfwidth")))?;
                Ok(Self::uniform_window(parse_usize(c)?, parse_usize(h)?))
            }
            "poisson" => Self::poisson(parse_f64(rest)?),
            "table" => Self::table(rest.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?),
            "mix" => {
                let mut parts = Vec::new();
                for term in rest.split('+') {
                    let (w, spec) = term
                        .split_once('*')
                        .ok_or_else(|| Error::invalid(format!("bad mixture term '{term}': expected w*spec")))?;
                    if spec.trim_start().starts_with("mix:") {
                        return Err(Error::invalid("nested mixtures are not supported"));
                    }
                    parts.push((parse_f64(w)?, spec.parse::<RestrictingDistribution>()?));
                }
                Self::mixture(parts)
            }
            other => Err(Error::invalid(format!("unknown f spec kind '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngHandle;

    #[test]
    fn pmf_sums_to_one() {
        for f in [
            RestrictingDistribution::point_mass(3),
            RestrictingDistribution::uniform_window(5, 1),
            RestrictingDistribution::uniform_window(0, 1),
            RestrictingDistribution::poisson(4.5).unwrap(),
            RestrictingDistribution::table(vec![1.0, 2.0, 1.0]).unwrap(),
            RestrictingDistribution::mixture(vec![
                (0.8, RestrictingDistribution::point_mass(1)),
                (0.2, RestrictingDistribution::poisson(12.0).unwrap()),
            ])
            .unwrap(),
        ] {
            let total: f64 = (0..=f.support_max()).map(|k| f.pmf(k)).sum();
            assert!((total - 1.0).abs() < 1e-12, "{f}: total {total}");
        }
    }

    #[test]
    fn poisson_truncation_keeps_tail_mass_below_threshold() {
        let lambda = 7.0;
        let f = RestrictingDistribution::poisson(lambda).unwrap();
        // Untruncated tail mass beyond support_max.
        let mut cum = 0.0;
        let mut log_p = -lambda;
        for k in 0..=f.support_max() {
            if k > 0 {
                log_p += lambda.ln() - (k as f64).ln();
            }
            cum += log_p.exp();
        }
        assert!(1.0 - cum <= TRUNCATION_MASS * 1.001);
        // Renormalized pmf stays proportional to the Poisson pmf.
        let ratio = f.pmf(3) / f.pmf(7);
        let exact = (-lambda + 3.0 * lambda.ln() - ln_factorial(3)).exp()
            / (-lambda + 7.0 * lambda.ln() - ln_factorial(7)).exp();
        assert!((ratio - exact).abs() < 1e-10);
    }

    fn ln_factorial(k: usize) -> f64 {
        (1..=k).map(|i| (i as f64).ln()).sum()
    }

    #[test]
    fn uniform_window_clips_at_zero() {
        let f = RestrictingDistribution::uniform_window(0, 1);
        assert_eq!(f.support_max(), 1);
        assert!((f.pmf(0) - 0.5).abs() < 1e-15);
        assert!((f.pmf(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn point_mass_detection() {
        assert_eq!(RestrictingDistribution::point_mass(4).as_point_mass(), Some(4));
        assert_eq!(
            RestrictingDistribution::table(vec![0.0, 0.0, 1.0]).unwrap().as_point_mass(),
            Some(2)
        );
        assert_eq!(RestrictingDistribution::uniform_window(3, 1).as_point_mass(), None);
    }

    #[test]
    fn spec_string_round_trip() {
        for s in [
            "delta:3",
            "uniform:5:1",
            "poisson:2.5",
            "table:0.5,0.25,0.25",
            "mix:0.8*delta:1+0.2*poisson:12",
        ] {
            let f: RestrictingDistribution = s.parse().unwrap();
            let s2 = f.to_string();
            let f2: RestrictingDistribution = s2.parse().unwrap();
            assert_eq!(f, f2, "{s} -> {s2}");
        }
        assert!("mix:0.5*mix:1*delta:1+0.5*delta:2".parse::<RestrictingDistribution>().is_err());
        assert!("gamma:2".parse::<RestrictingDistribution>().is_err());
    }

    #[test]
    fn sampling_matches_pmf() {
        let f = RestrictingDistribution::table(vec![0.2, 0.0, 0.5, 0.3]).unwrap();
        let mut rng = RngHandle::new(11).rng();
        let n = 200_000;
        let mut counts = vec![0usize; f.support_max() + 1];
        for _ in 0..n {
            counts[f.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        for k in 0..=f.support_max() {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - f.pmf(k)).abs() < 0.005, "k={k} freq={freq}");
        }
    }

    #[test]
    fn support_check() {
        let f = RestrictingDistribution::poisson(5.0).unwrap();
        assert!(f.check_truncation(10).is_err());
        assert!(f.check_truncation(f.support_max()).is_ok());
    }
}
