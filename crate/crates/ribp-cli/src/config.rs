//! Fully-resolved run configurations. Each command resolves its
//! configuration as defaults <- optional TOML config file <- command-line
//! flags (flags win), validates it, and serializes the result verbatim into
//! the output bundle as `config.toml`, so a bundle can be re-run with
//! `--config <bundle>/config.toml` alone.

use crate::errors::{CliError, CliResult};
use ribp::{default_truncation, RestrictingDistribution, SimMethod, WeightKind};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn save_config<T: Serialize>(path: &Path, config: &T) -> CliResult<()> {
    let text =
        toml::to_string_pretty(config).map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(path, text).map_err(CliError::from)
}

fn parse_f(spec: &str) -> CliResult<RestrictingDistribution> {
    spec.parse::<RestrictingDistribution>().map_err(CliError::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub command: String,
    pub method: SimMethod,
    pub alpha: f64,
    pub c: f64,
    /// Truncation for the weight-conditioned methods; initial truncation for
    /// the exact retrospective sampler. Ignored by collapsed rejection.
    pub truncation: usize,
    pub weights: WeightKind,
    pub f: String,
    pub rows: usize,
    pub seed: u64,
    pub proposal_cap: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            command: "simulate".into(),
            method: SimMethod::Inclusion,
            alpha: 5.0,
            c: 1.0,
            truncation: 0, // 0 = derive from alpha
            weights: WeightKind::StickBreaking,
            f: "delta:5".into(),
            rows: 100,
            seed: 0,
            proposal_cap: 1_000_000,
        }
    }
}

impl SimulateConfig {
    pub fn resolve(&mut self) -> CliResult<RestrictingDistribution> {
        if self.truncation == 0 {
            self.truncation = default_truncation(self.alpha);
        }
        if self.alpha <= 0.0 || self.c <= 0.0 {
            return Err(CliError::config("alpha and c must be positive"));
        }
        let f = parse_f(&self.f)?;
        match self.method {
            SimMethod::CollapsedRejection => {}
            SimMethod::ExactRetrospective => {
                if self.c != 1.0 {
                    return Err(CliError::config(
                        "the exact retrospective sampler requires c = 1",
                    ));
                }
            }
            _ => {
                if f.support_max() > self.truncation {
                    return Err(CliError::config(format!(
                        "restriction support {} exceeds truncation {}",
                        f.support_max(),
                        self.truncation
                    )));
                }
                if self.weights == WeightKind::StickBreaking && self.c != 1.0 {
                    return Err(CliError::config(
                        "stick-breaking weights require c = 1; use --weights weak-limit",
                    ));
                }
                if self.weights == WeightKind::WeakLimit
                    && self.truncation as f64 <= self.alpha
                {
                    return Err(CliError::config("weak limit requires truncation > alpha"));
                }
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub command: String,
    pub alpha: f64,
    pub c: f64,
    pub j_values: Vec<usize>,
    pub replicates: usize,
    pub rows: usize,
    /// Truncation used in the rejection-comparison runs and as the exact
    /// sampler's initial truncation.
    pub truncation: usize,
    /// Truncation levels for the sorted feature-frequency curves.
    pub freq_truncations: Vec<usize>,
    pub weights: WeightKind,
    pub seed: u64,
    pub proposal_cap: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            command: "benchmark".into(),
            alpha: 5.0,
            c: 1.0,
            j_values: vec![2, 5, 8],
            replicates: 25,
            rows: 100,
            truncation: 0,
            freq_truncations: vec![10, 20, 40],
            weights: WeightKind::StickBreaking,
            seed: 0,
            proposal_cap: 10_000_000,
        }
    }
}

impl BenchmarkConfig {
    pub fn resolve(&mut self) -> CliResult<()> {
        if self.truncation == 0 {
            self.truncation = default_truncation(self.alpha);
        }
        if self.j_values.is_empty() || self.replicates == 0 {
            return Err(CliError::config("benchmark needs J values and replicates"));
        }
        let max_j = *self.j_values.iter().max().unwrap();
        if max_j > self.truncation {
            return Err(CliError::config("largest J exceeds the truncation level"));
        }
        for &t in &self.freq_truncations {
            if max_j > t {
                return Err(CliError::config(format!(
                    "J = {max_j} exceeds frequency-curve truncation {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    GibbsRibp,
    GibbsIbp,
    HybridViRibp,
    HybridViIbp,
}

impl FitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FitMethod::GibbsRibp => "gibbs-ribp",
            FitMethod::GibbsIbp => "gibbs-ibp",
            FitMethod::HybridViRibp => "hybrid-vi-ribp",
            FitMethod::HybridViIbp => "hybrid-vi-ibp",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "gibbs-ribp" => Ok(FitMethod::GibbsRibp),
            "gibbs-ibp" => Ok(FitMethod::GibbsIbp),
            "hybrid-vi-ribp" => Ok(FitMethod::HybridViRibp),
            "hybrid-vi-ibp" => Ok(FitMethod::HybridViIbp),
            other => Err(CliError::config(format!("unknown fit method '{other}'"))),
        }
    }

    pub fn restricted(&self) -> bool {
        matches!(self, FitMethod::GibbsRibp | FitMethod::HybridViRibp)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub command: String,
    pub method: FitMethod,
    /// 0 = derive from the restriction means (restricted methods only).
    pub alpha: f64,
    pub c: f64,
    /// 0 = derive from alpha and the restriction support.
    pub truncation: usize,
    pub sigma_a2: f64,
    pub sigma_n2: f64,
    pub iterations: u64,
    pub thin: u64,
    pub holdout: f64,
    pub resample_every: u64,
    pub elbo_tol: f64,
    pub seed: u64,
    /// Shared restriction spec string; empty = unrestricted.
    pub f: String,
    /// Path to a per-row f_spec.json; empty = none.
    pub per_row_f: String,
    /// Data CSV path.
    pub data: String,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            command: "fit".into(),
            method: FitMethod::GibbsRibp,
            alpha: 0.0,
            c: 1.0,
            truncation: 0,
            sigma_a2: 1.0,
            sigma_n2: 0.25,
            iterations: 300,
            thin: 10,
            holdout: 0.0,
            resample_every: 25,
            elbo_tol: 1e-6,
            seed: 0,
            f: String::new(),
            per_row_f: String::new(),
            data: String::new(),
        }
    }
}

impl FitConfig {
    /// Resolve the per-row restrictions for `n_rows` observations and fill
    /// the derived alpha/truncation defaults.
    pub fn resolve(&mut self, n_rows: usize) -> CliResult<Option<Vec<RestrictingDistribution>>> {
        let f_rows: Option<Vec<RestrictingDistribution>> =
            match (self.f.is_empty(), self.per_row_f.is_empty()) {
                (true, true) => None,
                (false, true) => Some(vec![parse_f(&self.f)?; n_rows]),
                (true, false) => {
                    let rows = crate::io::read_f_spec(Path::new(&self.per_row_f))?;
                    if rows.len() != n_rows {
                        return Err(CliError::data(format!(
                            "per-row f file has {} rows, data has {n_rows}",
                            rows.len()
                        )));
                    }
                    Some(rows)
                }
                (false, false) => {
                    return Err(CliError::config("give either --f or --per-row-f, not both"))
                }
            };
        if !self.method.restricted() {
            if f_rows.is_some() {
                return Err(CliError::config(format!(
                    "method {} is the unrestricted IBP; it refuses a restricting distribution \
                     (drop --f / --per-row-f)",
                    self.method.name()
                )));
            }
            if self.alpha <= 0.0 {
                return Err(CliError::config(
                    "unrestricted methods need an explicit --alpha",
                ));
            }
        } else if f_rows.is_none() {
            return Err(CliError::config(format!(
                "method {} needs a restriction: give --f or --per-row-f",
                self.method.name()
            )));
        }
        if self.alpha == 0.0 {
            // Mean number of features per observation under the restrictions.
            let fs = f_rows.as_ref().unwrap();
            self.alpha =
                fs.iter().map(|f| f.mean()).sum::<f64>() / fs.len().max(1) as f64;
        }
        if self.truncation == 0 {
            let support = f_rows
                .as_ref()
                .map(|fs| fs.iter().map(|f| f.support_max()).max().unwrap_or(0))
                .unwrap_or(0);
            self.truncation = (support + 1).max(self.alpha.ceil() as usize + 1).max(20);
        }
        if self.truncation as f64 <= self.alpha {
            return Err(CliError::config("truncation must exceed alpha"));
        }
        if let Some(fs) = &f_rows {
            for f in fs {
                if f.support_max() > self.truncation {
                    return Err(CliError::config(format!(
                        "restriction support {} exceeds truncation {}",
                        f.support_max(),
                        self.truncation
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(CliError::config("holdout fraction must be in [0, 1)"));
        }
        if self.thin == 0 {
            return Err(CliError::config("thin must be >= 1"));
        }
        Ok(f_rows)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub command: String,
    pub spec: ribp::synth::SynthSpec,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            command: "synth".into(),
            spec: ribp::synth::SynthSpec::fifteen_feature(),
            seed: 0,
        }
    }
}
