//! Goodness-of-fit helpers used by the simulation test suites and the
//! benchmark harness checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy)]
pub struct Chi2Result {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn chi2_p(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df > 0");
    1.0 - dist.cdf(statistic)
}

/// Pool cells whose expected count falls below `min_expected` into a single
/// overflow cell. Returns (observed, expected) after pooling.
fn pool(observed: &[u64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut pooled_o = 0.0;
    let mut pooled_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e < min_expected {
            pooled_o += o as f64;
            pooled_e += e;
        } else {
            obs.push(o as f64);
            exp.push(e);
        }
    }
    if pooled_e > 0.0 {
        obs.push(pooled_o);
        exp.push(pooled_e);
    }
    (obs, exp)
}

/// Chi-square goodness of fit of observed counts against a fully specified
/// null pmf. Cells with expected count < 5 are pooled.
pub fn chi2_gof(observed: &[u64], null_probs: &[f64]) -> Chi2Result {
    assert_eq!(observed.len(), null_probs.len());
    let n: u64 = observed.iter().sum();
    let expected: Vec<f64> = null_probs.iter().map(|p| p * n as f64).collect();
    chi2_gof_expected(observed, &expected)
}

/// As [`chi2_gof`] but with expected counts given directly (pooled-mixture
/// nulls where each draw has its own cell probabilities).
pub fn chi2_gof_expected(observed: &[u64], expected: &[f64]) -> Chi2Result {
    let (obs, exp) = pool(observed, expected, 5.0);
    if exp.len() < 2 {
        return Chi2Result { statistic: 0.0, df: 0, p_value: 1.0 };
    }
    let statistic: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = exp.len() - 1;
    Chi2Result { statistic, df, p_value: chi2_p(statistic, df) }
}

/// Two-sample chi-square test that two count vectors come from the same
/// categorical distribution. Columns with small pooled expectation are merged.
pub fn chi2_two_sample(a: &[u64], b: &[u64]) -> Chi2Result {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let total = na + nb;
    if total == 0.0 {
        return Chi2Result { statistic: 0.0, df: 0, p_value: 1.0 };
    }
    // Pool columns by the smaller row's expected count.
    let pooled_probs: Vec<f64> =
        a.iter().zip(b).map(|(&x, &y)| (x + y) as f64 / total).collect();
    let min_n = na.min(nb);
    let keep: Vec<bool> = pooled_probs.iter().map(|p| p * min_n >= 5.0).collect();
    let mut cols: Vec<(f64, f64)> = Vec::new();
    let mut overflow = (0.0, 0.0);
    let mut any_overflow = false;
    for i in 0..a.len() {
        if keep[i] {
            cols.push((a[i] as f64, b[i] as f64));
        } else {
            overflow.0 += a[i] as f64;
            overflow.1 += b[i] as f64;
            any_overflow = true;
        }
    }
    if any_overflow {
        cols.push(overflow);
    }
    if cols.len() < 2 {
        return Chi2Result { statistic: 0.0, df: 0, p_value: 1.0 };
    }
    let mut statistic = 0.0;
    for &(oa, ob) in &cols {
        let p = (oa + ob) / total;
        let (ea, eb) = (p * na, p * nb);
        if ea > 0.0 {
            statistic += (oa - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            statistic += (ob - eb).powi(2) / eb;
        }
    }
    let df = cols.len() - 1;
    Chi2Result { statistic, df, p_value: chi2_p(statistic, df) }
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seeded holdout mask: `round(fraction * n_rows * dims)` distinct (row, col)
/// entries, sorted, drawn by partial Fisher-Yates.
pub fn holdout_mask(
    n_rows: usize,
    dims: usize,
    fraction: f64,
    handle: crate::rng::RngHandle,
) -> Vec<(usize, usize)> {
    use rand::Rng;
    let total = n_rows * dims;
    let k = (fraction * total as f64).round() as usize;
    if k == 0 || total == 0 {
        return Vec::new();
    }
    let mut rng = handle.rng();
    let mut indices: Vec<usize> = (0..total).collect();
    for t in 0..k.min(total) {
        let pick = rng.random_range(t..total);
        indices.swap(t, pick);
    }
    let mut mask: Vec<usize> = indices[..k.min(total)].to_vec();
    mask.sort_unstable();
    mask.into_iter().map(|i| (i / dims, i % dims)).collect()
}

/// Total-variation distance between two pmfs over a shared index range.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|k| {
            (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
}

/// Bin continuous samples into `k` cells at the pooled empirical quantiles,
/// for two-sample chi-square tests on continuous statistics.
pub fn quantile_bins(a: &[f64], b: &[f64], k: usize) -> (Vec<u64>, Vec<u64>) {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let edges: Vec<f64> =
        (1..k).map(|j| pooled[(j * pooled.len()) / k]).collect();
    let bin = |x: f64| edges.partition_point(|&e| e <= x);
    let mut ca = vec![0u64; k];
    let mut cb = vec![0u64; k];
    for &x in a {
        ca[bin(x)] += 1;
    }
    for &x in b {
        cb[bin(x)] += 1;
    }
    (ca, cb)
}
