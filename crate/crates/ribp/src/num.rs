//! Small numerical helpers shared across modules.

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn ln_poisson_pmf(k: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
}

pub(crate) fn poisson_pmf(k: usize, lambda: f64) -> f64 {
    ln_poisson_pmf(k, lambda).exp()
}

pub(crate) fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// logit with saturation so downstream sums cannot produce NaN from inf - inf.
pub(crate) fn safe_logit(p: f64) -> f64 {
    const CAP: f64 = 700.0;
    if p <= 0.0 {
        -CAP
    } else if p >= 1.0 {
        CAP
    } else {
        (p.ln() - (-p).ln_1p()).clamp(-CAP, CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_basics() {
        assert!((log_add_exp(0.0, 0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -1.0), -1.0);
        let a = -700.0;
        let b = -701.0;
        let direct = ((a as f64).exp() + (b as f64).exp()).ln();
        assert!(direct.is_infinite() || (log_add_exp(a, b) - direct).abs() < 1e-12);
        assert!((log_add_exp(a, b) - (a + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn poisson_pmf_normalizes() {
        let lambda = 3.7;
        let total: f64 = (0..60).map(|k| poisson_pmf(k, lambda)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_pdf_integrates_to_one() {
        let (a, b) = (2.5, 0.7);
        let n = 200_000;
        let total: f64 = (0..n)
            .map(|i| (i as f64 + 0.5) / n as f64)
            .map(|x| ln_beta_pdf(x, a, b).exp())
            .sum::<f64>()
            / n as f64;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
