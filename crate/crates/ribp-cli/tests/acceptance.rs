//! Acceptance gate: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them). Tolerances and
//! thresholds are pinned in code; statistical checks run at fixed seeds.

use ribp::condbern::sample_fixed_count;
use ribp::lingauss::posterior_a;
use ribp::matrix::FeatureMatrix;
use ribp::mcmc::{resample_data, run_chain, sweep, ChainConfig, GibbsState};
use ribp::stats::{chi2_gof, chi2_two_sample, holdout_mask, median, quantile_bins, total_variation};
use ribp::synth::{generate, SynthSpec};
use ribp::vi::{coordinate_sweep, elbo, hybrid_fit, update_a, HybridConfig, VariationalState};
use ribp::{
    build_inclusion_table, esscher_transform, restricted_bernoulli_log_pmf,
    sample_collapsed_rejection, sample_exact_retrospective, sample_inclusion,
    sample_naive_nonexchangeable, sample_uncollapsed_rejection, ExactOptions,
    RestrictingDistribution, RngHandle, TiltParameter, TruncatedWeights, WeightKind,
};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

fn pass(id: &str, detail: &str) {
    println!("ACCEPTANCE {id}: PASS - {detail}");
}

fn check(id: &str, ok: bool, detail: &str) {
    assert!(ok, "ACCEPTANCE {id}: FAIL - {detail}");
}

fn check_runtime(id: &str, start: Instant, limit_secs: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    check(id, elapsed < limit_secs, &format!("runtime {elapsed:.1}s exceeds {limit_secs}s"));
}

// -- enumeration oracle -----------------------------------------------------

fn all_patterns(width: usize) -> Vec<Vec<u8>> {
    (0u32..1 << width)
        .map(|bits| (0..width).map(|b| ((bits >> b) & 1) as u8).collect())
        .collect()
}

fn pattern_prob(z: &[u8], probs: &[f64]) -> f64 {
    z.iter().zip(probs).map(|(&v, &p)| if v == 1 { p } else { 1.0 - p }).product()
}

fn brute_s(probs: &[f64], j: usize) -> f64 {
    all_patterns(probs.len())
        .iter()
        .filter(|z| z.iter().map(|&v| v as usize).sum::<usize>() == j)
        .map(|z| pattern_prob(z, probs))
        .sum()
}

// criterion 1: exp(restricted_bernoulli_log_pmf) matches exhaustive
// enumeration over all 2^I patterns within 1e-10 for delta, uniform-window,
// and truncated-Poisson restrictions; runtime < 10 s.
#[test]
fn criterion_01_pmf_oracle() {
    let start = Instant::now();
    let mut rng = RngHandle::new(101).rng();
    let weights = ribp::stick_breaking_weights(3.0, 12, &mut rng).unwrap();
    let probs = weights.as_slice().to_vec();
    let poisson = RestrictingDistribution::poisson(0.75).unwrap();
    assert!(poisson.support_max() <= 12, "truncated Poisson support fits I = 12");
    let restrictions = vec![
        RestrictingDistribution::point_mass(4),
        RestrictingDistribution::uniform_window(6, 2),
        poisson,
    ];
    let mut worst = 0.0f64;
    for f in &restrictions {
        // Enumeration-side pmf: f(J) * bern(z) / sum of bern over sum-J sets.
        let s: Vec<f64> = (0..=probs.len()).map(|j| brute_s(&probs, j)).collect();
        let mut total = 0.0;
        for z in all_patterns(probs.len()) {
            let j: usize = z.iter().map(|&v| v as usize).sum();
            let exact = f.pmf(j) * pattern_prob(&z, &probs) / s[j];
            let got = restricted_bernoulli_log_pmf(&z, &weights, f).unwrap().exp();
            worst = worst.max((got - exact).abs());
            total += got;
        }
        check("1", worst < 1e-10, &format!("pmf mismatch {worst} for f = {f}"));
        check("1", (total - 1.0).abs() < 1e-10, &format!("pmf total {total} for f = {f}"));
    }
    check_runtime("1", start, 10.0);
    pass("1", &format!("pmf oracle at I = 12, worst deviation {worst:.2e}"));
}

// criterion 2: S and eta match brute force within 1e-10; sum_k eta = J
// within 1e-8; eta invariant under Esscher tilting within 1e-8.
#[test]
fn criterion_02_s_recursion_and_eta_oracle() {
    let mut rng = RngHandle::new(102).rng();
    let weights = ribp::stick_breaking_weights(2.5, 11, &mut rng).unwrap();
    let probs = weights.as_slice().to_vec();
    let i_max = probs.len();
    let table = build_inclusion_table(&weights, i_max).unwrap();
    let mut worst_s = 0.0f64;
    let mut worst_eta = 0.0f64;
    for j in 0..=i_max {
        worst_s = worst_s.max((table.log_row_sum_pmf(j).exp() - brute_s(&probs, j)).abs());
    }
    for j in 1..=i_max {
        let s_j = brute_s(&probs, j);
        let mut eta_sum = 0.0;
        for k in 0..i_max {
            let joint: f64 = all_patterns(i_max)
                .iter()
                .filter(|z| {
                    z[k] == 1 && z.iter().map(|&v| v as usize).sum::<usize>() == j
                })
                .map(|z| pattern_prob(z, &probs))
                .sum();
            worst_eta = worst_eta.max((table.eta(k, j) - joint / s_j).abs());
            eta_sum += table.eta(k, j);
        }
        check("2", (eta_sum - j as f64).abs() < 1e-8, &format!("sum eta = {eta_sum} at J = {j}"));
    }
    check("2", worst_s < 1e-10, &format!("S mismatch {worst_s}"));
    check("2", worst_eta < 1e-10, &format!("eta mismatch {worst_eta}"));

    let mut worst_tilt = 0.0f64;
    for beta in [-1.0, 2.0] {
        let tilted = esscher_transform(&weights, TiltParameter(beta));
        let table_t = build_inclusion_table(&tilted, i_max).unwrap();
        for j in 0..=i_max {
            for k in 0..i_max {
                worst_tilt = worst_tilt.max((table.eta(k, j) - table_t.eta(k, j)).abs());
            }
        }
    }
    check("2", worst_tilt < 1e-8, &format!("eta tilt deviation {worst_tilt}"));
    pass(
        "2",
        &format!("S dev {worst_s:.2e}, eta dev {worst_eta:.2e}, tilt dev {worst_tilt:.2e}"),
    );
}

// criterion 3: the naive construction reproduces the closed-form
// non-exchangeability values at alpha = 1 within 3 Monte-Carlo standard
// errors over 1e5 runs, while collapsed rejection is pairwise symmetric
// (chi-square p > 0.01). Runtime < 2 min.
#[test]
fn criterion_03_nonexchangeability_numbers() {
    let start = Instant::now();
    let runs = 100_000u64;
    let handle = RngHandle::new(103);
    let dish = |m: &FeatureMatrix, n: usize| m.row(n).iter().position(|&v| v == 1).unwrap();

    let (mut z2_first, mut ev_a, mut ev_b) = (0u64, 0u64, 0u64);
    for r in 0..runs {
        let mut rng = handle.stream(r).rng();
        let m = sample_naive_nonexchangeable(1.0, 3, &mut rng).unwrap();
        let (d1, d2, d3) = (dish(&m, 0), dish(&m, 1), dish(&m, 2));
        z2_first += (d2 == d1) as u64;
        ev_a += (d2 == d1 && d3 != d1) as u64;
        ev_b += (d2 != d1 && d3 == d1) as u64;
    }
    let n = runs as f64;
    let mut reported = Vec::new();
    for (label, hits, expect) in [
        ("P*(Z2 shares dish 1)", z2_first, 2.0 / 3.0),
        ("P*(pair A)", ev_a, 2.0 / 21.0),
        ("P*(pair B)", ev_b, 1.0 / 8.0),
    ] {
        let freq = hits as f64 / n;
        let se = (expect * (1.0 - expect) / n).sqrt();
        check(
            "3",
            (freq - expect).abs() <= 3.0 * se,
            &format!("{label}: {freq:.5} vs {expect:.5} (3se = {:.5})", 3.0 * se),
        );
        reported.push(format!("{label} = {freq:.4}"));
    }

    let f = RestrictingDistribution::point_mass(1);
    let (mut sym_a, mut sym_b) = (0u64, 0u64);
    for r in 0..runs {
        let mut rng = handle.stream(runs + r).rng();
        let (m, _) = sample_collapsed_rejection(1.0, &f, 3, &mut rng).unwrap();
        let (d1, d2, d3) = (dish(&m, 0), dish(&m, 1), dish(&m, 2));
        sym_a += (d2 == d1 && d3 != d1) as u64;
        sym_b += (d2 != d1 && d3 == d1) as u64;
    }
    let r = chi2_two_sample(&[sym_a, runs - sym_a], &[sym_b, runs - sym_b]);
    check(
        "3",
        r.p_value > 0.01,
        &format!("collapsed pair symmetry: A = {sym_a}, B = {sym_b}, p = {}", r.p_value),
    );
    check_runtime("3", start, 120.0);
    pass(
        "3",
        &format!(
            "{}; collapsed symmetric (A = {sym_a}, B = {sym_b}, p = {:.3})",
            reported.join(", "),
            r.p_value
        ),
    );
}

// criterion 4: the five samplers agree at f = delta_3, alpha = 2 — the
// weight-conditioned methods match the exact conditional pattern law on
// I = 6 (chi-square at 0.01, 1e5 draws), and every method's row sums equal 3.
#[test]
fn criterion_04_sampler_agreement() {
    let alpha = 2.0;
    let f = RestrictingDistribution::point_mass(3);
    let handle = RngHandle::new(104);
    let weights = ribp::stick_breaking_weights(alpha, 6, &mut handle.stream(0).rng()).unwrap();
    let probs = weights.as_slice().to_vec();

    // Exact conditional pmf over the C(6,3) patterns by enumeration.
    let patterns: Vec<Vec<u8>> = all_patterns(6)
        .into_iter()
        .filter(|z| z.iter().map(|&v| v as usize).sum::<usize>() == 3)
        .collect();
    let s3 = brute_s(&probs, 3);
    let null: Vec<f64> = patterns.iter().map(|z| pattern_prob(z, &probs) / s3).collect();
    let index: HashMap<Vec<u8>, usize> =
        patterns.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();

    let draws = 100_000usize;
    let mut p_values = Vec::new();
    for (label, stream) in [("uncollapsed", 1u64), ("tilted", 2), ("inclusion", 3)] {
        let mut rng = handle.stream(stream).rng();
        let matrix = match label {
            "uncollapsed" => {
                sample_uncollapsed_rejection(&weights, &f, draws, &mut rng, false).unwrap().0
            }
            "tilted" => {
                sample_uncollapsed_rejection(&weights, &f, draws, &mut rng, true).unwrap().0
            }
            _ => sample_inclusion(&weights, &f, draws, &mut rng).unwrap().0,
        };
        let mut counts = vec![0u64; patterns.len()];
        for n in 0..matrix.n_rows() {
            counts[index[matrix.row(n)]] += 1;
        }
        check("4", matrix.row_counts().iter().all(|&j| j == 3), &format!("{label} row sums"));
        let r = chi2_gof(&counts, &null);
        check("4", r.p_value > 0.01, &format!("{label} pattern chi2 p = {}", r.p_value));
        p_values.push(format!("{label} p = {:.3}", r.p_value));
    }

    let (collapsed, _) =
        sample_collapsed_rejection(alpha, &f, 3_000, &mut handle.stream(4).rng()).unwrap();
    check("4", collapsed.row_counts().iter().all(|&j| j == 3), "collapsed row sums");
    let (exact, _, _) = sample_exact_retrospective(
        alpha,
        &f,
        3_000,
        &mut handle.stream(5).rng(),
        ExactOptions::new(25),
    )
    .unwrap();
    check("4", exact.row_counts().iter().all(|&j| j == 3), "exact row sums");
    pass("4", &format!("{}; row sums exact for all five", p_values.join(", ")));
}

// -- shared benchmark bundle for criteria 5 and 6 ---------------------------

fn benchmark_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join("ribp-acceptance-benchmark");
        let _ = std::fs::remove_dir_all(&dir);
        let status = Command::new(env!("CARGO_BIN_EXE_ribp"))
            .args([
                "benchmark",
                "--out",
                dir.to_str().unwrap(),
                "--seed",
                "42",
            ])
            .status()
            .expect("benchmark run");
        assert!(status.success(), "benchmark command failed");
        dir
    })
}

fn read_csv(path: &Path, kind: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("#ribp-csv {kind} v1"));
    lines.next();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

// criterion 5: benchmark shape at alpha = 5, J in {2,5,8}, 25 x 100.
// Inclusion sampling has exactly zero rejections; tilted median rejections
// fall strictly below untilted for every J; J = 5 yields the fewest
// rejections among {2,5,8} for the methods that propose from the untilted
// process (collapsed, uncollapsed, exact) — tilting removes the
// J-dependence by design, so the tilted sampler is exempt from the ordering.
// Runtime < 10 min.
#[test]
fn criterion_05_benchmark_rejection_shape() {
    let start = Instant::now();
    let rows = read_csv(&benchmark_dir().join("rejections.csv"), "benchmark-rejections");
    let mut rejections: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    for row in &rows {
        rejections
            .entry((row[0].clone(), row[1].parse().unwrap()))
            .or_default()
            .push(row[3].parse().unwrap());
    }
    let med = |m: &str, j: usize| median(&rejections[&(m.to_string(), j)]);

    for j in [2usize, 5, 8] {
        let incl = &rejections[&("inclusion".to_string(), j)];
        check("5", incl.iter().all(|&r| r == 0.0), &format!("inclusion rejections at J = {j}"));
        check(
            "5",
            med("tilted-rejection", j) < med("uncollapsed-rejection", j),
            &format!(
                "tilted {} !< untilted {} at J = {j}",
                med("tilted-rejection", j),
                med("uncollapsed-rejection", j)
            ),
        );
    }
    for m in ["collapsed-rejection", "uncollapsed-rejection", "exact-retrospective"] {
        let (m2, m5, m8) = (med(m, 2), med(m, 5), med(m, 8));
        check("5", m5 < m2 && m5 < m8, &format!("{m}: medians J2 = {m2}, J5 = {m5}, J8 = {m8}"));
    }
    check_runtime("5", start, 600.0);
    pass(
        "5",
        &format!(
            "inclusion 0 everywhere; tilted medians {:?} < untilted {:?}; J5 minimal for untilted-proposal methods",
            [med("tilted-rejection", 2), med("tilted-rejection", 5), med("tilted-rejection", 8)],
            [
                med("uncollapsed-rejection", 2),
                med("uncollapsed-rejection", 5),
                med("uncollapsed-rejection", 8)
            ]
        ),
    );
}

// criterion 6: sorted mean empirical feature frequencies from the
// approximate methods at I in {20, 40} lie within 3 combined standard
// errors (plus a 0.002 absolute floor for fp-level rank noise) of the exact
// retrospective curve at J = 5; the visible over-estimation at I = 10,
// J = 8 is tolerated and not asserted.
#[test]
fn criterion_06_feature_frequency_curves() {
    let rows = read_csv(&benchmark_dir().join("feature_freqs.csv"), "benchmark-freqs");
    let mut curves: HashMap<(String, String, usize), Vec<(f64, f64)>> = HashMap::new();
    for row in &rows {
        let key = (row[0].clone(), row[1].clone(), row[2].parse().unwrap());
        let rank: usize = row[3].parse().unwrap();
        let entry = curves.entry(key).or_default();
        assert_eq!(entry.len(), rank);
        entry.push((row[4].parse().unwrap(), row[5].parse().unwrap()));
    }
    let exact = &curves[&("exact-retrospective".to_string(), "full".to_string(), 5usize)];
    let mut max_excess = 0.0f64;
    for method in ["uncollapsed-rejection", "tilted-rejection", "inclusion"] {
        for trunc in ["20", "40"] {
            let approx = &curves[&(method.to_string(), trunc.to_string(), 5usize)];
            for (rank, &(mean_a, se_a)) in approx.iter().enumerate() {
                let (mean_e, se_e) = exact.get(rank).copied().unwrap_or((0.0, 0.0));
                let band = 3.0 * (se_a.powi(2) + se_e.powi(2)).sqrt() + 0.002;
                let diff = (mean_a - mean_e).abs();
                max_excess = max_excess.max(diff - band);
                check(
                    "6",
                    diff <= band,
                    &format!("{method} I = {trunc} rank {rank}: |{mean_a:.4} - {mean_e:.4}| > {band:.4}"),
                );
            }
        }
    }
    // The tolerated regime really is off: report the I = 10, J = 8 excess.
    let approx10 = &curves[&("inclusion".to_string(), "10".to_string(), 8usize)];
    let exact8 = &curves[&("exact-retrospective".to_string(), "full".to_string(), 8usize)];
    let overshoot: f64 = approx10
        .iter()
        .enumerate()
        .map(|(rank, &(m, _))| m - exact8.get(rank).map(|&(e, _)| e).unwrap_or(0.0))
        .sum::<f64>()
        / approx10.len() as f64;
    pass(
        "6",
        &format!(
            "J = 5 curves inside bands at I = 20/40 (max excess {max_excess:.4}); I = 10, J = 8 over-estimates by {overshoot:.3} per rank (tolerated)"
        ),
    );
}

// criterion 7: Geweke getting-it-right on I = 5, N = 4, D = 2 — forward
// draws versus the successive-conditional chain agree on the row-sum, m_i,
// and sum-pi marginals (chi-square, Bonferroni-corrected p > 0.01).
// Runtime < 5 min.
#[test]
fn criterion_07_geweke_getting_it_right() {
    let start = Instant::now();
    let (n_rows, dims, truncation) = (4usize, 2usize, 5usize);
    let (alpha, c, sigma_a2, sigma_n2) = (1.5, 1.0, 1.0, 0.5);
    let f = RestrictingDistribution::table(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let f_rows = Some(vec![f; n_rows]);

    struct Stats {
        row_sums: Vec<u64>,
        m_counts: Vec<Vec<u64>>,
        sum_pi: Vec<f64>,
    }
    impl Stats {
        fn new(truncation: usize, n_rows: usize) -> Self {
            Stats {
                row_sums: vec![0; 4],
                m_counts: vec![vec![0; n_rows + 1]; truncation],
                sum_pi: Vec::new(),
            }
        }
        fn record(&mut self, state: &GibbsState) {
            for &j in state.z.row_counts() {
                self.row_sums[j] += 1;
            }
            for (i, &m) in state.z.column_counts().iter().enumerate() {
                self.m_counts[i][m] += 1;
            }
            self.sum_pi.push(state.weights.sum());
        }
    }

    let forward_draws = 30_000u64;
    let mut forward = Stats::new(truncation, n_rows);
    let handle = RngHandle::new(107);
    {
        let mut rng = handle.stream(0).rng();
        for _ in 0..forward_draws {
            let state = GibbsState::forward_draw(
                n_rows, dims, f_rows.clone(), alpha, c, truncation, sigma_a2, sigma_n2,
                &mut rng,
            )
            .unwrap();
            forward.record(&state);
        }
    }

    let mut chain = Stats::new(truncation, n_rows);
    {
        let mut rng = handle.stream(1).rng();
        let mut state = GibbsState::forward_draw(
            n_rows, dims, f_rows, alpha, c, truncation, sigma_a2, sigma_n2, &mut rng,
        )
        .unwrap();
        let (burn, thin, keep) = (2_000u64, 10u64, 30_000u64);
        for _ in 0..burn {
            sweep(&mut state, &mut rng).unwrap();
            resample_data(&mut state, &mut rng);
        }
        let mut kept = 0;
        while kept < keep {
            for _ in 0..thin {
                sweep(&mut state, &mut rng).unwrap();
                resample_data(&mut state, &mut rng);
            }
            chain.record(&state);
            kept += 1;
        }
    }

    let mut p_values = vec![chi2_two_sample(&forward.row_sums, &chain.row_sums).p_value];
    for i in 0..truncation {
        p_values.push(chi2_two_sample(&forward.m_counts[i], &chain.m_counts[i]).p_value);
    }
    let (fa, fb) = quantile_bins(&forward.sum_pi, &chain.sum_pi, 10);
    p_values.push(chi2_two_sample(&fa, &fb).p_value);

    let n_tests = p_values.len() as f64;
    let min_p = p_values.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        "7",
        min_p * n_tests > 0.01,
        &format!("Bonferroni-corrected min p = {:.4} (raw {min_p:.5}, {n_tests} tests)", min_p * n_tests),
    );
    check_runtime("7", start, 300.0);
    pass(
        "7",
        &format!(
            "{} marginal tests, raw p values min {min_p:.3} (corrected {:.3})",
            p_values.len(),
            min_p * n_tests
        ),
    );
}

// criterion 8: the ELBO at fixed weights never decreases across a full
// coordinate sweep (tolerance 1e-8) on 20 random instances, and the
// degenerate-q fixed point of the A updates matches the exact conjugate
// posterior mean within 1e-8.
#[test]
fn criterion_08_vi_correctness() {
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};
    let normal = |rng: &mut rand_chacha::ChaCha12Rng| -> f64 { StandardNormal.sample(rng) };
    let mut worst_drop = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = RngHandle::new(108 + seed).rng();
        let n_rows = 5 + (seed as usize % 3);
        let i_max = 4 + (seed as usize % 4);
        let x = DMatrix::from_fn(n_rows, 3, |_, _| normal(&mut rng));
        let f = if seed % 2 == 0 {
            RestrictingDistribution::uniform_window(2, 1)
        } else {
            RestrictingDistribution::table(vec![0.2, 0.5, 0.3]).unwrap()
        };
        let weights =
            ribp::weak_limit_weights(1.2, 1.0, i_max, &mut rng).unwrap();
        let mut state =
            VariationalState::init(x, Some(vec![f; n_rows]), weights, 1.0, 0.5).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..15 {
            coordinate_sweep(&mut state).unwrap();
            let bound = elbo(&state);
            worst_drop = worst_drop.max(prev - bound);
            check("8", bound >= prev - 1e-8, &format!("seed {seed}: ELBO dropped {prev} -> {bound}"));
            prev = bound;
        }
    }

    // Degenerate q(Z): iterate the A update to its fixed point and compare
    // with the exact conjugate posterior mean.
    let mut rng = RngHandle::new(208).rng();
    let x = DMatrix::from_fn(7, 3, |_, _| normal(&mut rng));
    let weights = ribp::weak_limit_weights(1.0, 1.0, 5, &mut rng).unwrap();
    let f = RestrictingDistribution::point_mass(2);
    let mut state =
        VariationalState::init(x.clone(), Some(vec![f; 7]), weights, 1.0, 0.5).unwrap();
    let mut z = FeatureMatrix::zeros(7, 5);
    for n in 0..7 {
        let row = sample_fixed_count(&[0.5; 5], 2, &mut rng).unwrap();
        for (i, &v) in row.iter().enumerate() {
            state.nu[(n, i)] = v as f64;
            if v == 1 {
                z.set(n, i, 1);
            }
        }
    }
    state.refresh_s();
    for _ in 0..500 {
        update_a(&mut state).unwrap();
    }
    let post = posterior_a(&z, &x, 1.0, 0.5).unwrap();
    let dev = (&state.phi - &post.mean).amax();
    check("8", dev < 1e-8, &format!("degenerate fixed point deviates {dev}"));
    pass("8", &format!("ELBO monotone on 20 instances (worst drop {worst_drop:.2e}); fixed point dev {dev:.2e}"));
}

// criterion 9: on the 15-feature dataset the restricted hybrid-VI recovers a
// per-row active-count histogram strictly closer (total variation) to the
// truth than the unrestricted hybrid-VI baseline on at least 4 of 5 seeds.
// Runtime < 15 min.
#[test]
fn criterion_09_fifteen_feature_recovery() {
    let start = Instant::now();
    let spec = SynthSpec::fifteen_feature();
    let truncation = 18usize;
    let config = HybridConfig {
        alpha: 11.4, // mean features per observation: 0.8 * 14 + 0.2 * 1
        c: 1.0,
        truncation,
        sigma_a2: spec.sigma_a2,
        sigma_n2: spec.sigma_n2,
        sweeps: 300,
        resample_every: 25,
        elbo_tol: 1e-6,
    };
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let handle = RngHandle::new(900 + seed);
        let data = generate(&spec, &mut handle.stream(0).rng()).unwrap();
        let mut true_hist = vec![0.0; truncation + 1];
        for &j in data.z_true.row_counts() {
            true_hist[j] += 1.0 / data.z_true.n_rows() as f64;
        }
        let hist_of = |out: &ribp::vi::HybridOutput| {
            let half = &out.samples[out.samples.len() / 2..];
            let mut hist = vec![0.0; truncation + 1];
            let mut total = 0.0;
            for s in half {
                for &j in s.z.row_counts() {
                    hist[j] += 1.0;
                    total += 1.0;
                }
            }
            for h in hist.iter_mut() {
                *h /= total;
            }
            hist
        };
        let ribp_out = hybrid_fit(
            &config,
            &data.x,
            Some(data.f_rows.clone()),
            &[],
            handle.stream(1),
        )
        .unwrap();
        let ibp_out = hybrid_fit(&config, &data.x, None, &[], handle.stream(2)).unwrap();
        let tv_ribp = total_variation(&hist_of(&ribp_out), &true_hist);
        let tv_ibp = total_variation(&hist_of(&ibp_out), &true_hist);
        if tv_ribp < tv_ibp {
            wins += 1;
        }
        detail.push(format!("seed {seed}: R-IBP {tv_ribp:.3} vs IBP {tv_ibp:.3}"));
    }
    check("9", wins >= 4, &format!("R-IBP closer on only {wins}/5 seeds ({})", detail.join("; ")));
    check_runtime("9", start, 900.0);
    pass("9", &format!("TV wins {wins}/5: {}", detail.join("; ")));
}

// criterion 10: one-inflated-Poisson heldout trend — Gibbs R-IBP heldout
// NLL <= Gibbs IBP at lambda in {9, 12} on >= 4 of 5 seeds, and the
// partially-exchangeable R-IBP <= the exchangeable R-IBP at lambda = 12 on
// >= 3 of 5 seeds. Runtime < 30 min.
#[test]
fn criterion_10_one_inflated_poisson_trend() {
    let start = Instant::now();

    fn heldout_nll(
        x: &nalgebra::DMatrix<f64>,
        f_rows: Option<Vec<RestrictingDistribution>>,
        alpha: f64,
        truncation: usize,
        mask: &[(usize, usize)],
        handle: RngHandle,
    ) -> f64 {
        let config = ChainConfig {
            alpha,
            c: 1.0,
            truncation,
            sigma_a2: 1.0,
            sigma_n2: 0.25,
            iterations: 300,
            thin: 10,
            row_mh: true,
        };
        let out = run_chain(&config, x, f_rows, mask, handle).unwrap();
        let heldout: Vec<f64> = out.trace.iter().filter_map(|t| t.heldout_loglik).collect();
        let half = &heldout[heldout.len() / 2..];
        -half.iter().sum::<f64>() / half.len() as f64
    }

    let mut detail = Vec::new();
    for &lambda in &[9.0f64, 12.0] {
        let alpha_rule = 0.8 + 0.2 * lambda;
        let mut wins = 0;
        for seed in 0..5u64 {
            let handle = RngHandle::new(1000 + seed + (lambda as u64) * 31);
            let spec = SynthSpec::one_inflated_poisson(lambda, false);
            let data = generate(&spec, &mut handle.stream(0).rng()).unwrap();
            let truncation = data.f_rows[0].support_max() + 1;
            let mask =
                holdout_mask(data.x.nrows(), data.x.ncols(), 0.01, handle.stream(1));
            let nll_ribp = heldout_nll(
                &data.x,
                Some(data.f_rows.clone()),
                alpha_rule,
                truncation,
                &mask,
                handle.stream(2),
            );
            let nll_ibp =
                heldout_nll(&data.x, None, alpha_rule, truncation, &mask, handle.stream(3));
            if nll_ribp <= nll_ibp {
                wins += 1;
            }
        }
        check("10", wins >= 4, &format!("lambda = {lambda}: R-IBP wins only {wins}/5"));
        detail.push(format!("lambda {lambda}: {wins}/5"));
    }

    // Partial exchangeability at lambda = 12.
    let mut partial_wins = 0;
    for seed in 0..5u64 {
        let handle = RngHandle::new(1400 + seed);
        let spec = SynthSpec::one_inflated_poisson(12.0, true);
        let data = generate(&spec, &mut handle.stream(0).rng()).unwrap();
        let truncation =
            data.f_rows.iter().map(|f| f.support_max()).max().unwrap() + 1;
        let alpha_rule = 0.8 + 0.2 * 12.0;
        let mask = holdout_mask(data.x.nrows(), data.x.ncols(), 0.01, handle.stream(1));
        let exch_f = RestrictingDistribution::mixture(vec![
            (0.8, RestrictingDistribution::point_mass(1)),
            (0.2, RestrictingDistribution::poisson(12.0).unwrap()),
        ])
        .unwrap();
        let nll_partial = heldout_nll(
            &data.x,
            Some(data.f_rows.clone()),
            alpha_rule,
            truncation,
            &mask,
            handle.stream(2),
        );
        let nll_exch = heldout_nll(
            &data.x,
            Some(vec![exch_f; data.x.nrows()]),
            alpha_rule,
            truncation,
            &mask,
            handle.stream(3),
        );
        if nll_partial <= nll_exch {
            partial_wins += 1;
        }
    }
    check("10", partial_wins >= 3, &format!("partial wins only {partial_wins}/5 at lambda = 12"));
    check_runtime("10", start, 1800.0);
    pass(
        "10",
        &format!("{}; partial vs exchangeable {partial_wins}/5", detail.join("; ")),
    );
}

// criterion 11: every CLI command re-run from its emitted config bundle
// reproduces its outputs byte-for-byte (timing files carry the wall/CPU
// measurements and are excluded by design).
#[test]
fn criterion_11_cli_determinism() {
    let base = std::env::temp_dir().join("ribp-acceptance-determinism");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();
    let bin = env!("CARGO_BIN_EXE_ribp");
    let run = |args: &[&str]| {
        let status = Command::new(bin).args(args).status().unwrap();
        assert!(status.success(), "command failed: {args:?}");
    };
    let dir = |name: &str| base.join(name).to_str().unwrap().to_string();

    // First runs with explicit flags.
    run(&["synth", "--out", &dir("synth1"), "--seed", "5", "--rows", "120", "--dims", "8"]);
    run(&[
        "simulate", "--out", &dir("sim1"), "--method", "exact-retrospective", "--alpha", "2",
        "--f", "delta:3", "--rows", "40", "--truncation", "12", "--seed", "9",
    ]);
    run(&[
        "benchmark", "--out", &dir("bench1"), "--seed", "3", "--replicates", "2", "--rows",
        "20", "--j-values", "2,5", "--freq-truncations", "10",
    ]);
    let synth_x = dir("synth1") + "/X.csv";
    let synth_f = dir("synth1") + "/f_spec.json";
    run(&[
        "fit", "--out", &dir("fit1"), "--data", &synth_x, "--per-row-f", &synth_f,
        "--method", "gibbs-ribp", "--iterations", "12", "--thin", "4", "--truncation", "17",
        "--holdout", "0.02", "--seed", "4",
    ]);
    run(&[
        "fit", "--out", &dir("fitv1"), "--data", &synth_x, "--per-row-f", &synth_f,
        "--method", "hybrid-vi-ribp", "--iterations", "20", "--resample-every", "10",
        "--truncation", "17", "--seed", "4",
    ]);

    // Re-runs driven purely by the emitted config bundles.
    for (a, b) in [
        ("synth1", "synth2"),
        ("sim1", "sim2"),
        ("bench1", "bench2"),
        ("fit1", "fit2"),
        ("fitv1", "fitv2"),
    ] {
        let cfg = base.join(a).join("config.toml");
        let sub = a.trim_end_matches('1');
        let sub = if sub == "fitv" { "fit" } else { sub };
        run(&[sub, "--config", cfg.to_str().unwrap(), "--out", &dir(b)]);
        let mut compared = 0;
        for entry in std::fs::read_dir(base.join(a)).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            if name.contains("timing") {
                continue;
            }
            let bytes_a = std::fs::read(base.join(a).join(&name)).unwrap();
            let bytes_b = std::fs::read(base.join(b).join(&name))
                .unwrap_or_else(|_| panic!("{b}/{name} missing"));
            check("11", bytes_a == bytes_b, &format!("{a}/{name} differs on re-run"));
            compared += 1;
        }
        check("11", compared > 0, &format!("no files compared for {a}"));
    }
    pass("11", "synth, simulate, benchmark, and both fit bundles reproduce byte-for-byte");
}
