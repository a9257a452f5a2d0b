//! The simulation-method comparison harness: rejection counts and timings
//! for all five methods (the box-plot figures), and sorted mean empirical
//! feature frequencies across truncation levels (the truncation-quality
//! figures). Emits tidy long-format CSV; plotting happens elsewhere.

use crate::config::BenchmarkConfig;
use crate::errors::CliResult;
use crate::io::CsvWriter;
use rayon::prelude::*;
use ribp::samplers::process_cpu_seconds;
use ribp::{
    draw_weights, sample_collapsed_rejection, sample_exact_retrospective, sample_inclusion,
    sample_uncollapsed_rejection, ExactOptions, FeatureMatrix, RestrictingDistribution,
    RngHandle, SimMethod, SimReport,
};
use std::path::Path;

struct RunResult {
    method: SimMethod,
    j: usize,
    replicate: usize,
    report: SimReport,
    sorted_freqs: Vec<f64>,
}

fn column_freqs_sorted(m: &FeatureMatrix) -> Vec<f64> {
    let n = m.n_rows().max(1) as f64;
    let mut freqs: Vec<f64> =
        m.column_counts().iter().map(|&c| c as f64 / n).collect();
    freqs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    freqs
}

fn one_run(
    cfg: &BenchmarkConfig,
    method: SimMethod,
    truncation: usize,
    j: usize,
    replicate: usize,
    handle: RngHandle,
) -> CliResult<RunResult> {
    let f = RestrictingDistribution::point_mass(j);
    let mut rng = handle.stream(1).rng();
    let (matrix, report) = match method {
        SimMethod::CollapsedRejection => {
            sample_collapsed_rejection(cfg.alpha, &f, cfg.rows, &mut rng)?
        }
        SimMethod::ExactRetrospective => {
            let mut opts = ExactOptions::new(truncation);
            opts.proposal_cap = cfg.proposal_cap;
            let (m, r, _) =
                sample_exact_retrospective(cfg.alpha, &f, cfg.rows, &mut rng, opts)?;
            (m, r)
        }
        method => {
            let weights =
                draw_weights(cfg.weights, cfg.alpha, cfg.c, truncation, handle.stream(0))?;
            match method {
                SimMethod::UncollapsedRejection => {
                    sample_uncollapsed_rejection(&weights, &f, cfg.rows, &mut rng, false)?
                }
                SimMethod::TiltedRejection => {
                    sample_uncollapsed_rejection(&weights, &f, cfg.rows, &mut rng, true)?
                }
                SimMethod::Inclusion => sample_inclusion(&weights, &f, cfg.rows, &mut rng)?,
                _ => unreachable!(),
            }
        }
    };
    Ok(RunResult { method, j, replicate, report, sorted_freqs: column_freqs_sorted(&matrix) })
}

/// Mean and standard error per rank across replicates, padding short curves
/// with zeros.
fn rank_stats(curves: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let width = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    let n = curves.len() as f64;
    (0..width)
        .map(|k| {
            let vals: Vec<f64> =
                curves.iter().map(|c| c.get(k).copied().unwrap_or(0.0)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

pub fn run(mut cfg: BenchmarkConfig, out: &Path) -> CliResult<()> {
    cfg.resolve()?;
    std::fs::create_dir_all(out)?;
    let wall = std::time::Instant::now();
    let cpu = process_cpu_seconds();
    let handle = RngHandle::new(cfg.seed);

    // Part 1: rejection counts for all five methods at the shared truncation.
    let mut jobs: Vec<(usize, SimMethod, usize, usize)> = Vec::new();
    for (mi, &method) in SimMethod::ALL.iter().enumerate() {
        for &j in &cfg.j_values {
            for rep in 0..cfg.replicates {
                jobs.push((mi, method, j, rep));
            }
        }
    }
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(mi, method, j, rep)| {
            one_run(
                &cfg,
                method,
                cfg.truncation,
                j,
                rep,
                handle.stream(1).stream(mi as u64).stream(j as u64).stream(rep as u64),
            )
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut rej = CsvWriter::new(
        "benchmark-rejections",
        "method,j,replicate,rejections,proposals",
    );
    let mut timing = CsvWriter::new(
        "benchmark-timing",
        "method,j,replicate,cpu_seconds,wall_seconds",
    );
    for r in &results {
        rej.row(&[
            r.method.to_string(),
            r.j.to_string(),
            r.replicate.to_string(),
            r.report.rejections.to_string(),
            r.report.proposals.to_string(),
        ]);
        timing.row(&[
            r.method.to_string(),
            r.j.to_string(),
            r.replicate.to_string(),
            format!("{}", r.report.cpu_seconds),
            format!("{}", r.report.wall_seconds),
        ]);
    }
    rej.finish(&out.join("rejections.csv"))?;
    timing.finish(&out.join("timing.csv"))?;

    // Part 2: sorted mean feature-frequency curves per truncation level,
    // with the exact retrospective sampler as the "full" reference.
    let approx = [
        SimMethod::UncollapsedRejection,
        SimMethod::TiltedRejection,
        SimMethod::Inclusion,
    ];
    // (method, truncation label, run truncation, j): one curve group each.
    let mut groups: Vec<(SimMethod, String, usize, usize)> = Vec::new();
    for &j in &cfg.j_values {
        for &method in &approx {
            for &t in &cfg.freq_truncations {
                groups.push((method, t.to_string(), t, j));
            }
        }
        groups.push((SimMethod::ExactRetrospective, "full".into(), cfg.truncation, j));
    }
    let mut freq_jobs: Vec<(usize, usize)> = Vec::new();
    for gi in 0..groups.len() {
        for rep in 0..cfg.replicates {
            freq_jobs.push((gi, rep));
        }
    }
    let freq_results: Vec<(usize, Vec<f64>)> = freq_jobs
        .par_iter()
        .map(|&(gi, rep)| {
            let (method, _, t, j) = groups[gi];
            one_run(
                &cfg,
                method,
                t,
                j,
                rep,
                handle.stream(2).stream(gi as u64).stream(rep as u64),
            )
            .map(|r| (gi, r.sorted_freqs))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut freqs = CsvWriter::new(
        "benchmark-freqs",
        "method,truncation,j,rank,mean_freq,se_freq",
    );
    let n_freq_runs = freq_results.len();
    for (gi, (method, trunc_label, _, j)) in groups.iter().enumerate() {
        let curves: Vec<Vec<f64>> = freq_results
            .iter()
            .filter(|(g, _)| *g == gi)
            .map(|(_, c)| c.clone())
            .collect();
        for (rank, (mean, se)) in rank_stats(&curves).iter().enumerate() {
            freqs.row(&[
                method.to_string(),
                trunc_label.clone(),
                j.to_string(),
                rank.to_string(),
                format!("{mean}"),
                format!("{se}"),
            ]);
        }
    }
    freqs.finish(&out.join("feature_freqs.csv"))?;

    crate::config::save_config(&out.join("config.toml"), &cfg)?;
    crate::io::write_timing(
        &out.join("timing.json"),
        wall.elapsed().as_secs_f64(),
        process_cpu_seconds() - cpu,
    )?;
    println!(
        "benchmark: {} rejection runs + {} frequency runs -> {}",
        results.len(),
        n_freq_runs,
        out.display()
    );
    Ok(())
}
