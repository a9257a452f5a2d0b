use crate::config::{FitConfig, FitMethod};
use crate::errors::CliResult;
use crate::io::{self, CsvWriter};
use nalgebra::DMatrix;
use ribp::matrix::FeatureMatrix;
use ribp::mcmc::{run_chain, ChainConfig};
use ribp::samplers::process_cpu_seconds;
use ribp::vi::{hybrid_fit, HybridConfig};
use ribp::RngHandle;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct FitSummary {
    method: &'static str,
    rows: usize,
    dims: usize,
    truncation: usize,
    alpha: f64,
    n_samples: usize,
    heldout_entries: usize,
    /// Mean held-out log-likelihood over the second half of the recorded
    /// samples (None without a holdout mask).
    heldout_loglik: Option<f64>,
    final_objective: f64,
}

fn second_half_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let half = &values[values.len() / 2..];
    Some(half.iter().sum::<f64>() / half.len() as f64)
}

struct SampleRecord {
    index: usize,
    iteration: u64,
    z: FeatureMatrix,
    weights: Vec<f64>,
    a: DMatrix<f64>,
}

fn write_samples(
    out: &Path,
    samples: &[SampleRecord],
    truncation: usize,
    dims: usize,
) -> CliResult<()> {
    let mut zw = CsvWriter::new("z-samples", "sample,iteration,row,col");
    let mut ww = CsvWriter::new("weights-samples", "sample,iteration,col,weight");
    for s in samples {
        for n in 0..s.z.n_rows() {
            for (i, &v) in s.z.row(n).iter().enumerate() {
                if v == 1 {
                    zw.row(&[
                        s.index.to_string(),
                        s.iteration.to_string(),
                        n.to_string(),
                        i.to_string(),
                    ]);
                }
            }
        }
        for (i, &w) in s.weights.iter().enumerate() {
            ww.row(&[
                s.index.to_string(),
                s.iteration.to_string(),
                i.to_string(),
                format!("{w}"),
            ]);
        }
    }
    zw.finish(&out.join("z_samples.csv"))?;
    ww.finish(&out.join("weights_samples.csv"))?;

    // Posterior mean of A over the second half of the samples.
    let half = &samples[samples.len() / 2..];
    let mut a_mean = DMatrix::zeros(truncation, dims);
    for s in half {
        a_mean += &s.a;
    }
    if !half.is_empty() {
        a_mean /= half.len() as f64;
    }
    io::write_data_matrix(&out.join("a_mean.csv"), "features", &a_mean, "a")?;

    // Row-count histogram averaged over the second half.
    let mut hist = vec![0.0f64; truncation + 1];
    let mut total = 0.0;
    for s in half {
        for &j in s.z.row_counts() {
            hist[j] += 1.0;
            total += 1.0;
        }
    }
    let mut hw = CsvWriter::new("rowsum-hist", "count,frequency");
    for (k, h) in hist.iter().enumerate() {
        hw.row(&[k.to_string(), format!("{}", if total > 0.0 { h / total } else { 0.0 })]);
    }
    hw.finish(&out.join("rowsum_hist.csv"))?;
    Ok(())
}

pub fn run(mut cfg: FitConfig, out: &Path) -> CliResult<()> {
    let x = io::read_data_matrix(Path::new(&cfg.data), "data")?;
    let f_rows = cfg.resolve(x.nrows())?;
    std::fs::create_dir_all(out)?;
    let wall = std::time::Instant::now();
    let cpu = process_cpu_seconds();
    let handle = RngHandle::new(cfg.seed);
    let mask = ribp::stats::holdout_mask(x.nrows(), x.ncols(), cfg.holdout, handle.stream(7));
    if !mask.is_empty() {
        io::write_mask(&out.join("mask.csv"), &mask)?;
    }

    let mut trace = CsvWriter::new("trace", "iteration,objective,segment,heldout_loglik");
    let (samples, heldout_values, final_objective): (Vec<SampleRecord>, Vec<f64>, f64);
    match cfg.method {
        FitMethod::GibbsRibp | FitMethod::GibbsIbp => {
            let chain_cfg = ChainConfig {
                alpha: cfg.alpha,
                c: cfg.c,
                truncation: cfg.truncation,
                sigma_a2: cfg.sigma_a2,
                sigma_n2: cfg.sigma_n2,
                iterations: cfg.iterations,
                thin: cfg.thin,
                row_mh: true,
            };
            let output = run_chain(&chain_cfg, &x, f_rows, &mask, handle.stream(1))?;
            for t in &output.trace {
                trace.row(&[
                    t.iteration.to_string(),
                    format!("{}", t.log_joint),
                    "0".into(),
                    t.heldout_loglik.map(|h| format!("{h}")).unwrap_or_default(),
                ]);
            }
            heldout_values =
                output.trace.iter().filter_map(|t| t.heldout_loglik).collect();
            final_objective = output.trace.last().map(|t| t.log_joint).unwrap_or(f64::NAN);
            samples = output
                .samples
                .into_iter()
                .enumerate()
                .map(|(index, s)| SampleRecord {
                    index,
                    iteration: s.iteration,
                    z: s.z,
                    weights: s.weights,
                    a: s.a,
                })
                .collect();
        }
        FitMethod::HybridViRibp | FitMethod::HybridViIbp => {
            let vi_cfg = HybridConfig {
                alpha: cfg.alpha,
                c: cfg.c,
                truncation: cfg.truncation,
                sigma_a2: cfg.sigma_a2,
                sigma_n2: cfg.sigma_n2,
                sweeps: cfg.iterations,
                resample_every: cfg.resample_every,
                elbo_tol: cfg.elbo_tol,
            };
            let output = hybrid_fit(&vi_cfg, &x, f_rows, &mask, handle.stream(1))?;
            for &(sweep, bound, segment) in &output.elbo_trace {
                let heldout = output
                    .heldout_trace
                    .iter()
                    .find(|&&(s, _)| s == sweep)
                    .map(|&(_, h)| format!("{h}"))
                    .unwrap_or_default();
                trace.row(&[
                    sweep.to_string(),
                    format!("{bound}"),
                    segment.to_string(),
                    heldout,
                ]);
            }
            heldout_values = output.heldout_trace.iter().map(|&(_, h)| h).collect();
            final_objective =
                output.elbo_trace.last().map(|&(_, b, _)| b).unwrap_or(f64::NAN);
            samples = output
                .samples
                .into_iter()
                .enumerate()
                .map(|(index, s)| SampleRecord {
                    index,
                    iteration: s.sweep,
                    z: s.z,
                    weights: s.weights,
                    a: s.a,
                })
                .collect();
        }
    }
    trace.finish(&out.join("trace.csv"))?;
    write_samples(out, &samples, cfg.truncation, x.ncols())?;

    let summary = FitSummary {
        method: cfg.method.name(),
        rows: x.nrows(),
        dims: x.ncols(),
        truncation: cfg.truncation,
        alpha: cfg.alpha,
        n_samples: samples.len(),
        heldout_entries: mask.len(),
        heldout_loglik: second_half_mean(&heldout_values),
        final_objective,
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    crate::config::save_config(&out.join("config.toml"), &cfg)?;
    io::write_timing(
        &out.join("timing.json"),
        wall.elapsed().as_secs_f64(),
        process_cpu_seconds() - cpu,
    )?;
    println!(
        "fit {}: {} samples, heldout {:?} -> {}",
        cfg.method.name(),
        samples.len(),
        summary.heldout_loglik,
        out.display()
    );
    Ok(())
}
