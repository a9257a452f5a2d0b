use crate::config::SimulateConfig;
use crate::errors::{CliError, CliResult};
use crate::io;
use ribp::samplers::{process_cpu_seconds, ExactCounters};
use ribp::{
    draw_weights, sample_collapsed_rejection, sample_exact_retrospective, sample_inclusion,
    sample_uncollapsed_rejection, ExactOptions, FeatureMatrix, RngHandle, SimMethod, SimReport,
};
use serde::Serialize;
use std::path::Path;

/// The timing-free part of a [`SimReport`], written to report.json so the
/// bundle stays byte-reproducible (times go to timing.json).
#[derive(Serialize)]
pub struct ReportFile {
    pub method: SimMethod,
    pub accepted: u64,
    pub proposals: u64,
    pub rejections: u64,
    pub truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactCounters>,
}

impl From<&SimReport> for ReportFile {
    fn from(r: &SimReport) -> Self {
        ReportFile {
            method: r.method,
            accepted: r.accepted,
            proposals: r.proposals,
            rejections: r.rejections,
            truncation: r.truncation,
            exact: r.exact,
        }
    }
}

pub fn run_method(
    cfg: &SimulateConfig,
    f: &ribp::RestrictingDistribution,
    handle: RngHandle,
) -> CliResult<(FeatureMatrix, SimReport)> {
    let mut rng = handle.stream(1).rng();
    match cfg.method {
        SimMethod::CollapsedRejection => {
            sample_collapsed_rejection(cfg.alpha, f, cfg.rows, &mut rng).map_err(CliError::from)
        }
        SimMethod::ExactRetrospective => {
            let mut opts = ExactOptions::new(cfg.truncation);
            opts.proposal_cap = cfg.proposal_cap;
            let (m, report, _) =
                sample_exact_retrospective(cfg.alpha, f, cfg.rows, &mut rng, opts)?;
            Ok((m, report))
        }
        method => {
            let weights =
                draw_weights(cfg.weights, cfg.alpha, cfg.c, cfg.truncation, handle.stream(0))?;
            match method {
                SimMethod::UncollapsedRejection => {
                    sample_uncollapsed_rejection(&weights, f, cfg.rows, &mut rng, false)
                        .map_err(CliError::from)
                }
                SimMethod::TiltedRejection => {
                    sample_uncollapsed_rejection(&weights, f, cfg.rows, &mut rng, true)
                        .map_err(CliError::from)
                }
                SimMethod::Inclusion => {
                    sample_inclusion(&weights, f, cfg.rows, &mut rng).map_err(CliError::from)
                }
                _ => unreachable!(),
            }
        }
    }
}

pub fn run(mut cfg: SimulateConfig, out: &Path) -> CliResult<()> {
    let f = cfg.resolve()?;
    std::fs::create_dir_all(out)?;
    let wall = std::time::Instant::now();
    let cpu = process_cpu_seconds();
    let (matrix, report) = run_method(&cfg, &f, RngHandle::new(cfg.seed))?;
    io::write_binary_matrix(&out.join("matrix.csv"), &matrix)?;
    io::write_json(&out.join("report.json"), &ReportFile::from(&report))?;
    io::write_timing(
        &out.join("timing.json"),
        wall.elapsed().as_secs_f64(),
        process_cpu_seconds() - cpu,
    )?;
    crate::config::save_config(&out.join("config.toml"), &cfg)?;
    println!(
        "simulate {}: {} rows, {} proposals, {} rejections -> {}",
        cfg.method,
        report.accepted,
        report.proposals,
        report.rejections,
        out.display()
    );
    Ok(())
}
