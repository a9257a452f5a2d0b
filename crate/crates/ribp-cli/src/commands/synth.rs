use crate::config::SynthConfig;
use crate::errors::CliResult;
use crate::io;
use ribp::samplers::process_cpu_seconds;
use ribp::synth::generate;
use ribp::RngHandle;
use std::path::Path;

pub fn run(cfg: SynthConfig, out: &Path) -> CliResult<()> {
    cfg.spec.validate()?;
    std::fs::create_dir_all(out)?;
    let wall = std::time::Instant::now();
    let cpu = process_cpu_seconds();
    let mut rng = RngHandle::new(cfg.seed).rng();
    let data = generate(&cfg.spec, &mut rng)?;
    io::write_data_matrix(&out.join("X.csv"), "data", &data.x, "x")?;
    io::write_binary_matrix(&out.join("Z_true.csv"), &data.z_true)?;
    io::write_data_matrix(&out.join("A_true.csv"), "features", &data.a_true, "a")?;
    io::write_f_spec(&out.join("f_spec.json"), &data.f_rows)?;
    io::write_labels(&out.join("labels.csv"), &data.labels)?;
    crate::config::save_config(&out.join("config.toml"), &cfg)?;
    io::write_timing(
        &out.join("timing.json"),
        wall.elapsed().as_secs_f64(),
        process_cpu_seconds() - cpu,
    )?;
    println!(
        "synth: {} rows x {} dims, {} true features -> {}",
        data.x.nrows(),
        data.x.ncols(),
        data.z_true.width(),
        out.display()
    );
    Ok(())
}
