//! Versioned CSV/JSON readers and writers. Every CSV starts with a schema
//! comment line (`#ribp-csv <kind> v1`); loaders reject unknown kinds or
//! versions. Floats are written with Rust's shortest round-trip formatting,
//! so re-running a seeded command reproduces files byte-for-byte.

use crate::errors::{CliError, CliResult};
use nalgebra::DMatrix;
use ribp::matrix::FeatureMatrix;
use ribp::RestrictingDistribution;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

fn schema_line(kind: &str) -> String {
    format!("#ribp-csv {kind} v1")
}

fn check_schema(first_line: &str, kind: &str, path: &Path) -> CliResult<()> {
    if first_line.trim() != schema_line(kind) {
        return Err(CliError::data(format!(
            "{}: expected schema '{}', found '{}'",
            path.display(),
            schema_line(kind),
            first_line.trim()
        )));
    }
    Ok(())
}

pub fn write_data_matrix(path: &Path, kind: &str, m: &DMatrix<f64>, prefix: &str) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&schema_line(kind));
    out.push('\n');
    let header: Vec<String> = (0..m.ncols()).map(|c| format!("{prefix}{c}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_data_matrix(path: &Path, kind: &str) -> CliResult<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: empty file", path.display())))?;
    check_schema(first, kind, path)?;
    let header = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: missing header", path.display())))?;
    let ncols = header.split(',').count();
    let mut values: Vec<f64> = Vec::new();
    let mut nrows = 0;
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(CliError::data(format!(
                "{}: row {} has {} fields, expected {ncols}",
                path.display(),
                idx + 1,
                fields.len()
            )));
        }
        for f in fields {
            values.push(f.trim().parse::<f64>().map_err(|_| {
                CliError::data(format!("{}: bad number '{f}'", path.display()))
            })?);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, values))
}

pub fn write_binary_matrix(path: &Path, m: &FeatureMatrix) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&schema_line("matrix"));
    out.push('\n');
    let header: Vec<String> = (0..m.width()).map(|c| format!("z{c}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..m.n_rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[&str]) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&schema_line("labels"));
    out.push_str("\nrow,group\n");
    for (r, l) in labels.iter().enumerate() {
        out.push_str(&format!("{r},{l}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &[(usize, usize)]) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&schema_line("mask"));
    out.push_str("\nrow,col\n");
    for &(r, c) in mask {
        out.push_str(&format!("{r},{c}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FSpecFile {
    pub version: u32,
    /// One spec string per row, in the grammar of the `--f` flag.
    pub f: Vec<String>,
}

pub fn write_f_spec(path: &Path, f_rows: &[RestrictingDistribution]) -> CliResult<()> {
    let file = FSpecFile { version: 1, f: f_rows.iter().map(|f| f.to_string()).collect() };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_f_spec(path: &Path) -> CliResult<Vec<RestrictingDistribution>> {
    let text = fs::read_to_string(path)?;
    let file: FSpecFile =
        serde_json::from_str(&text).map_err(|e| CliError::data(e.to_string()))?;
    if file.version != 1 {
        return Err(CliError::data(format!("unsupported f-spec version {}", file.version)));
    }
    file.f
        .iter()
        .map(|s| s.parse::<RestrictingDistribution>().map_err(CliError::from))
        .collect()
}

/// Timing lives in its own file so that every other artifact in a bundle is
/// byte-for-byte reproducible from the config.
#[derive(Debug, Serialize, Deserialize)]
pub struct TimingFile {
    pub wall_seconds: f64,
    pub cpu_seconds: f64,
}

pub fn write_timing(path: &Path, wall: f64, cpu: f64) -> CliResult<()> {
    let json = serde_json::to_string_pretty(&TimingFile {
        wall_seconds: wall,
        cpu_seconds: cpu,
    })
    .map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// A small deterministic CSV writer for the long-format outputs.
pub struct CsvWriter {
    out: String,
}

impl CsvWriter {
    pub fn new(kind: &str, header: &str) -> Self {
        CsvWriter { out: format!("{}\n{header}\n", schema_line(kind)) }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.out.push_str(&fields.join(","));
        self.out.push('\n');
    }

    pub fn finish(self, path: &Path) -> CliResult<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.out.as_bytes())?;
        Ok(())
    }
}
