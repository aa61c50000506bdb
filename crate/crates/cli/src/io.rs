//! CSV and JSON artifacts of a run.

use std::fs;
use std::path::{Path, PathBuf};

use abflab::{DensityField, DiagnosticsRecord, FreeEnergyProfile, Point};
use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

/// Full-precision scientific notation used by every CSV.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

pub fn write_profile(path: &Path, profile: &FreeEnergyProfile) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["z", "A", "Aprime", "Z_sigma"])?;
    for k in 0..profile.len() {
        w.write_record([
            real(profile.z_grid[k]),
            real(profile.a_values[k]),
            real(profile.aprime_values[k]),
            real(profile.z_sigma_values[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const DIAGNOSTICS_COLUMNS: [&str; 8] =
    ["t", "E_total", "E_macro", "E_micro", "fisher_macro", "tv_macro", "force_error_sq", "empty_bins"];

/// Incremental writer for `diagnostics.csv`.
pub struct DiagnosticsWriter {
    inner: csv::Writer<fs::File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = writer(path)?;
        inner.write_record(DIAGNOSTICS_COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        self.inner.write_record([
            real(r.time),
            real(r.e_total),
            real(r.e_macro),
            real(r.e_micro),
            real(r.fisher_macro),
            real(r.tv_macro),
            real(r.force_error_sq),
            r.empty_bins.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// One row of `bias_final.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub force: f64,
    pub occupancy: f64,
    /// Monte Carlo standard error; 0 for deterministic runs.
    pub std_error: f64,
    /// Discretization residual against the oracle; 0 for particle runs.
    pub residual: f64,
}

const BIAS_COLUMNS: [&str; 6] = ["bin_lo", "bin_hi", "force", "occupancy", "std_error", "residual"];

pub fn write_bias(path: &Path, rows: &[BiasRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(BIAS_COLUMNS)?;
    for r in rows {
        w.write_record([real(r.bin_lo), real(r.bin_hi), real(r.force), real(r.occupancy), real(r.std_error), real(r.residual)])?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), n + 1))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), n + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_bias(path: &Path) -> Result<Vec<BiasRow>> {
    Ok(read_table(path, &BIAS_COLUMNS)?
        .into_iter()
        .map(|r| BiasRow { bin_lo: r[0], bin_hi: r[1], force: r[2], occupancy: r[3], std_error: r[4], residual: r[5] })
        .collect())
}

/// Columns of `diagnostics.csv`, in header order.
pub fn read_diagnostics(path: &Path) -> Result<Vec<Vec<f64>>> {
    let rows = read_table(path, &DIAGNOSTICS_COLUMNS)?;
    let mut cols = vec![Vec::with_capacity(rows.len()); DIAGNOSTICS_COLUMNS.len()];
    for row in rows {
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    Ok(cols)
}

/// Density snapshot as `i,j,x_center,y_center,value` plus a JSON sidecar.
pub fn write_field_snapshot(dir: &Path, index: usize, field: &DensityField, physical_time: f64) -> Result<PathBuf> {
    let path = dir.join(format!("field_{index:05}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["i", "j", "x_center", "y_center", "value"])?;
    let g = field.grid;
    for i in 0..g.x.n {
        for j in 0..g.y.n {
            w.write_record([i.to_string(), j.to_string(), real(g.x.center(i)), real(g.y.center(j)), real(field.at(i, j))])?;
        }
    }
    w.flush()?;
    let meta = json!({
        "time": physical_time,
        "mass": field.mass(),
        "x": {"lo": g.x.lo, "hi": g.x.hi, "n": g.x.n, "periodic": g.x.periodic},
        "y": {"lo": g.y.lo, "hi": g.y.hi, "n": g.y.n, "periodic": g.y.periodic},
    });
    write_json(&dir.join(format!("field_{index:05}.json")), &meta)?;
    Ok(path)
}

pub fn write_particle_snapshot(dir: &Path, index: usize, positions: &[Point]) -> Result<PathBuf> {
    let path = dir.join(format!("particles_{index:05}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["particle_id", "x", "y"])?;
    for (id, p) in positions.iter().enumerate() {
        w.write_record([id.to_string(), real(p.x), real(p.y)])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
