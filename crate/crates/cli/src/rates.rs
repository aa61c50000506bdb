//! Rate fits over a finished run and a gnuplot script to view them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::Value;

use crate::io::{self, DIAGNOSTICS_COLUMNS};
use crate::run::fits_json;

pub struct RatesReport {
    pub fits: Value,
    pub script: PathBuf,
}

/// Fit every column of `diagnostics.csv` in `dir` over `window` and write
/// `rates.gp` next to it.
pub fn rates(dir: &Path, window: Option<(f64, f64)>) -> Result<RatesReport> {
    let cols = io::read_diagnostics(&dir.join("diagnostics.csv"))?;
    let times = cols[0].clone();
    let series: Vec<(&str, Vec<f64>)> =
        DIAGNOSTICS_COLUMNS[1..7].iter().zip(&cols[1..7]).map(|(n, c)| (*n, c.clone())).collect();
    let fits = fits_json(&times, &series, window);
    let script = dir.join("rates.gp");
    std::fs::write(&script, gnuplot_script(&fits))?;
    Ok(RatesReport { fits, script })
}

fn gnuplot_script(fits: &Value) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset logscale y\nset xlabel 't'\nset key outside\n");
    let mut plots = Vec::new();
    for (col, name) in DIAGNOSTICS_COLUMNS.iter().enumerate().take(7).skip(1) {
        let Some(f) = fits.get(*name) else { continue };
        plots.push(format!("'diagnostics.csv' using 1:{} skip 1 with lines title '{name}'", col + 1));
        if let (Some(rate), Some(b)) = (f["rate"].as_f64(), f["log_intercept"].as_f64()) {
            let _ = writeln!(s, "# {name}: rate {rate:.10e}, r^2 {}", f["r_squared"]);
            plots.push(format!("exp({b:.16e} - {rate:.16e} * x) with lines dashtype 2 title '{name} fit'"));
        }
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
