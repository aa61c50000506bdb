//! Side-by-side comparison of two run directories.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde_json::Value;

use crate::io::{self, BiasRow};
use crate::run::SUMMARY_FILE;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub name: String,
    pub a: f64,
    pub b: f64,
}

impl MetricDelta {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinAgreement {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    /// Allowed `|a - b|`.
    pub allowed: f64,
}

impl BinAgreement {
    pub fn agrees(&self) -> bool {
        (self.a - self.b).abs() <= self.allowed
    }
}

#[derive(Debug, Default)]
pub struct Comparison {
    pub metrics: Vec<MetricDelta>,
    pub bins: Vec<BinAgreement>,
    /// `closure_l1` of the first run over that of the second.
    pub closure_ratio: Option<f64>,
    /// Missing or unreadable inputs; nonempty means the comparison is incomplete.
    pub problems: Vec<String>,
}

impl Comparison {
    pub fn bins_agree(&self) -> bool {
        self.bins.iter().all(BinAgreement::agrees)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>24} {:>24} {:>12}", "metric", "a", "b", "b - a");
        for m in &self.metrics {
            let _ = writeln!(s, "{:<28} {:>24.16e} {:>24.16e} {:>12.3e}", m.name, m.a, m.b, m.delta());
        }
        if !self.bins.is_empty() {
            let agree = self.bins.iter().filter(|b| b.agrees()).count();
            let _ = writeln!(s, "bias: {agree}/{} bins agree", self.bins.len());
            for b in self.bins.iter().filter(|b| !b.agrees()) {
                let _ = writeln!(s, "  [{:.4}, {:.4}): {:.6e} vs {:.6e}, allowed {:.3e}", b.lo, b.hi, b.a, b.b, b.allowed);
            }
        }
        if let Some(r) = self.closure_ratio {
            let _ = writeln!(s, "closure ratio a/b: {r:.4}");
        }
        for p in &self.problems {
            let _ = writeln!(s, "problem: {p}");
        }
        s
    }
}

fn numeric_entries(v: &Value, prefix: &str, out: &mut Vec<(String, f64)>) {
    match v {
        Value::Number(n) => out.push((prefix.to_string(), n.as_f64().unwrap_or(f64::NAN))),
        Value::Null => out.push((prefix.to_string(), f64::NAN)),
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                numeric_entries(v, &key, out);
            }
        }
        _ => {}
    }
}

fn metric_table(summary: &Value) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    numeric_entries(&summary["final"], "final", &mut out);
    if let Value::Object(fits) = &summary["fits"] {
        for (k, f) in fits {
            if let Some(r) = f["rate"].as_f64() {
                out.push((format!("fits.{k}.rate"), r));
            }
        }
    }
    out
}

/// Merge runs of `fine.len() / coarse.len()` consecutive bins so both
/// profiles share the coarse bins. Errors unless the counts divide.
fn coarsen(fine: &[BiasRow], n: usize) -> Option<Vec<BiasRow>> {
    if n == 0 || !fine.len().is_multiple_of(n) {
        return None;
    }
    let g = fine.len() / n;
    Some(
        fine.chunks(g)
            .map(|c| {
                let gf = g as f64;
                BiasRow {
                    bin_lo: c[0].bin_lo,
                    bin_hi: c[g - 1].bin_hi,
                    force: c.iter().map(|r| r.force).sum::<f64>() / gf,
                    occupancy: c.iter().map(|r| r.occupancy).sum(),
                    std_error: c.iter().map(|r| r.std_error * r.std_error).sum::<f64>().sqrt() / gf,
                    residual: c.iter().map(|r| r.residual).sum::<f64>() / gf,
                }
            })
            .collect(),
    )
}

fn bin_agreement(a: &[BiasRow], b: &[BiasRow], tol: f64) -> Result<Vec<BinAgreement>, String> {
    let (a, b) = match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => (a.to_vec(), b.to_vec()),
        std::cmp::Ordering::Greater => (coarsen(a, b.len()).ok_or("bin counts are not multiples")?, b.to_vec()),
        std::cmp::Ordering::Less => (a.to_vec(), coarsen(b, a.len()).ok_or("bin counts are not multiples")?),
    };
    let mut out = Vec::with_capacity(a.len());
    for (ra, rb) in a.iter().zip(&b) {
        if (ra.bin_lo - rb.bin_lo).abs() > 1e-9 || (ra.bin_hi - rb.bin_hi).abs() > 1e-9 {
            return Err(format!("bin edges differ near {}", ra.bin_lo));
        }
        let zero_if_nan = |v: f64| if v.is_nan() { 0.0 } else { v };
        let scale = zero_if_nan(ra.std_error) + zero_if_nan(rb.std_error) + ra.residual + rb.residual;
        out.push(BinAgreement { lo: ra.bin_lo, hi: ra.bin_hi, a: ra.force, b: rb.force, allowed: tol * scale });
    }
    Ok(out)
}

/// Compare the summaries and final biases of two run directories. `tol`
/// multiplies the combined per-bin error scale.
pub fn compare_runs(dir_a: &Path, dir_b: &Path, tol: f64) -> Comparison {
    let mut cmp = Comparison::default();
    let load = |dir: &Path, problems: &mut Vec<String>| match io::read_json(&dir.join(SUMMARY_FILE)) {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("{e:#}"));
            None
        }
    };
    let sa = load(dir_a, &mut cmp.problems);
    let sb = load(dir_b, &mut cmp.problems);
    if let (Some(sa), Some(sb)) = (&sa, &sb) {
        let ta = metric_table(sa);
        let tb = metric_table(sb);
        for (name, a) in &ta {
            if let Some((_, b)) = tb.iter().find(|(n, _)| n == name) {
                cmp.metrics.push(MetricDelta { name: name.clone(), a: *a, b: *b });
            }
        }
        if let (Some(a), Some(b)) = (sa["final"]["closure_l1"].as_f64(), sb["final"]["closure_l1"].as_f64()) {
            if b > 0.0 {
                cmp.closure_ratio = Some(a / b);
            }
        }
    }
    let (pa, pb) = (dir_a.join("bias_final.csv"), dir_b.join("bias_final.csv"));
    match (pa.exists(), pb.exists()) {
        (true, true) => match (io::read_bias(&pa), io::read_bias(&pb)) {
            (Ok(a), Ok(b)) => match bin_agreement(&a, &b, tol) {
                Ok(bins) => cmp.bins = bins,
                Err(e) => cmp.problems.push(format!("bias comparison: {e}")),
            },
            (ra, rb) => {
                for e in [ra.err(), rb.err()].into_iter().flatten() {
                    cmp.problems.push(format!("{e:#}"));
                }
            }
        },
        (false, false) => {}
        _ => cmp.problems.push("bias_final.csv present in only one run".into()),
    }
    cmp
}
