//! Experiment orchestration: oracle, solver loop, diagnostics, monitors and
//! the summary.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use abflab::diagnostics::{fisher_information_1d, fit_decay_rate, pde_record, relative_entropy_1d, tv_distance, force_error};
use abflab::oracle::{compute_equilibrium, compute_free_energy, default_z_grid, mean_force_consistency, DEFAULT_SLICE_MASS_FLOOR};
use abflab::particles::init_ensemble;
use abflab::{
    convergence_constants, AbfSampler, Axis, BiasProfile, ConvergenceConstants, Density1d, DensityField, DiagnosticsRecord,
    EvalGrid, Fp2dSolver, Fp2dVariant, FreeEnergyProfile, Grid2d, InitDistribution, Marginal1dSolver, ModelProblem,
    SamplerConfig, Scheme, XDomain, YQuadrature,
};
use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, InitKind, RunKind};
use crate::io::{self, BiasRow, DiagnosticsWriter};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config_echo.txt";

const MASS_TOL: f64 = 1e-9;
const EXTENSIVITY_TOL: f64 = 1e-10;
const CK_SLACK: f64 = 1e-12;
const MONITOR_SLACK: f64 = 0.10;
const MONOTONE_SLACK: f64 = 1e-12;
/// Below this the total entropy sits at the grid discretization level.
const MONOTONE_FLOOR: f64 = 1e-4;
const SE_MULTIPLIER: f64 = 3.0;

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct OutputTarget {
    /// Exact directory (`--out`).
    pub exact: Option<PathBuf>,
    /// Root for timestamped subdirectories when `exact` is unset.
    pub root: Option<PathBuf>,
    pub overwrite: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub exit_code: i32,
    pub summary: Value,
}

/// One inequality or invariant checked along the run.
#[derive(Debug, Clone)]
struct Monitor {
    name: &'static str,
    fatal: bool,
    /// Worst observed value of the checked quantity.
    worst: f64,
    limit: f64,
    detail: String,
}

impl Monitor {
    fn new(name: &'static str, fatal: bool, limit: f64, detail: impl Into<String>) -> Self {
        Self { name, fatal, worst: f64::NEG_INFINITY, limit, detail: detail.into() }
    }

    fn observe(&mut self, v: f64) {
        // NaN counts as a failure
        self.worst = if v.is_nan() || self.worst.is_nan() { f64::NAN } else { self.worst.max(v) };
    }

    fn pass(&self) -> bool {
        self.worst <= self.limit || self.worst == f64::NEG_INFINITY
    }

    fn to_json(&self) -> Value {
        json!({
            "fatal": self.fatal,
            "pass": self.pass(),
            "worst": finite_or_null(self.worst),
            "limit": self.limit,
            "detail": self.detail,
        })
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Everything a run kind hands back to the common epilogue.
#[derive(Default)]
struct KindResult {
    records: Vec<DiagnosticsRecord>,
    monitors: Vec<Monitor>,
    extra: Map<String, Value>,
}

/// Validate `cfg`, create the output directory and execute the run.
pub fn run(cfg: ExperimentConfig, target: &OutputTarget) -> std::result::Result<RunOutcome, CliError> {
    let cfg = cfg.resolve()?;
    let dir = prepare_dir(&cfg, target)?;
    let started = Instant::now();
    fs::write(dir.join(CONFIG_ECHO_FILE), cfg.echo()).map_err(|e| CliError::Runtime(e.into()))?;
    log::info!("{} run in {}", cfg.kind.as_str(), dir.display());
    match execute(&cfg, &dir) {
        Ok(result) => {
            let summary = summarize(&cfg, result, started.elapsed().as_secs_f64()).map_err(CliError::Runtime)?;
            io::write_json(&dir.join(SUMMARY_FILE), &summary).map_err(CliError::Runtime)?;
            let exit_code = summary["exit_code"].as_i64().unwrap_or(0) as i32;
            Ok(RunOutcome { dir, exit_code, summary })
        }
        Err(e) => {
            let summary = json!({
                "kind": cfg.kind.as_str(),
                "exit_code": 3,
                "error": format!("{e:#}"),
                "config": config_json(&cfg),
            });
            let _ = io::write_json(&dir.join(SUMMARY_FILE), &summary);
            Err(CliError::Runtime(e))
        }
    }
}

fn looks_like_run_dir(dir: &Path) -> bool {
    dir.join(SUMMARY_FILE).exists() || dir.join(CONFIG_ECHO_FILE).exists()
}

fn prepare_dir(cfg: &ExperimentConfig, target: &OutputTarget) -> std::result::Result<PathBuf, CliError> {
    let io_err = |e: std::io::Error, p: &Path| CliError::Runtime(anyhow::anyhow!("{}: {e}", p.display()));
    if let Some(dir) = &target.exact {
        let occupied = dir.exists() && fs::read_dir(dir).map_err(|e| io_err(e, dir))?.next().is_some();
        if occupied {
            if !target.overwrite {
                return Err(CliError::Validation(format!(
                    "{} is not empty; pass --overwrite to replace a previous run",
                    dir.display()
                )));
            }
            if !looks_like_run_dir(dir) {
                return Err(CliError::Validation(format!("{} does not look like a run directory; refusing to clear it", dir.display())));
            }
            fs::remove_dir_all(dir).map_err(|e| io_err(e, dir))?;
        }
        fs::create_dir_all(dir).map_err(|e| io_err(e, dir))?;
        return Ok(dir.clone());
    }
    let root = cfg
        .output_dir
        .clone()
        .or_else(|| target.root.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{}-{stamp}", cfg.kind.as_str());
    let mut dir = root.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(e, &dir))?;
    Ok(dir)
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<KindResult> {
    let model = cfg.model();
    let quad = YQuadrature::default();
    let profile = compute_free_energy(&model, &default_z_grid(&model, cfg.oracle_points), &quad).context("oracle")?;
    io::write_profile(&dir.join("profile.csv"), &profile)?;
    match cfg.kind {
        RunKind::OracleOnly => run_oracle(&model, &profile, &quad),
        RunKind::PdeAbfMetric | RunKind::PdeAbfPlain | RunKind::PdeFrozen => run_pde(cfg, &model, dir),
        RunKind::ParticlesMetric | RunKind::ParticlesPlain => run_particles(cfg, &model, &profile, dir),
        RunKind::MarginalOnly => run_marginal(cfg, &model, dir),
    }
}

fn run_oracle(model: &ModelProblem, profile: &FreeEnergyProfile, quad: &YQuadrature) -> Result<KindResult> {
    let consistency = mean_force_consistency(model, profile, quad, 1e-3)?;
    let mut extra = Map::new();
    extra.insert("oracle_consistency".into(), json!(consistency));
    let (lo, hi) = model.x_domain.bounds();
    if (lo..=hi).contains(&0.25) {
        extra.insert("aprime_quarter".into(), json!(profile.mean_force_at(0.25)));
    }
    extra.insert("free_energy_range".into(), json!(profile.a_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - profile.a_values.iter().cloned().fold(f64::INFINITY, f64::min)));
    Ok(KindResult { extra, ..Default::default() })
}

fn physical_constants(model: &ModelProblem) -> Option<ConvergenceConstants> {
    match convergence_constants(model, EvalGrid::new(256, 256)) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("convergence constants unavailable: {e}");
            None
        }
    }
}

/// Density with the configured initial condition, on a solver grid of the
/// rescaled model.
fn initial_field(cfg: &ExperimentConfig, grid: Grid2d, equilibrium: &DensityField) -> Result<DensityField> {
    let beta_k = cfg.beta * cfg.k;
    let mut field = match cfg.init.expect("resolved") {
        InitKind::Equilibrium => equilibrium.clone(),
        InitKind::Uniform => DensityField::from_fn(grid, |_, _| 1.0)?,
        _ => {
            let (amp, shift) = (cfg.init_amplitude, cfg.init_y_shift);
            DensityField::from_fn(grid, |x, y| {
                let g = if beta_k > 0.0 { (-0.5 * beta_k * (y - shift).powi(2)).exp() } else { 1.0 };
                (1.0 + amp * (2.0 * PI * x).cos()) * g
            })?
        }
    };
    field.normalize()?;
    field.time = 0.0;
    Ok(field)
}

fn run_pde(cfg: &ExperimentConfig, phys: &ModelProblem, dir: &Path) -> Result<KindResult> {
    let beta = cfg.beta;
    let model = phys.rescaled_to_unit_beta();
    let oracle = compute_free_energy(&model, &default_z_grid(&model, cfg.oracle_points.max(4 * cfg.n_x)), &YQuadrature::default())?;
    let grid = Grid2d::for_model(&model, cfg.n_x, cfg.n_y);
    let equil = compute_equilibrium(&model, &oracle, grid)?;
    let variant = match cfg.kind {
        RunKind::PdeAbfPlain => Fp2dVariant::AbfPlain,
        RunKind::PdeFrozen => Fp2dVariant::FrozenBias,
        _ => Fp2dVariant::AbfMetric,
    };
    let mut solver = Fp2dSolver::new(&model, grid, variant)?;
    let frozen: Vec<f64> = (0..grid.x.n).map(|i| oracle.mean_force_at(grid.x.center(i))).collect();
    if variant == Fp2dVariant::FrozenBias {
        solver.freeze_with(|z| oracle.mean_force_at(z));
    }
    let mut field = initial_field(cfg, grid, &equil.psi_inf)?;
    let constants = physical_constants(phys);
    let dt = cfg.dt.expect("resolved") / beta;
    let steps = cfg.steps();
    let stride = cfg.output_stride.expect("resolved");

    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    let mut writer = DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?;
    let mut out = KindResult::default();
    let mut mass = Monitor::new("mass_conservation", true, MASS_TOL, "|mass - 1|");
    let mut extensivity = Monitor::new("entropy_extensivity", true, EXTENSIVITY_TOL, "|E_total - E_macro - E_micro|");
    let mut ck = Monitor::new("csiszar_kullback", true, CK_SLACK, "||psi_xi - psi_xi_inf||_1^2 / 2 - E_macro");
    let mut validity = Monitor::new("entropy_validity", true, 0.0, "outputs with more than 1% of mass in excluded slices");
    let mut micro_bound = Monitor::new(
        "micro_entropy_bound",
        false,
        1.0 + MONITOR_SLACK,
        "sqrt(E_micro) / (C exp(-lambda t)), C from E_micro(0) and fisher_macro(0)",
    );
    let mut force_ineq = Monitor::new("force_error_inequality", false, 1.0, "force_error_sq / ((2 M^2 / rho) E_micro)");
    let mut monotone = Monitor::new("frozen_entropy_monotone", false, MONOTONE_SLACK, "largest increase of E_total between outputs while E_total > 1e-4");
    let mut initial: Option<(f64, f64)> = None;
    let mut prev_total = f64::NAN;
    let mut snapshots = 0usize;

    for s in 0..=steps {
        let is_output = s % stride == 0 || s == steps;
        if is_output {
            if variant != Fp2dVariant::FrozenBias {
                solver.update_bias(&field);
            }
            let bias = if variant == Fp2dVariant::FrozenBias { &frozen[..] } else { solver.bias_columns() };
            let (mut rec, valid) = pde_record(&field, &equil, &oracle, bias, DEFAULT_SLICE_MASS_FLOOR)?;
            rec.time = beta * field.time;
            rec.force_error_sq /= beta * beta;
            mass.observe((field.mass() - 1.0).abs());
            extensivity.observe((rec.e_total - rec.e_macro - rec.e_micro).abs());
            ck.observe(0.5 * rec.tv_macro * rec.tv_macro - rec.e_macro);
            validity.observe(if valid { 0.0 } else { 1.0 });
            let (em0, i0) = *initial.get_or_insert((rec.e_micro, rec.fisher_macro));
            if let Some(c) = &constants {
                if variant != Fp2dVariant::FrozenBias {
                    let bound = c.micro_entropy_bound(em0, i0, rec.time);
                    micro_bound.observe(if bound > 0.0 { rec.e_micro.max(0.0).sqrt() / bound } else { 0.0 });
                    if rec.e_micro > 0.0 {
                        force_ineq.observe(rec.force_error_sq / (c.force_error_factor() * rec.e_micro));
                    }
                }
            }
            if variant == Fp2dVariant::FrozenBias {
                if prev_total > MONOTONE_FLOOR {
                    monotone.observe(rec.e_total - prev_total);
                }
                prev_total = rec.e_total;
            }
            writer.push(&rec)?;
            let k = out.records.len();
            if (cfg.snapshot_stride > 0 && k % cfg.snapshot_stride == 0) || s == steps {
                io::write_field_snapshot(&snap_dir, k, &field, rec.time)?;
                snapshots += 1;
            }
            out.records.push(rec);
        }
        if s < steps {
            solver.step(&mut field, dt).with_context(|| format!("step {s}"))?;
        }
    }
    writer.finish()?;

    let rows: Vec<BiasRow> = {
        let bias = if variant == Fp2dVariant::FrozenBias { &frozen[..] } else { solver.bias_columns() };
        let hy = grid.y.h();
        (0..grid.x.n)
            .map(|i| {
                let (lo, hi) = (grid.x.face(i), grid.x.face(i + 1));
                BiasRow {
                    bin_lo: lo,
                    bin_hi: hi,
                    force: bias[i] / beta,
                    occupancy: field.column(i).iter().sum::<f64>() * hy,
                    std_error: 0.0,
                    residual: (bias[i] - oracle.bin_average_mean_force(lo, hi)).abs() / beta,
                }
            })
            .collect()
    };
    io::write_bias(&dir.join("bias_final.csv"), &rows)?;

    out.monitors = vec![mass, extensivity, ck, validity];
    match variant {
        Fp2dVariant::FrozenBias => out.monitors.push(monotone),
        _ if constants.is_some() => out.monitors.extend([micro_bound, force_ineq]),
        _ => {}
    }
    out.extra.insert("snapshots".into(), json!(snapshots));
    out.extra.insert("dt_rescaled".into(), json!(dt));
    out.extra.insert("steps".into(), json!(steps));
    Ok(out)
}

/// Marginal of the biased equilibrium, `exp(-beta W)` normalized on `axis`.
fn biased_marginal(model: &ModelProblem, axis: Axis) -> Result<Density1d> {
    let mut d = Density1d::from_fn(axis, |z| (-model.beta * model.confinement.value(z)).exp())?;
    d.normalize()?;
    Ok(d)
}

fn run_particles(cfg: &ExperimentConfig, model: &ModelProblem, oracle: &FreeEnergyProfile, dir: &Path) -> Result<KindResult> {
    let (xlo, xhi) = model.x_domain.bounds();
    let init = match cfg.init.expect("resolved") {
        InitKind::Equilibrium => InitDistribution::Equilibrium,
        InitKind::Point => InitDistribution::Point { x: cfg.init_x, y: cfg.init_y },
        _ => {
            let y = &model.y_domain;
            InitDistribution::Uniform {
                y_lo: (cfg.init_y - cfg.init_y_half_width).max(y.lo),
                y_hi: (cfg.init_y + cfg.init_y_half_width).min(y.hi),
            }
        }
    };
    let seed = cfg.seed.expect("resolved");
    let ensemble = init_ensemble(model, cfg.n_particles, init, seed)?;
    let warnings = ensemble.warnings.clone();
    let scheme = if cfg.kind == RunKind::ParticlesPlain { Scheme::Plain } else { Scheme::Metric };
    let dt = cfg.dt.expect("resolved");
    let mut config = SamplerConfig::new(dt, scheme);
    config.lookup = cfg.lookup;
    let mut sampler = AbfSampler::new(ensemble, BiasProfile::for_model(model, cfg.n_bins, cfg.tau), config);
    let axis = Axis::new(xlo, xhi, cfg.n_bins, model.x_domain.is_periodic());
    let target = biased_marginal(model, axis)?;
    let steps = cfg.steps();
    let stride = cfg.output_stride.expect("resolved");

    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    let mut writer = DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?;
    let mut out = KindResult::default();
    let mut ck = Monitor::new("csiszar_kullback", true, CK_SLACK, "||hist - psi_xi_inf||_1^2 / 2 - E_macro");
    let mut empty_bins = sampler.profile.occupancy.iter().filter(|&&o| o == 0).count();
    let mut snapshots = 0usize;
    for s in 0..=steps {
        if s % stride == 0 || s == steps {
            let marginal = sampler.marginal(model);
            let rec = DiagnosticsRecord {
                time: sampler.ensemble.time,
                e_total: f64::NAN,
                e_macro: relative_entropy_1d(&marginal, &target),
                e_micro: f64::NAN,
                fisher_macro: f64::NAN,
                tv_macro: tv_distance(&marginal, &target),
                force_error_sq: force_error(&sampler.profile.force_values, oracle, &marginal)?,
                empty_bins,
            };
            ck.observe(0.5 * rec.tv_macro * rec.tv_macro - rec.e_macro);
            writer.push(&rec)?;
            let k = out.records.len();
            if (cfg.snapshot_stride > 0 && k % cfg.snapshot_stride == 0) || s == steps {
                io::write_particle_snapshot(&snap_dir, k, &sampler.ensemble.positions)?;
                snapshots += 1;
            }
            out.records.push(rec);
        }
        if s < steps {
            empty_bins = sampler.advance(model).with_context(|| format!("step {s}"))?.empty_bins;
        }
    }
    writer.finish()?;

    let stats = sampler.bin_statistics(model)?;
    let p = &sampler.profile;
    let mut within = 0usize;
    let mut assessed = 0usize;
    let rows: Vec<BiasRow> = (0..p.n_bins())
        .map(|b| {
            let (lo, hi) = (p.bin_edges[b], p.bin_edges[b + 1]);
            let se = stats.std_errors[b].unwrap_or(f64::NAN);
            if let Some(mean) = stats.means[b] {
                if se > 0.0 {
                    assessed += 1;
                    if (mean - oracle.bin_average_mean_force(lo, hi)).abs() <= SE_MULTIPLIER * se {
                        within += 1;
                    }
                }
            }
            BiasRow { bin_lo: lo, bin_hi: hi, force: p.force_values[b], occupancy: stats.counts[b] as f64, std_error: se, residual: 0.0 }
        })
        .collect();
    io::write_bias(&dir.join("bias_final.csv"), &rows)?;

    out.monitors = vec![ck];
    out.extra.insert("snapshots".into(), json!(snapshots));
    out.extra.insert("steps".into(), json!(steps));
    out.extra.insert("bins_within_3se".into(), json!(within));
    out.extra.insert("bins_assessed".into(), json!(assessed));
    out.extra.insert("warnings".into(), json!(warnings));
    Ok(out)
}

fn run_marginal(cfg: &ExperimentConfig, phys: &ModelProblem, dir: &Path) -> Result<KindResult> {
    let beta = cfg.beta;
    let model = phys.rescaled_to_unit_beta();
    let mut solver = Marginal1dSolver::for_model(&model, cfg.n_x)?;
    let axis = solver.axis;
    let (lo, hi) = (axis.lo, axis.hi);
    let init = cfg.init.expect("resolved");
    let shape = |z: f64| match init {
        InitKind::Uniform => 1.0,
        InitKind::Equilibrium => (-model.confinement.value(z)).exp(),
        _ if axis.periodic => 1.0 + cfg.init_amplitude * (2.0 * PI * (z - lo) / (hi - lo)).cos(),
        _ => (-0.5 * (z - cfg.init_x).powi(2)).exp(),
    };
    let mut psi = Density1d::from_fn(axis, shape)?;
    psi.normalize()?;
    let target = biased_marginal(&model, axis)?;

    // 2D cross-check: the marginal of the adaptive 2D solution obeys the same 1D equation
    let mut pair = if cfg.cross_check && matches!(model.x_domain, XDomain::Torus) {
        let grid = Grid2d::for_model(&model, cfg.n_x, cfg.n_y);
        let solver2 = Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric)?;
        let beta_k = cfg.beta * cfg.k;
        let mut field = DensityField::from_fn(grid, |x, y| {
            shape(x) * if beta_k > 0.0 { (-0.5 * beta_k * (y - cfg.init_y_shift).powi(2)).exp() } else { 1.0 }
        })?;
        field.normalize()?;
        Some((solver2, field))
    } else {
        None
    };

    let dt = cfg.dt.expect("resolved") / beta;
    let steps = cfg.steps();
    let stride = cfg.output_stride.expect("resolved");
    let mut writer = DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?;
    let mut out = KindResult::default();
    let mut mass = Monitor::new("mass_conservation", true, MASS_TOL, "|mass - 1|");
    let mut closure = Monitor::new(
        "marginal_closure",
        false,
        1e-3,
        "L1 distance between the 1D solution and the marginal of the 2D adaptive solution",
    );
    for s in 0..=steps {
        if s % stride == 0 || s == steps {
            let rec = DiagnosticsRecord {
                time: beta * psi.time,
                e_total: f64::NAN,
                e_macro: relative_entropy_1d(&psi, &target),
                e_micro: f64::NAN,
                fisher_macro: fisher_information_1d(&psi, &target),
                tv_macro: tv_distance(&psi, &target),
                force_error_sq: f64::NAN,
                empty_bins: 0,
            };
            mass.observe((psi.mass() - 1.0).abs());
            if let Some((_, field)) = &pair {
                closure.observe(field.marginal().l1_distance(&psi));
            }
            writer.push(&rec)?;
            out.records.push(rec);
        }
        if s < steps {
            solver.step(&mut psi, dt)?;
            if let Some((s2, field)) = &mut pair {
                s2.step(field, dt)?;
            }
        }
    }
    writer.finish()?;
    out.monitors = vec![mass];
    if pair.is_some() {
        out.extra.insert("closure_l1".into(), finite_or_null(closure.worst));
        out.monitors.push(closure);
    }
    out.extra.insert("steps".into(), json!(steps));
    Ok(out)
}

fn config_json(cfg: &ExperimentConfig) -> Value {
    let mut m = Map::new();
    for line in cfg.echo().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.insert(k.to_string(), json!(v));
        }
    }
    Value::Object(m)
}

const FIT_COLUMNS: [&str; 6] = ["E_total", "E_macro", "E_micro", "fisher_macro", "tv_macro", "force_error_sq"];

fn record_column(r: &DiagnosticsRecord, name: &str) -> f64 {
    match name {
        "E_total" => r.e_total,
        "E_macro" => r.e_macro,
        "E_micro" => r.e_micro,
        "fisher_macro" => r.fisher_macro,
        "tv_macro" => r.tv_macro,
        "force_error_sq" => r.force_error_sq,
        _ => f64::NAN,
    }
}

/// Log-linear fits of every diagnostics column, as JSON.
pub fn fits_json(times: &[f64], columns: &[(&str, Vec<f64>)], window: Option<(f64, f64)>) -> Value {
    let mut fits = Map::new();
    for (name, values) in columns {
        if values.iter().all(|v| v.is_nan()) {
            continue;
        }
        let v = match fit_decay_rate(times, values, window) {
            Ok(f) => json!({
                "rate": f.rate,
                "log_intercept": f.log_intercept,
                "r_squared": f.r_squared,
                "n_points": f.n_points,
                "shrunk": f.shrunk,
            }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        fits.insert(name.to_string(), v);
    }
    Value::Object(fits)
}

fn summarize(cfg: &ExperimentConfig, result: KindResult, elapsed: f64) -> Result<Value> {
    let model = cfg.model();
    let mut theory = Map::new();
    if let Some(c) = physical_constants(&model) {
        theory.insert("lambda".into(), json!(c.lambda));
        theory.insert("m".into(), json!(c.m));
        theory.insert("M".into(), json!(c.m_coupling));
        theory.insert("rho".into(), json!(c.rho));
        theory.insert("r".into(), json!(c.r));
        theory.insert("force_error_factor".into(), json!(c.force_error_factor()));
        theory.insert("micro_entropy_rate".into(), json!(2.0 * c.lambda));
        theory.insert("macro_rate".into(), json!(2.0 * c.r / cfg.beta));
    }
    let times: Vec<f64> = result.records.iter().map(|r| r.time).collect();
    let columns: Vec<(&str, Vec<f64>)> =
        FIT_COLUMNS.iter().map(|&n| (n, result.records.iter().map(|r| record_column(r, n)).collect())).collect();
    let fits = if result.records.is_empty() { json!({}) } else { fits_json(&times, &columns, cfg.fit_window) };
    let mut final_values = Map::new();
    if let Some(last) = result.records.last() {
        final_values.insert("t".into(), json!(last.time));
        for &n in &FIT_COLUMNS {
            final_values.insert(n.into(), finite_or_null(record_column(last, n)));
        }
        final_values.insert("empty_bins".into(), json!(last.empty_bins));
    }
    for (k, v) in &result.extra {
        if matches!(v, Value::Number(_)) {
            final_values.insert(k.clone(), v.clone());
        }
    }
    let mut monitors = Map::new();
    let mut fatal_failure = false;
    for m in &result.monitors {
        if m.fatal && !m.pass() {
            log::error!("fatal monitor {} failed: worst {:e} > {:e}", m.name, m.worst, m.limit);
            fatal_failure = true;
        } else if !m.pass() {
            log::warn!("monitor {} failed: worst {:e} > {:e}", m.name, m.worst, m.limit);
        }
        monitors.insert(m.name.into(), m.to_json());
    }
    Ok(json!({
        "kind": cfg.kind.as_str(),
        "exit_code": i32::from(fatal_failure),
        "config": config_json(cfg),
        "theory": theory,
        "fits": fits,
        "fit_window": cfg.fit_window.map(|(a, b)| json!([a, b])),
        "final": final_values,
        "monitors": monitors,
        "outputs": result.records.len(),
        "details": result.extra,
        "elapsed_seconds": elapsed,
    }))
}
