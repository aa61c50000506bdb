//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use abflab::{BiasLookup, Confinement, Fp2dSolver, Fp2dVariant, Grid2d, Marginal1dSolver, ModelProblem, TestPotential, YDomain};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    DuplicateKey(String),
    #[error("key `{key}`: cannot parse `{value}` ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    PdeAbfMetric,
    PdeAbfPlain,
    PdeFrozen,
    ParticlesMetric,
    ParticlesPlain,
    MarginalOnly,
    OracleOnly,
}

impl RunKind {
    pub const ALL: [RunKind; 7] = [
        RunKind::PdeAbfMetric,
        RunKind::PdeAbfPlain,
        RunKind::PdeFrozen,
        RunKind::ParticlesMetric,
        RunKind::ParticlesPlain,
        RunKind::MarginalOnly,
        RunKind::OracleOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::PdeAbfMetric => "pde_abf_metric",
            RunKind::PdeAbfPlain => "pde_abf_plain",
            RunKind::PdeFrozen => "pde_frozen",
            RunKind::ParticlesMetric => "particles_metric",
            RunKind::ParticlesPlain => "particles_plain",
            RunKind::MarginalOnly => "marginal_only",
            RunKind::OracleOnly => "oracle_only",
        }
    }

    pub fn is_pde(self) -> bool {
        matches!(self, RunKind::PdeAbfMetric | RunKind::PdeAbfPlain | RunKind::PdeFrozen)
    }

    pub fn is_particles(self) -> bool {
        matches!(self, RunKind::ParticlesMetric | RunKind::ParticlesPlain)
    }
}

impl FromStr for RunKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        RunKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("expected one of {}", RunKind::ALL.map(|k| k.as_str()).join(", ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// PDE: the biased equilibrium. Particles: the Gibbs measure of `V`.
    Equilibrium,
    /// Cosine-modulated marginal times a shifted Gaussian in `y`.
    Perturbed,
    Uniform,
    Point,
}

impl InitKind {
    fn as_str(self) -> &'static str {
        match self {
            InitKind::Equilibrium => "equilibrium",
            InitKind::Perturbed => "perturbed",
            InitKind::Uniform => "uniform",
            InitKind::Point => "point",
        }
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "equilibrium" => Ok(InitKind::Equilibrium),
            "perturbed" => Ok(InitKind::Perturbed),
            "uniform" => Ok(InitKind::Uniform),
            "point" => Ok(InitKind::Point),
            _ => Err("expected equilibrium, perturbed, uniform or point".into()),
        }
    }
}

/// Every setting of one experiment. Optional fields are filled by
/// [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: RunKind,
    pub c: f64,
    pub a: f64,
    pub k: f64,
    pub beta: f64,
    /// `torus` or `interval`.
    pub x_domain: String,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Curvature of the harmonic confinement on an interval.
    pub alpha: f64,
    pub w_center: f64,
    pub y_lo: Option<f64>,
    pub y_hi: Option<f64>,
    pub n_x: usize,
    pub n_y: usize,
    pub n_bins: usize,
    pub n_particles: usize,
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Steps between diagnostics rows.
    pub output_stride: Option<usize>,
    /// Diagnostics rows between snapshots; 0 writes only the final one.
    pub snapshot_stride: usize,
    pub tau: f64,
    pub seed: Option<u64>,
    pub init: Option<InitKind>,
    pub init_amplitude: f64,
    pub init_y_shift: f64,
    pub init_x: f64,
    pub init_y: f64,
    pub init_y_half_width: f64,
    pub lookup: BiasLookup,
    pub oracle_points: usize,
    pub fit_window: Option<(f64, f64)>,
    /// Run a 2D solver alongside the 1D one in `marginal_only` on the torus.
    pub cross_check: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: RunKind::PdeAbfMetric,
            c: 1.0,
            a: 0.5,
            k: 4.0,
            beta: 1.0,
            x_domain: "torus".into(),
            x_lo: 0.0,
            x_hi: 1.0,
            alpha: 0.0,
            w_center: 0.0,
            y_lo: None,
            y_hi: None,
            n_x: 128,
            n_y: 128,
            n_bins: 32,
            n_particles: 100_000,
            dt: None,
            t_end: 1.0,
            output_stride: None,
            snapshot_stride: 10,
            tau: 0.0,
            seed: None,
            init: None,
            init_amplitude: 0.5,
            init_y_shift: 0.5,
            init_x: 1.0,
            init_y: 0.0,
            init_y_half_width: 1.0,
            lookup: BiasLookup::PiecewiseConstant,
            oracle_points: 256,
            fit_window: None,
            cross_check: true,
            output_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    /// Parse config text: one `key = value` per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: n + 1, text: raw.trim().into() });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey(key.into()));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "kind" => self.kind = value.parse().map_err(|reason| ConfigError::BadValue { key: key.into(), value: value.into(), reason })?,
            "c" => self.c = parse(key, value)?,
            "a" => self.a = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "x_domain" => match value {
                "torus" | "interval" => self.x_domain = value.into(),
                _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected torus or interval".into() }),
            },
            "x_lo" => self.x_lo = parse(key, value)?,
            "x_hi" => self.x_hi = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "w_center" => self.w_center = parse(key, value)?,
            "y_lo" => self.y_lo = parse_optional(key, value)?,
            "y_hi" => self.y_hi = parse_optional(key, value)?,
            "n_x" => self.n_x = parse(key, value)?,
            "n_y" => self.n_y = parse(key, value)?,
            "n_bins" => self.n_bins = parse(key, value)?,
            "n_particles" => self.n_particles = parse(key, value)?,
            "dt" => self.dt = parse_optional(key, value)?,
            "t_end" => self.t_end = parse(key, value)?,
            "output_stride" => self.output_stride = parse_optional(key, value)?,
            "snapshot_stride" => self.snapshot_stride = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "seed" => self.seed = parse_optional(key, value)?,
            "init" => {
                self.init = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|reason| ConfigError::BadValue { key: key.into(), value: value.into(), reason })?)
                }
            }
            "init_amplitude" => self.init_amplitude = parse(key, value)?,
            "init_y_shift" => self.init_y_shift = parse(key, value)?,
            "init_x" => self.init_x = parse(key, value)?,
            "init_y" => self.init_y = parse(key, value)?,
            "init_y_half_width" => self.init_y_half_width = parse(key, value)?,
            "lookup" => {
                self.lookup = match value {
                    "piecewise_constant" => BiasLookup::PiecewiseConstant,
                    "linear" => BiasLookup::Linear,
                    _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected piecewise_constant or linear".into() }),
                }
            }
            "oracle_points" => self.oracle_points = parse(key, value)?,
            "fit_window" => {
                self.fit_window = if value == "auto" {
                    None
                } else {
                    let bad = || ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected `t0,t1`".into() };
                    let (a, b) = value.split_once(',').ok_or_else(bad)?;
                    Some((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
                }
            }
            "cross_check" => self.cross_check = parse(key, value)?,
            "output_dir" => self.output_dir = if value == "auto" { None } else { Some(PathBuf::from(value)) },
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Physical model described by the config.
    pub fn model(&self) -> ModelProblem {
        let mut model = ModelProblem::test_family(TestPotential::new(self.c, self.a, self.k), self.beta);
        if self.x_domain == "interval" {
            let w = if self.alpha != 0.0 {
                Confinement::Harmonic { alpha: self.alpha, center: self.w_center }
            } else {
                Confinement::None
            };
            model = model.on_interval(self.x_lo, self.x_hi, w);
        }
        if let (Some(lo), Some(hi)) = (self.y_lo, self.y_hi) {
            model = model.with_y_domain(YDomain { lo, hi });
        }
        model
    }

    fn invalid(msg: impl Into<String>) -> ConfigError {
        ConfigError::Invalid(msg.into())
    }

    /// Fill every `auto` value and check the whole configuration. Nothing is
    /// written before this succeeds.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Self::invalid("beta must be positive"));
        }
        if !(self.k > 0.0) && (self.y_lo.is_none() || self.y_hi.is_none()) {
            return Err(Self::invalid("k <= 0 needs explicit y_lo and y_hi"));
        }
        if self.y_lo.is_none() || self.y_hi.is_none() {
            let d = YDomain::default_for(self.beta, self.k);
            self.y_lo = Some(self.y_lo.unwrap_or(d.lo));
            self.y_hi = Some(self.y_hi.unwrap_or(d.hi));
        }
        if self.x_domain == "torus" {
            if (self.x_lo, self.x_hi) != (0.0, 1.0) {
                return Err(Self::invalid("the torus is [0, 1); x_lo and x_hi apply to intervals only"));
            }
            if self.alpha != 0.0 {
                return Err(Self::invalid("alpha must be 0 on the torus"));
            }
        }
        self.model().validate().map_err(|e| Self::invalid(e.to_string()))?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Self::invalid("t_end must be positive"));
        }
        if self.tau < 0.0 {
            return Err(Self::invalid("tau must be nonnegative"));
        }
        if self.oracle_points < 2 {
            return Err(Self::invalid("oracle_points must be at least 2"));
        }
        if let Some((a, b)) = self.fit_window {
            if !(a < b) {
                return Err(Self::invalid("fit_window needs t0 < t1"));
            }
        }
        let kind = self.kind;
        if kind.is_pde() || kind == RunKind::MarginalOnly {
            if self.x_domain != "torus" && kind != RunKind::MarginalOnly {
                return Err(Self::invalid("PDE runs use the torus"));
            }
            if self.n_x < 4 || self.n_y < 4 {
                return Err(Self::invalid("n_x and n_y must be at least 4"));
            }
        }
        if kind.is_particles() {
            if self.seed.is_none() {
                return Err(Self::invalid("particle runs need a seed (config key `seed` or --seed)"));
            }
            if self.n_particles == 0 || self.n_bins == 0 {
                return Err(Self::invalid("n_particles and n_bins must be positive"));
            }
        }
        let default_init = match kind {
            RunKind::PdeFrozen | RunKind::ParticlesMetric | RunKind::ParticlesPlain => InitKind::Equilibrium,
            _ => InitKind::Perturbed,
        };
        let init = *self.init.get_or_insert(default_init);
        let allowed: &[InitKind] = if kind.is_particles() {
            &[InitKind::Equilibrium, InitKind::Uniform, InitKind::Point]
        } else {
            &[InitKind::Equilibrium, InitKind::Perturbed, InitKind::Uniform]
        };
        if kind != RunKind::OracleOnly && !allowed.contains(&init) {
            return Err(Self::invalid(format!("init = {} is not available for {}", init.as_str(), kind.as_str())));
        }
        if kind.is_pde() && init == InitKind::Perturbed && self.init_amplitude.abs() >= 1.0 {
            return Err(Self::invalid("init_amplitude must lie in (-1, 1) to keep the density positive"));
        }

        let limit = self.step_limit().map_err(Self::invalid)?;
        let dt = match self.dt {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(Self::invalid("dt must be positive"));
                }
                if let Some(limit) = limit {
                    if dt > limit {
                        return Err(Self::invalid(format!("dt = {dt:e} exceeds the step bound; admissible dt <= {limit:e}")));
                    }
                }
                dt
            }
            None => match limit {
                Some(limit) => {
                    let steps = (self.t_end / (0.95 * limit)).ceil().max(1.0);
                    self.t_end / steps
                }
                None => 1e-3,
            },
        };
        self.dt = Some(dt);
        let steps = (self.t_end / dt).round();
        if kind != RunKind::OracleOnly && ((steps * dt - self.t_end).abs() > 1e-9 * self.t_end || steps < 1.0) {
            return Err(Self::invalid(format!("t_end = {} is not a whole number of steps of dt = {dt:e}", self.t_end)));
        }
        if self.output_stride.is_none() {
            self.output_stride = Some(((steps as usize) / 100).max(1));
        }
        if self.output_stride == Some(0) {
            return Err(Self::invalid("output_stride must be at least 1"));
        }
        Ok(self)
    }

    /// Physical step bound of the explicit solvers used by this run, if any.
    fn step_limit(&self) -> Result<Option<f64>, String> {
        let kind = self.kind;
        if !(kind.is_pde() || kind == RunKind::MarginalOnly) {
            return Ok(None);
        }
        let model = self.model().rescaled_to_unit_beta();
        let mut limit = f64::INFINITY;
        if kind.is_pde() || (kind == RunKind::MarginalOnly && self.cross_check && self.x_domain == "torus") {
            // a frozen mean force is a conditional average of d_x V, so the adaptive bound covers it
            let grid = Grid2d::for_model(&model, self.n_x, self.n_y);
            let solver = Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric).map_err(|e| e.to_string())?;
            limit = limit.min(solver.uniform_admissible_dt());
        }
        if kind == RunKind::MarginalOnly {
            let solver = Marginal1dSolver::for_model(&model, self.n_x).map_err(|e| e.to_string())?;
            limit = limit.min(solver.admissible_dt());
        }
        // solvers run in rescaled time t / beta
        Ok(Some(limit * self.beta))
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt.expect("resolved config")).round() as usize
    }

    /// Resolved configuration as parseable `key = value` text.
    pub fn echo(&self) -> String {
        let lookup = match self.lookup {
            BiasLookup::PiecewiseConstant => "piecewise_constant",
            BiasLookup::Linear => "linear",
        };
        let fit = self.fit_window.map_or_else(|| "auto".to_string(), |(a, b)| format!("{a},{b}"));
        let out = self.output_dir.as_ref().map_or_else(|| "auto".to_string(), |p| p.display().to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("kind", self.kind.as_str().into()),
            ("c", self.c.to_string()),
            ("a", self.a.to_string()),
            ("k", self.k.to_string()),
            ("beta", self.beta.to_string()),
            ("x_domain", self.x_domain.clone()),
            ("x_lo", self.x_lo.to_string()),
            ("x_hi", self.x_hi.to_string()),
            ("alpha", self.alpha.to_string()),
            ("w_center", self.w_center.to_string()),
            ("y_lo", fmt_opt(&self.y_lo)),
            ("y_hi", fmt_opt(&self.y_hi)),
            ("n_x", self.n_x.to_string()),
            ("n_y", self.n_y.to_string()),
            ("n_bins", self.n_bins.to_string()),
            ("n_particles", self.n_particles.to_string()),
            ("dt", fmt_opt(&self.dt)),
            ("t_end", self.t_end.to_string()),
            ("output_stride", fmt_opt(&self.output_stride)),
            ("snapshot_stride", self.snapshot_stride.to_string()),
            ("tau", self.tau.to_string()),
            ("seed", fmt_opt(&self.seed)),
            ("init", self.init.map_or_else(|| "auto".to_string(), |i| i.as_str().to_string())),
            ("init_amplitude", self.init_amplitude.to_string()),
            ("init_y_shift", self.init_y_shift.to_string()),
            ("init_x", self.init_x.to_string()),
            ("init_y", self.init_y.to_string()),
            ("init_y_half_width", self.init_y_half_width.to_string()),
            ("lookup", lookup.into()),
            ("oracle_points", self.oracle_points.to_string()),
            ("fit_window", fit),
            ("cross_check", self.cross_check.to_string()),
            ("output_dir", out),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let cfg = ExperimentConfig::parse("# header\nkind = particles_metric # trailing\n\nseed = 7\nbeta=2\n").unwrap();
        assert_eq!(cfg.kind, RunKind::ParticlesMetric);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.beta, 2.0);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert_eq!(ExperimentConfig::parse("foo = 1"), Err(ConfigError::UnknownKey("foo".into())));
        assert_eq!(ExperimentConfig::parse("c = 1\nc = 2"), Err(ConfigError::DuplicateKey("c".into())));
        assert!(matches!(ExperimentConfig::parse("c 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("n_x = -3"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::parse("kind = pde_abf_metric\nn_x = 16\nn_y = 16\nt_end = 0.01").unwrap().resolve().unwrap();
        let again = ExperimentConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.clone().resolve().unwrap(), cfg);
    }

    #[test]
    fn particle_runs_need_a_seed() {
        let cfg = ExperimentConfig::parse("kind = particles_metric").unwrap();
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(m)) if m.contains("seed")));
    }

    #[test]
    fn oversized_step_is_refused_with_the_bound() {
        let cfg = ExperimentConfig::parse("kind = pde_abf_metric\nn_x = 32\nn_y = 32\ndt = 0.01\nt_end = 0.1").unwrap();
        match cfg.resolve() {
            Err(ConfigError::Invalid(m)) => assert!(m.contains("admissible"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_y_range_follows_beta_and_k() {
        let cfg = ExperimentConfig::parse("kind = oracle_only\nbeta = 4\nk = 4").unwrap().resolve().unwrap();
        assert_eq!(cfg.y_hi, Some(2.0));
        assert_eq!(cfg.y_lo, Some(-2.0));
    }
}
