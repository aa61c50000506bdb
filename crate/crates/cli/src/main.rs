use std::path::PathBuf;
use std::process::ExitCode;

use abflab_cli::config::ExperimentConfig;
use abflab_cli::{compare_runs, rates, run, CliError, OutputTarget, RunKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abflab", version, about = "Adaptive biasing force experiments")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exact output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for timestamped run directories.
    #[arg(long, env = "ABFLAB_OUT", hide_env_values = true)]
    out_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace a previous run in `--out`.
    #[arg(long)]
    overwrite: bool,
    /// Override a config key, e.g. `--set n_x=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Free-energy profile only; writes profile.csv.
    Oracle(RunArgs),
    /// Run the experiment described by the config.
    Run(RunArgs),
    /// Compare two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Multiplier on the combined per-bin error scale.
        #[arg(long, default_value_t = 3.0)]
        tol: f64,
        /// Fail when any bin disagrees.
        #[arg(long)]
        strict: bool,
    },
    /// Fit decay rates of a run and write a gnuplot script.
    Rates {
        dir: PathBuf,
        /// Fit window `t0,t1`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected t0,t1")?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn load_config(args: &RunArgs, force_kind: Option<RunKind>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for s in &args.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(kind) = force_kind {
        cfg.kind = kind;
    }
    Ok(cfg)
}

fn execute_run(args: RunArgs, force_kind: Option<RunKind>) -> Result<i32, CliError> {
    let cfg = load_config(&args, force_kind)?;
    let target = OutputTarget { exact: args.out, root: args.out_root, overwrite: args.overwrite };
    let outcome = run(cfg, &target)?;
    println!("{}", outcome.dir.display());
    if let Some(m) = outcome.summary["monitors"].as_object() {
        for (name, v) in m {
            let status = if v["pass"].as_bool() == Some(true) { "ok" } else { "FAILED" };
            let fatal = if v["fatal"].as_bool() == Some(true) { " (fatal)" } else { "" };
            println!("  {name}: {status}{fatal}");
        }
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let code = match cli.command {
        Command::Oracle(args) => execute_run(args, Some(RunKind::OracleOnly)),
        Command::Run(args) => execute_run(args, None),
        Command::Compare { a, b, tol, strict } => {
            let cmp = compare_runs(&a, &b, tol);
            print!("{}", cmp.render());
            Ok(if !cmp.problems.is_empty() {
                2
            } else if strict && !cmp.bins_agree() {
                1
            } else {
                0
            })
        }
        Command::Rates { dir, window } => match rates::rates(&dir, window) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report.fits).unwrap_or_default());
                println!("wrote {}", report.script.display());
                Ok(0)
            }
            Err(e) => Err(CliError::Runtime(e)),
        },
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
