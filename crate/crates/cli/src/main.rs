use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use randper::config::{load_config_file, RunConfig};
use randper::pipeline::{parse_checks, run_solve, run_sweep, run_verify, write_sweep, write_verify};
use randper::presets::{negative_controls, preset_registry};
use randper::Error;

/// Random periodic solutions of dX = [AX + h(t,X)]dt + σ(t)dW.
#[derive(Parser, Debug)]
#[command(name = "randper", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the fixed-point problem on each ensemble path and write the
    /// solutions on one period.
    Solve(RunArgs),
    /// Run verification checks and write a report table.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated check groups, or `all`.
        #[arg(long, default_value = "all")]
        checks: String,
    },
    /// Refine dt, tail length and tolerance; fit a tolerance model.
    Sweep(RunArgs),
    /// List built-in systems and negative controls.
    Presets,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system; overrides the config's system.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of noise paths.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Time steps per period.
    #[arg(long)]
    dt_steps: Option<usize>,
    /// Truncation length of the gain operator, in periods.
    #[arg(long)]
    tail: Option<usize>,
    /// Deepest pull-back start, in periods.
    #[arg(long)]
    nmax: Option<usize>,
    /// Fixed-point stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output directory [default: out].
    #[arg(long, env = "RANDPER_OUT")]
    out: Option<PathBuf>,
    /// Iterate even when the small-gain condition fails.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn resolve(&self) -> randper::Result<(RunConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_config_file(path)?,
            (None, Some(name)) => RunConfig::for_preset(name),
            (None, None) => return Err(Error::Config("give --config or --preset".into())),
        };
        if let Some(name) = &self.preset {
            cfg.preset = Some(name.clone());
            cfg.system = None;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.ensemble {
            cfg.ensemble = v;
        }
        if let Some(v) = self.dt_steps {
            cfg.steps_per_period = v;
        }
        if let Some(v) = self.tail {
            cfg.tail_periods = v;
        }
        if let Some(v) = self.nmax {
            cfg.n_max = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        cfg.force |= self.force;
        let out = self.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::UnknownPreset(_)) => 2,
        Some(Error::NoContraction { .. }) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Solve(args) => {
            let (cfg, out) = args.resolve()?;
            let summary = run_solve(&cfg, &out)?;
            print!("{}", summary.render(&cfg));
            println!("wrote {} solution files to {}", summary.files.len(), out.display());
            Ok(true)
        }
        Command::Verify { run, checks } => {
            let (cfg, out) = run.resolve()?;
            let checks = parse_checks(&checks)?;
            let summary = run_verify(&cfg, &checks)?;
            write_verify(&summary, &cfg, &out).with_context(|| format!("writing reports to {}", out.display()))?;
            print!("{}", summary.render());
            Ok(summary.all_pass())
        }
        Command::Sweep(args) => {
            let (cfg, out) = args.resolve()?;
            let summary = run_sweep(&cfg)?;
            write_sweep(&summary, &out).with_context(|| format!("writing sweep to {}", out.display()))?;
            print!("{}", summary.render());
            Ok(true)
        }
        Command::Presets => {
            for p in preset_registry() {
                println!("{:<20} q = {:.6}  eigenvalues {:?}  {}", p.name(), p.contraction_bound, p.eigenvalues, p.summary);
            }
            println!("negative controls:");
            for p in negative_controls() {
                println!("{:<20} {}", p.name(), p.summary);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
