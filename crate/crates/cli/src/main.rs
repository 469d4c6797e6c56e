//! `gp-mass`: command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver did not
//! converge, 4 degenerate scattering regime, 1 anything else (including a
//! failed acceptance check).

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gp_mass::evolve::PerturbationKind;

use commands::{EvolveArgs, StabilityArgs, SweepArgs, Target};
use config::RunConfig;
use error::{CliError, CliResult};
use output::Outputs;

const DEFAULT_OUT: &str = "gp-mass-out";

#[derive(Parser, Debug)]
#[command(name = "gp-mass", version, about = "Solitary waves of the coupled Gross-Pitaevskii system with prescribed masses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML, or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random choice; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write gnuplot scripts for the CSV tables.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args, Debug)]
struct TargetArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
}

impl From<&TargetArgs> for Target {
    fn from(t: &TargetArgs) -> Target {
        Target {
            alpha: t.alpha,
            rho1: t.rho1,
            rho2: t.rho2,
        }
    }
}

#[derive(Subcommand, Debug)]
#[command(allow_negative_numbers = true)]
enum Command {
    /// Principal eigenpairs of both trapping operators.
    Eig {
        #[command(flatten)]
        common: Common,
    },
    /// Maximizer of M(alpha, rho1, rho2) and its multipliers.
    #[command(allow_negative_numbers = true)]
    Maximize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
        /// Number of randomly perturbed starts.
        #[arg(long)]
        starts: Option<usize>,
        /// Relative perturbation size of the starts.
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Branch in alpha at fixed masses, e(alpha) and the monotonicity verdict.
    #[command(allow_negative_numbers = true)]
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho1: Option<f64>,
        #[arg(long)]
        rho2: Option<f64>,
        #[arg(long)]
        alpha_min: Option<f64>,
        #[arg(long)]
        alpha_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        alpha_star: Option<f64>,
    },
    /// Kernel diagnostics and small-mass scaling at one theta.
    #[command(allow_negative_numbers = true)]
    Bifurcate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        /// Comma-separated eps values.
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
    },
    /// One trajectory from a (perturbed) standing wave.
    #[command(allow_negative_numbers = true)]
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        delta: Option<f64>,
        /// random-bump, mass-rotation or branch-tangent.
        #[arg(long)]
        kind: Option<PerturbationKind>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Time at which to dump the state; repeatable.
        #[arg(long = "snapshot")]
        snapshots: Vec<f64>,
    },
    /// Perturbation experiments over kinds and seeds.
    #[command(allow_negative_numbers = true)]
    Stability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Seeds per kind.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated perturbation kinds.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<PerturbationKind>>,
    },
    /// The verification suite; exits 0 iff every check passes.
    Acceptance {
        #[command(flatten)]
        common: Common,
        /// Halve the grid sizes.
        #[arg(long)]
        halved: bool,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eig { .. } => "eig",
            Command::Maximize { .. } => "maximize",
            Command::Sweep { .. } => "sweep",
            Command::Bifurcate { .. } => "bifurcate",
            Command::Evolve { .. } => "evolve",
            Command::Stability { .. } => "stability",
            Command::Acceptance { .. } => "acceptance",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Eig { common }
            | Command::Maximize { common, .. }
            | Command::Sweep { common, .. }
            | Command::Bifurcate { common, .. }
            | Command::Evolve { common, .. }
            | Command::Stability { common, .. }
            | Command::Acceptance { common, .. } => common,
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("GP_MASS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("GP_MASS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli, argv: &[String]) -> CliResult<()> {
    configure_threads()?;
    let common = cli.command.common();
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.gnuplot |= common.gnuplot;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.output_dir = Some(dir.clone());
    // Fail on configuration problems before creating anything on disk.
    cfg.solve_options()?;
    if !matches!(cli.command, Command::Acceptance { .. }) {
        cfg.model()?;
    }
    let mut out = Outputs::create(&dir)?;
    let result = match &cli.command {
        Command::Eig { .. } => commands::eig(&cfg, &mut out),
        Command::Maximize {
            target,
            starts,
            amplitude,
            ..
        } => commands::maximize_cmd(&cfg, &mut out, &target.into(), *starts, *amplitude),
        Command::Sweep {
            rho1,
            rho2,
            alpha_min,
            alpha_max,
            points,
            alpha_star,
            ..
        } => commands::sweep_cmd(
            &cfg,
            &mut out,
            &SweepArgs {
                rho1: *rho1,
                rho2: *rho2,
                alpha_min: *alpha_min,
                alpha_max: *alpha_max,
                points: *points,
                alpha_star: *alpha_star,
            },
        ),
        Command::Bifurcate { theta, eps_grid, .. } => commands::bifurcate(&cfg, &mut out, *theta, eps_grid.clone()),
        Command::Evolve {
            target,
            delta,
            kind,
            dt,
            horizon,
            snapshots,
            ..
        } => commands::evolve(
            &cfg,
            &mut out,
            &EvolveArgs {
                target: target.into(),
                delta: *delta,
                kind: *kind,
                dt: *dt,
                horizon: *horizon,
                snapshots: snapshots.clone(),
            },
        ),
        Command::Stability {
            target,
            delta,
            dt,
            horizon,
            seeds,
            kinds,
            ..
        } => commands::stability(
            &cfg,
            &mut out,
            &StabilityArgs {
                target: target.into(),
                delta: *delta,
                dt: *dt,
                horizon: *horizon,
                seeds: *seeds,
                kinds: kinds.clone(),
            },
        ),
        Command::Acceptance { halved, criteria, .. } => {
            commands::acceptance(&cfg, &mut out, *halved, criteria.clone())
        }
    };
    // The manifest records whatever was written, also for a failed suite.
    let manifest = out.finish(cli.command.name(), argv, &cfg);
    result?;
    manifest?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gp-mass: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
