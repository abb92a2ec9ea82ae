use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fpk::config::{Controller, ExperimentConfig, PotentialKind, Scenario};
use fpk::verbs::{self, Outcome};

/// Feedback stabilization of the discretized Fokker-Planck equation.
#[derive(Parser)]
#[command(name = "fpk", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Each flag overrides the matching config field.
#[derive(Args, Default)]
struct Overrides {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    nx1: Option<usize>,
    #[arg(long, global = true)]
    nx2: Option<usize>,
    #[arg(long, global = true)]
    potential: Option<PotentialKind>,
    #[arg(long, global = true)]
    nu: Option<f64>,
    #[arg(long, global = true)]
    controller: Option<Controller>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    mu_margin: Option<f64>,
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    #[arg(long, global = true)]
    initial: Option<PathBuf>,
    #[arg(long, global = true)]
    t_end: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    stop_below: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the generator and stationary density.
    Assemble,
    /// Leading eigenvalues and the shift.
    Spectrum,
    /// Control shape function and Hautus margins.
    Shape,
    /// Reduced Riccati solution and gain.
    SolveRiccati,
    /// Lyapunov-based law and the closed-loop eigenvalue check.
    SolveLyapunov,
    /// Full run: synthesis, simulation, diagnostics.
    Simulate,
    /// Align trajectories of finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
    /// Both scenarios under every controller.
    ReproducePaper,
}

impl Overrides {
    fn apply(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$f { c.$($dst).+ = v; })*
            };
        }
        set!(
            nx1 => grid.nx1, nx2 => grid.nx2,
            potential => model.potential, nu => model.nu,
            controller => control.controller, d => control.d, mu_margin => control.mu_margin,
            scenario => simulation.scenario, t_end => simulation.t_end, samples => simulation.samples,
            tol => simulation.tol, seed => simulation.seed,
            out => output.dir,
        );
        if self.delta.is_some() {
            c.control.delta = self.delta;
        }
        if self.initial.is_some() {
            c.simulation.initial = self.initial;
        }
        if self.stop_below.is_some() {
            c.simulation.stop_below = self.stop_below;
        }
        if self.cache.is_some() {
            c.output.cache = self.cache;
        }
        c.validate()?;
        Ok(c)
    }
}

fn report(o: &Outcome) {
    for line in &o.summary {
        println!("{line}");
    }
    for c in &o.certificates {
        let tag = match (c.passed(), c.enforced) {
            (true, _) => "ok",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        let op = if c.upper { "<=" } else { ">=" };
        println!("  [{tag:>4}] {}: {:.3e} {op} {:.1e}", c.name, c.value, c.limit);
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = cli.overrides.apply()?;
    match cli.command {
        Command::Assemble => verbs::assemble(&cfg),
        Command::Spectrum => verbs::spectrum(&cfg),
        Command::Shape => verbs::shape(&cfg),
        Command::SolveRiccati => verbs::solve_riccati(&cfg),
        Command::SolveLyapunov => verbs::solve_lyapunov(&cfg),
        Command::Simulate => verbs::simulate(&cfg),
        Command::Compare { runs } => verbs::compare(&runs, &cfg.output.dir),
        Command::ReproducePaper => verbs::reproduce_paper(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(o) => {
            report(&o);
            if o.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("some certificates failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
