use std::path::PathBuf;
use std::process::ExitCode;

use biharmonic::harness::io::write_json;
use biharmonic::harness::{self, ExitStatus, RunConfig};
use biharmonic::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Simulate and study biharmonic wave maps into spheres on flat tori.
#[derive(Parser)]
#[command(name = "bwm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set evolver.dt=1e-3`.
    #[arg(long = "set", alias = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> biharmonic::Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one configuration, writing CSV records, a JSON summary, a final snapshot and a checkpoint.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare runs across viscosities and against the inviscid run.
    SweepEps {
        #[command(flatten)]
        config: ConfigArgs,
        /// Viscosities (default: study.epsilons).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Mollification rates of the initial data.
    BonaSmith {
        #[command(flatten)]
        config: ConfigArgs,
        /// Mollification parameters (default: study.deltas).
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
        /// Regularity index (default: evolver k).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Distance between runs from perturbed data for several perturbation sizes.
    Continuity {
        #[command(flatten)]
        config: ConfigArgs,
        /// Perturbation sizes (default: study.radii).
        #[arg(long, value_delimiter = ',')]
        radius: Option<Vec<f64>>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Errors against the exact great-circle wave under step and grid refinement.
    Convergence {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the invariant suites and print a residual table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn report<T: Serialize + std::fmt::Display>(config: &RunConfig, study: &str, value: &T) -> biharmonic::Result<()> {
    println!("{value}");
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        config: &'a RunConfig,
        config_hash: String,
        report: &'a T,
    }
    let path = config.output.path(&format!(".{study}.json"));
    write_json(&path, &Envelope { config, config_hash: config.content_hash(), report: value })
}

fn k_or_default(config: &RunConfig, k: Option<usize>) -> usize {
    k.or(config.evolver.k).unwrap_or_else(|| biharmonic::evolver::default_regularity(config.grid.dim))
}

fn execute(command: Command) -> biharmonic::Result<ExitStatus> {
    match command {
        Command::Run { config, resume } => {
            let cfg = config.load()?;
            let outcome = harness::run(&cfg, resume.as_deref())?;
            let s = &outcome.summary;
            match &s.abort {
                Some(reason) => eprintln!("aborted after step {}: {reason}", s.steps),
                None => println!(
                    "completed {} steps (dt {:.4e}); max relative energy drift {:.3e}; max dist {:.3e}",
                    s.steps, s.dt, s.max_relative_energy_drift, s.max_manifold_dist
                ),
            }
            for v in &s.violations {
                eprintln!("invariant violation: {v}");
            }
            Ok(outcome.status)
        }
        Command::SweepEps { config, eps } => {
            let cfg = config.load()?;
            let eps = eps.unwrap_or_else(|| cfg.study.epsilons.clone());
            report(&cfg, "sweep-eps", &harness::sweep_viscosity(&cfg, &eps)?)?;
            Ok(ExitStatus::Success)
        }
        Command::BonaSmith { config, delta, k } => {
            let cfg = config.load()?;
            let deltas = delta.unwrap_or_else(|| cfg.study.deltas.clone());
            report(&cfg, "bona-smith", &harness::bona_smith_study(&cfg, &deltas, k_or_default(&cfg, k))?)?;
            Ok(ExitStatus::Success)
        }
        Command::Continuity { config, radius, k } => {
            let cfg = config.load()?;
            let radii = radius.unwrap_or_else(|| cfg.study.radii.clone());
            report(&cfg, "continuity", &harness::continuity_study(&cfg, &radii, k_or_default(&cfg, k))?)?;
            Ok(ExitStatus::Success)
        }
        Command::Convergence { config } => {
            let cfg = config.load()?;
            report(&cfg, "convergence", &harness::convergence_study(&cfg)?)?;
            Ok(ExitStatus::Success)
        }
        Command::Verify { seed, json } => {
            let r = harness::verify(seed)?;
            println!("{r}");
            if let Some(path) = json {
                write_json(&path, &r)?;
            }
            Ok(if r.passed() { ExitStatus::Success } else { ExitStatus::InvariantViolation })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // bad invocations count as configuration errors
            return ExitCode::from(if usage { ExitStatus::ConfigError.code() as u8 } else { 0 });
        }
    };
    let status = match execute(cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::ConstraintEscape { source, .. } = &e {
                eprintln!("  caused by: {source}");
            }
            ExitStatus::for_error(&e)
        }
    };
    ExitCode::from(status.code() as u8)
}
