//! Single runs: build, evolve, record, checkpoint.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::initial::initial_data;
use super::io::{self, Checkpoint, CheckpointHeader};
use crate::diagnostics::{DiagnosticsMonitor, DiagnosticsRecord, MonitorOptions};
use crate::error::{Error, Result};
use crate::evolver::{evolve_range, step_plan, DiagnosticsSink, EvolverConfig, State, StepRange};
use crate::geometry::TargetManifold;
use crate::grid::PeriodicGrid;
use crate::nonlinearity::Nonlinearity;

/// Process exit codes shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExitStatus {
    Success = 0,
    InvariantViolation = 2,
    NumericalAbort = 3,
    ConfigError = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// Exit status for an error that escaped a subcommand; unreadable inputs
    /// and unwritable outputs count as configuration errors.
    pub fn for_error(e: &Error) -> Self {
        if e.is_numerical_abort() {
            ExitStatus::NumericalAbort
        } else {
            ExitStatus::ConfigError
        }
    }
}

/// Grid, target, initial state and resolved evolver settings of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: PeriodicGrid,
    pub target: TargetManifold,
    pub initial: State,
    pub evolver: EvolverConfig,
    /// Config with `dt` and `k` pinned.
    pub config: RunConfig,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.check()?;
    let grid = config.grid.build()?;
    let target = config.target.build()?;
    let initial = initial_data(&config.initial, &grid, &target, config.seed)?;
    let evolver = config.resolve_evolver(&initial.u)?;
    let config = config.resolved(&evolver);
    Ok(Prepared { grid, target, initial, evolver, config })
}

pub fn monitor_options(p: &Prepared) -> Result<MonitorOptions> {
    let energy_equality = if p.config.output.energy_equality {
        Some(Nonlinearity::new(&p.target, &p.grid, p.evolver.dealias_factor)?)
    } else {
        None
    };
    Ok(MonitorOptions { k: p.evolver.k, epsilon: p.evolver.epsilon, energy_equality })
}

/// Result of a (possibly aborted) simulation with its records.
#[derive(Debug)]
pub struct Simulation {
    pub records: Vec<DiagnosticsRecord>,
    /// States at the record steps, when requested.
    pub states: Vec<State>,
    pub final_state: State,
    pub steps: usize,
    pub total_steps: usize,
    pub dt: f64,
    pub abort: Option<Error>,
}

struct RunSink<'a> {
    monitor: DiagnosticsMonitor,
    keep_states: bool,
    states: Vec<State>,
    checkpoints: Option<CheckpointWriter<'a>>,
    observed: usize,
    last_step: Option<usize>,
}

struct CheckpointWriter<'a> {
    path: &'a Path,
    every: usize,
    template: CheckpointHeader,
}

impl RunSink<'_> {
    fn checkpoint(&self, step: usize, state: &State, periodic: bool) -> Result<()> {
        let Some(w) = &self.checkpoints else { return Ok(()) };
        let Some((initial, progress)) = self.monitor.progress() else { return Ok(()) };
        let mut header = w.template.clone();
        header.step = step;
        header.t = state.t;
        header.t_initial = initial.t;
        header.monitor = progress;
        let path = if periodic { periodic_checkpoint_path(w.path, step) } else { w.path.to_path_buf() };
        io::write_checkpoint(&path, &Checkpoint { header, state: state.clone(), initial: initial.clone() })
    }
}

impl DiagnosticsSink for RunSink<'_> {
    fn observe(&mut self, step: usize, state: &State) -> Result<()> {
        self.monitor.observe(step, state)?;
        if self.keep_states {
            self.states.push(state.clone());
        }
        self.observed += 1;
        self.last_step = Some(step);
        if let Some(w) = &self.checkpoints {
            if w.every > 0 && self.observed.is_multiple_of(w.every) {
                self.checkpoint(step, state, true)?;
            }
        }
        Ok(())
    }
}

/// `run.ckpt` becomes `run.00000120.ckpt` for the checkpoint taken at step 120.
pub fn periodic_checkpoint_path(path: &Path, step: usize) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{step:08}.ckpt"))
}

/// Where and how a simulation reports.
#[derive(Default)]
pub struct SimulationOptions<'a> {
    pub csv: Option<Box<dyn std::io::Write + Send>>,
    pub keep_states: bool,
    pub checkpoint: Option<&'a Path>,
    pub resume: Option<Checkpoint>,
}

/// Evolve the prepared data, from the start or from a checkpoint.
pub fn simulate(p: &Prepared, options: SimulationOptions<'_>) -> Result<Simulation> {
    let (n, dt) = step_plan(p.config.duration, p.evolver.dt);
    let hash = p.config.content_hash();
    let (start, plan, monitor) = match options.resume {
        Some(ck) => {
            if ck.header.config_hash != hash {
                return Err(Error::Config(format!(
                    "checkpoint belongs to config {} but this config hashes to {hash}",
                    ck.header.config_hash
                )));
            }
            let plan = StepRange { t0: ck.header.t0, dt: ck.header.dt, first: ck.header.step, last: ck.header.total_steps };
            let monitor = DiagnosticsMonitor::resume(&p.target, monitor_options(p)?, ck.initial, ck.header.monitor);
            (ck.state, plan, monitor)
        }
        None => {
            let plan = StepRange { t0: p.initial.t, dt, first: 0, last: n };
            (p.initial.clone(), plan, DiagnosticsMonitor::new(&p.target, monitor_options(p)?))
        }
    };
    let monitor = match options.csv {
        Some(out) => monitor.with_csv(out)?,
        None => monitor,
    };
    let template = CheckpointHeader {
        config_hash: hash,
        config: p.config.to_toml()?,
        grid: p.grid.spec(),
        components: p.target.ambient_dim(),
        step: 0,
        total_steps: plan.last,
        t0: plan.t0,
        dt: plan.dt,
        t: 0.0,
        t_initial: 0.0,
        monitor: Default::default(),
    };
    let every = p.config.output.checkpoint_every;
    let mut sink = RunSink {
        monitor,
        keep_states: options.keep_states,
        states: Vec::new(),
        checkpoints: options.checkpoint.map(|path| CheckpointWriter { path, every, template }),
        observed: 0,
        last_step: None,
    };
    let evo = evolve_range(&start, &plan, &p.evolver, &p.target, p.config.record_stride, &mut sink)?;
    if evo.abort.is_some() && sink.last_step != Some(evo.steps) && evo.steps > plan.first {
        // the last good state closes the flagged partial trajectory
        sink.observe(evo.steps, &evo.state)?;
    }
    sink.checkpoint(evo.steps, &evo.state, false)?;
    sink.monitor.finish()?;
    Ok(Simulation {
        records: std::mem::take(&mut sink.monitor.records),
        states: sink.states,
        final_state: evo.state,
        steps: evo.steps,
        total_steps: plan.last,
        dt: plan.dt,
        abort: evo.abort,
    })
}

/// Invariant violations visible in the records.
pub fn record_violations(records: &[DiagnosticsRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        if !r.is_finite() {
            out.push(format!("non-finite record at step {}", r.step));
        }
    }
    for w in records.windows(2) {
        if w[1].blowup_integral < w[0].blowup_integral {
            out.push(format!("blow-up integral decreased at step {}", w[1].step));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub config_hash: String,
    pub completed: bool,
    pub abort: Option<String>,
    pub steps: usize,
    pub total_steps: usize,
    pub dt: f64,
    pub final_time: f64,
    pub records: usize,
    pub final_record: Option<DiagnosticsRecord>,
    pub max_relative_energy_drift: f64,
    pub max_manifold_dist: f64,
    pub max_tangency: f64,
    pub violations: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub simulation: Simulation,
    pub status: ExitStatus,
}

pub fn summarize(p: &Prepared, sim: &Simulation) -> (RunSummary, ExitStatus) {
    let violations = record_violations(&sim.records);
    let status = if sim.abort.is_some() {
        ExitStatus::NumericalAbort
    } else if !violations.is_empty() {
        ExitStatus::InvariantViolation
    } else {
        ExitStatus::Success
    };
    let e0 = sim.records.first().map_or(0.0, |r| r.energy);
    let max = |f: &dyn Fn(&DiagnosticsRecord) -> f64| sim.records.iter().map(f).fold(0.0, f64::max);
    let summary = RunSummary {
        config: p.config.clone(),
        config_hash: p.config.content_hash(),
        completed: sim.abort.is_none(),
        abort: sim.abort.as_ref().map(|e| e.to_string()),
        steps: sim.steps,
        total_steps: sim.total_steps,
        dt: sim.dt,
        final_time: sim.final_state.t,
        records: sim.records.len(),
        final_record: sim.records.last().cloned(),
        max_relative_energy_drift: if e0 > 0.0 { max(&|r| (r.energy - e0).abs() / e0) } else { max(&|r| r.energy) },
        max_manifold_dist: max(&|r| r.manifold_dist),
        max_tangency: max(&|r| r.tangency),
        violations,
        exit_code: status.code(),
    };
    (summary, status)
}

/// Run a config to completion (or from `resume`), writing CSV, JSON summary,
/// final snapshot and checkpoint under the output directory.
pub fn run(config: &RunConfig, resume: Option<&Path>) -> Result<RunOutcome> {
    let p = prepare(config)?;
    let out = &p.config.output;
    fs::create_dir_all(&out.dir)?;
    let csv = fs::File::create(out.path(".csv"))?;
    let checkpoint_path = out.path(".ckpt");
    let resume = match resume {
        Some(path) => Some(io::read_checkpoint(path)?),
        None => None,
    };
    let sim = simulate(
        &p,
        SimulationOptions {
            csv: Some(Box::new(std::io::BufWriter::new(csv))),
            keep_states: false,
            checkpoint: Some(&checkpoint_path),
            resume,
        },
    )?;
    io::write_state(&out.path(".final.bwm"), &sim.final_state)?;
    let (summary, status) = summarize(&p, &sim);
    fs::write(out.path(".json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome { summary, simulation: sim, status })
}
