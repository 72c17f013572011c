use anyhow::{Context, Result};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vpl_core::assess::{Flag, RunAssessment};
use vpl_core::checks::coercivity_samples;
use vpl_core::diagnostics::{csv_header, csv_row};
use vpl_core::io::Checkpoint;
use vpl_core::operators::random_smooth_profile;
use vpl_core::solver::{RunOutput, Simulation};

use crate::config::RunConfig;

pub const TIMESERIES: &str = "timeseries.csv";
pub const SUMMARY: &str = "summary.json";
pub const RESOLVED: &str = "config.resolved.toml";

#[derive(Serialize)]
struct Fitted {
    /// Sampled `min <Lf,f> / |(I-P)f|^2_sigma` on the run's velocity grid.
    coercivity_delta: f64,
    decay_eps0: Option<f64>,
    decay_k: Option<f64>,
    decay_residual: Option<f64>,
    splitting_error: Option<f64>,
    macro_micro_max_ratio: Option<f64>,
    picard_max_iterations: usize,
    picard_max_contraction: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'a str,
    config_hash: String,
    seed: u64,
    dt: f64,
    n_steps: u64,
    dt_halvings: u64,
    records: usize,
    fitted: Fitted,
    measured: &'a RunAssessment,
    flags: Vec<Flag>,
    failing: Vec<&'static str>,
}

pub enum Outcome {
    Passed,
    Failed(Vec<&'static str>),
}

pub enum RunError {
    /// The run could not be set up (bad config, unreadable checkpoint).
    Setup(anyhow::Error),
    /// The solver gave up.
    Numerical(anyhow::Error),
}

pub fn cmd_run(cfg: &RunConfig, resume: Option<&Path>) -> std::result::Result<Outcome, RunError> {
    let out_dir = cfg.output_dir.clone();
    let mut solver_cfg = cfg.solver.clone();
    if let Some(dir) = &solver_cfg.checkpoint_dir {
        if dir.is_relative() {
            solver_cfg.checkpoint_dir = Some(out_dir.join(dir));
        }
    }
    let setup = |e: anyhow::Error| RunError::Setup(e);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display())).map_err(setup)?;
    fs::write(out_dir.join(RESOLVED), cfg.to_toml().map_err(setup)?).context("writing resolved config").map_err(setup)?;
    let sim = Simulation::new(solver_cfg).map_err(|e| RunError::Setup(e.into()))?;
    let f0 = sim.initial_field().map_err(|e| RunError::Numerical(e.into()))?;
    let start = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("reading checkpoint {}", p.display())).map_err(setup)?;
            sim.resume(ck).map_err(|e| RunError::Setup(e.into()))?
        }
        None => sim.state_from(f0.clone(), 0).map_err(|e| RunError::Numerical(e.into()))?,
    };
    let out = sim.run_from(start).map_err(|e| RunError::Numerical(e.into()))?;
    write_outputs(cfg, &sim, &f0, &out, &out_dir).map_err(setup)
}

fn write_outputs(cfg: &RunConfig, sim: &Simulation, f0: &vpl_core::grid::DistributionField, out: &RunOutput, dir: &Path) -> Result<Outcome> {
    let mut w = csv::Writer::from_path(dir.join(TIMESERIES))?;
    w.write_record(csv_header(&sim.config.thetas))?;
    for r in &out.records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    let measured = RunAssessment::new(sim, f0, out);
    let flags = measured.flags(sim.config.mode);
    let failing: Vec<&'static str> = flags.iter().filter(|f| f.enforced && !f.passed).map(|f| f.name).collect();
    let summary = Summary {
        tool: "vpl",
        version: env!("CARGO_PKG_VERSION"),
        scenario: &cfg.scenario,
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        dt: out.dt,
        n_steps: out.n_steps,
        dt_halvings: out.dt_halvings,
        records: out.records.len(),
        fitted: Fitted {
            coercivity_delta: coercivity(sim, cfg.seed),
            decay_eps0: measured.decay.map(|d| d.eps0),
            decay_k: measured.decay.map(|d| d.k),
            decay_residual: measured.decay.map(|d| d.residual),
            splitting_error: measured.splitting_error,
            macro_micro_max_ratio: measured.macro_micro_max,
            picard_max_iterations: measured.picard_max_iterations,
            picard_max_contraction: measured.picard_max_contraction,
        },
        measured: &measured,
        flags,
        failing: failing.clone(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join(SUMMARY), text)?;
    Ok(if failing.is_empty() { Outcome::Passed } else { Outcome::Failed(failing) })
}

fn coercivity(sim: &Simulation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<Vec<f64>> = (0..20).map(|_| random_smooth_profile(&sim.grid, &mut rng)).collect();
    coercivity_samples(&sim.ops, &profiles).1
}

pub fn output_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join(TIMESERIES), dir.join(SUMMARY), dir.join(RESOLVED)]
}
