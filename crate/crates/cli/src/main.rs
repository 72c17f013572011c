//! `vpl`: runs scenarios, invariant suites and plot-data extraction.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 check-suite failure. Every flag can also be set through an
//! environment variable prefixed `VPL_`.

mod config;
mod plotdata;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::RunConfig;
use run::{Outcome, RunError};
use vpl_core::checks::{run_suite, SUITES};
use vpl_core::exec::with_threads;

#[derive(Parser)]
#[command(name = "vpl", version, about = "Near-Maxwellian Vlasov-Poisson-Landau solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario (bundled name or TOML path).
    Run {
        #[arg(env = "VPL_CONFIG")]
        config: String,
        /// Output directory (overrides `output_dir`).
        #[arg(long, env = "VPL_OUT")]
        out: Option<PathBuf>,
        #[arg(long, env = "VPL_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "VPL_THREADS")]
        threads: Option<usize>,
        /// Final time (overrides `solver.t_end`).
        #[arg(long, env = "VPL_T_END")]
        t_end: Option<f64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long, env = "VPL_RESUME")]
        resume: Option<PathBuf>,
    },
    /// Run an invariant suite: kernel, operators, geometry, field, norms or all.
    Check {
        #[arg(env = "VPL_SUITE")]
        suite: String,
        #[arg(long, env = "VPL_SEED", default_value_t = 7)]
        seed: u64,
    },
    /// Extract `t` and one quantity from a run's timeseries.csv.
    Plotdata {
        #[arg(env = "VPL_RUN_DIR")]
        run_dir: PathBuf,
        #[arg(env = "VPL_QUANTITY")]
        quantity: String,
        /// Natural log of the values; non-positive entries are left empty.
        #[arg(long, env = "VPL_LOG")]
        log: bool,
        /// Write to a file instead of stdout.
        #[arg(long, env = "VPL_PLOT_OUT")]
        out: Option<PathBuf>,
    },
}

const CONFIG_ERROR: u8 = 2;
const NUMERICAL_FAILURE: u8 = 3;
const CHECK_FAILURE: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out, seed, threads, t_end, resume } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(CONFIG_ERROR, &e),
            };
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            if let Some(t) = t_end {
                cfg.solver.t_end = t;
                if let Err(e) = cfg.solver.validate() {
                    return fail(CONFIG_ERROR, &anyhow::anyhow!("--t-end: {e}"));
                }
            }
            if cfg.threads == Some(0) {
                return fail(CONFIG_ERROR, &anyhow::anyhow!("threads must be at least 1"));
            }
            match with_threads(cfg.threads, || run::cmd_run(&cfg, resume.as_deref())) {
                Ok(Outcome::Passed) => {
                    for p in run::output_files(&cfg.output_dir) {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Ok(Outcome::Failed(names)) => {
                    eprintln!("run finished with failing checks: {}", names.join(", "));
                    eprintln!("see {}", cfg.output_dir.join(run::SUMMARY).display());
                    ExitCode::from(NUMERICAL_FAILURE)
                }
                Err(RunError::Setup(e)) => fail(CONFIG_ERROR, &e),
                Err(RunError::Numerical(e)) => fail(NUMERICAL_FAILURE, &e),
            }
        }
        Cmd::Check { suite, seed } => {
            let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut ok = true;
            for name in names {
                let report = match run_suite(name, seed) {
                    Ok(r) => r,
                    Err(vpl_core::VplError::InvalidInput(m)) => return fail(CONFIG_ERROR, &anyhow::anyhow!(m)),
                    Err(e) => return fail(NUMERICAL_FAILURE, &e.into()),
                };
                println!("[{}]", report.suite);
                for c in &report.checks {
                    println!("  {}", c.line());
                }
                ok &= report.passed();
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILURE)
            }
        }
        Cmd::Plotdata { run_dir, quantity, log, out } => {
            let res = match out {
                Some(p) => std::fs::File::create(&p)
                    .map_err(anyhow::Error::from)
                    .and_then(|mut f| plotdata::cmd_plotdata(&run_dir, &quantity, log, &mut f)),
                None => plotdata::cmd_plotdata(&run_dir, &quantity, log, &mut std::io::stdout().lock()),
            };
            match res {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(CONFIG_ERROR, &e),
            }
        }
    }
}

fn fail(code: u8, e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(code)
}
