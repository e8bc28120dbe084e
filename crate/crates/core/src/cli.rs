//! `aoi-copilot run` and `aoi-copilot compare`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 more than half of the runs diverged.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{SimConfig, STATE_DIM};
use crate::error::Error;
use crate::output;
use crate::scheduler::SchedulerKind;
use crate::sim::{self, ExperimentOptions, ExperimentOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNSTABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aoi-copilot", version, about = "AoI-aware scheduling with GPR-predictive control of wireless control loops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scheduler and write its trace and metrics.
    Run(RunArgs),
    /// Run the proposed scheduler and the round-robin baseline on identical seeds.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub systems: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "AOI_COPILOT_OUT", default_value = "out")]
    pub out_dir: PathBuf,
    /// Cap on parallel runs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Only write traces for the first N runs.
    #[arg(long)]
    pub trace_runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
    /// Disable GPR prediction (hold the last received estimate instead).
    #[arg(long)]
    pub no_gpr: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<SimConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::from_file(path)?,
            None => SimConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.systems {
            cfg.systems = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        Ok(cfg)
    }

    fn options(&self) -> ExperimentOptions {
        ExperimentOptions { workers: self.workers, trace_runs: self.trace_runs }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<(), Error> {
    let name = out.summary.scheduler.as_str();
    output::write_trace_file(&dir.join(format!("trace_{name}.csv")), STATE_DIM, &out.trace)?;
    output::write_json_file(&dir.join(format!("metrics_{name}.json")), &out.summary)?;
    Ok(())
}

fn report(out: &ExperimentOutput) {
    let s = &out.summary;
    eprintln!(
        "{}: runs={} diverged={} fleet_mean_abs_angle={:.6e} peak_aoi={:.1}",
        s.scheduler.as_str(),
        s.runs,
        s.diverged_runs,
        s.metric("fleet_mean_abs_angle").mean,
        s.metric("peak_aoi").mean,
    );
}

fn cmd_run(args: &RunArgs) -> Result<i32, Error> {
    let mut cfg = args.common.load()?;
    if let Some(kind) = args.scheduler {
        cfg.scheduler = kind;
    }
    if args.no_gpr {
        cfg.predictor_enabled = false;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.common.out_dir)?;
    let out = sim::run_experiment(&cfg, &args.common.options())?;
    write_outputs(&args.common.out_dir, &out)?;
    report(&out);
    Ok(if out.summary.diverged_fraction() > 0.5 { EXIT_UNSTABLE } else { EXIT_OK })
}

/// Proposed scheduler with GPR against round-robin without GPR.
pub fn comparison_configs(base: &SimConfig) -> (SimConfig, SimConfig) {
    let proposed = SimConfig { scheduler: SchedulerKind::Proposed, predictor_enabled: true, ..base.clone() };
    let baseline = SimConfig { scheduler: SchedulerKind::RoundRobin, predictor_enabled: false, ..base.clone() };
    (proposed, baseline)
}

fn cmd_compare(args: &CommonArgs) -> Result<i32, Error> {
    let cfg = args.load()?;
    cfg.validate()?;
    std::fs::create_dir_all(&args.out_dir)?;
    let (pc, bc) = comparison_configs(&cfg);
    let proposed = sim::run_experiment(&pc, &args.options())?;
    write_outputs(&args.out_dir, &proposed)?;
    report(&proposed);
    let baseline = sim::run_experiment(&bc, &args.options())?;
    write_outputs(&args.out_dir, &baseline)?;
    report(&baseline);
    let cmp = sim::compare(&proposed.summary, &baseline.summary);
    output::write_json_file(&args.out_dir.join("comparison.json"), &cmp)?;
    eprintln!("error_ratio={:.3} peak_aoi_ratio={:.3}", cmp.error_ratio, cmp.peak_aoi_ratio);
    let unstable = proposed.summary.diverged_fraction() > 0.5 || baseline.summary.diverged_fraction() > 0.5;
    Ok(if unstable { EXIT_UNSTABLE } else { EXIT_OK })
}

/// Parses `args` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
