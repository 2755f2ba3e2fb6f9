//! Command-line front end. `run` takes the argument list and output sinks so
//! it can be driven from tests without spawning a process.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::curves::PhasePortrait;
use crate::dynamics::export::{fmt_f64, jumps_json, trajectory_csv};
use crate::dynamics::{evaluate_objective, integrate_state, OdeOptions};
use crate::model::{derive_constants, Model, ModelError, ModelParams};
use crate::policy::{classify, rollout, PolicyError, RealizedPolicy, Region, RolloutOptions, ScheduleFile};
use crate::verify::{
    condition_sweep, dominance_test, jump_target_scan, representative_starts, small_capital_comparison, OracleGrid,
};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "HARVEST_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    CheckFailure = 1,
    Usage = 2,
    Unsupported = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Usage, message)
    }

    fn check(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::CheckFailure, message)
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let status = match e {
            PolicyError::Unsupported { .. } => ExitStatus::Unsupported,
            _ => ExitStatus::CheckFailure,
        };
        Self::new(status, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::check(format!("i/o: {e}"))
    }
}

type CliResult = Result<ExitStatus, CliError>;

#[derive(Debug, Parser)]
#[command(name = "harvest", version, about = "Optimal harvesting with impulsive capital investment")]
pub struct Cli {
    /// Model parameter JSON; defaults to the built-in parameters.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Directory for CSV/JSON outputs.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "harvest_out")]
    pub out_dir: PathBuf,
    /// Relative and absolute tolerance of the rollout integrator.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derived constants and the standing-assumption report.
    Derive {
        #[arg(long, default_value_t = 1000)]
        grid: usize,
    },
    /// Build the phase portrait and export every curve.
    Curves,
    /// Region tag of (x, K).
    Classify {
        #[arg(allow_hyphen_values = true)]
        x: f64,
        #[arg(allow_hyphen_values = true)]
        k: f64,
    },
    /// Roll out the optimal policy and export the trajectory.
    Simulate {
        #[arg(allow_hyphen_values = true)]
        x: f64,
        #[arg(allow_hyphen_values = true)]
        k: f64,
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
    },
    /// Objective J of the optimal policy from (x, K), or of a saved schedule.
    Value {
        #[arg(allow_hyphen_values = true, required_unless_present = "replay")]
        x: Option<f64>,
        #[arg(allow_hyphen_values = true, required_unless_present = "replay")]
        k: Option<f64>,
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
        /// schedule.json written by `simulate`.
        #[arg(long, conflicts_with_all = ["x", "k"])]
        replay: Option<PathBuf>,
    },
    /// Necessary-condition sweep, dominance and oracle checks.
    Verify {
        #[arg(long, default_value_t = 20)]
        grid: usize,
        /// Upper capital level of the sweep grid.
        #[arg(long, default_value_t = 2.0)]
        k_max: f64,
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
    },
}

/// Validated options shared by the subcommands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub tol: Option<f64>,
}

impl RunConfig {
    fn model_params(&self) -> Result<ModelParams, CliError> {
        match &self.params {
            None => Ok(ModelParams::fix1()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
                ModelParams::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
            }
        }
    }

    fn model(&self) -> Result<Model, CliError> {
        let params = self.model_params()?;
        Model::new(params).map_err(|e| match e {
            ModelError::InvalidParameter { .. } | ModelError::Parse(_) => CliError::usage(e.to_string()),
            _ => CliError::check(e.to_string()),
        })
    }

    fn portrait(&self) -> Result<PhasePortrait, CliError> {
        PhasePortrait::build(&self.model()?).map_err(|e| CliError::check(format!("phase portrait: {e}")))
    }

    fn ode(&self) -> Result<OdeOptions, CliError> {
        let base = RolloutOptions::default().ode;
        match self.tol {
            None => Ok(base),
            Some(t) if t.is_finite() && t > 0.0 && t <= 1e-3 => Ok(base.tol(t, t)),
            Some(t) => Err(CliError::usage(format!("--tol must lie in (0, 1e-3], got {t}"))),
        }
    }

    fn rollout_options(&self, horizon: f64, adjoint: bool) -> Result<RolloutOptions, CliError> {
        Ok(RolloutOptions {
            horizon,
            adjoint,
            ode: self.ode()?,
        })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::usage(format!("output directory {}: {e}", self.out_dir.display())))?;
        Ok(&self.out_dir)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{name} must be a finite positive number, got {v}")))
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    ExitStatus::Ok as i32
                }
                _ => ExitStatus::Usage as i32,
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(status) => status as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.status as i32
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let cfg = RunConfig {
        params: cli.params,
        out_dir: cli.out_dir,
        tol: cli.tol,
    };
    match cli.command {
        Command::Derive { grid } => cmd_derive(&cfg, grid, out, err),
        Command::Curves => cmd_curves(&cfg, out, err),
        Command::Classify { x, k } => cmd_classify(&cfg, x, k, out),
        Command::Simulate { x, k, horizon, dt } => cmd_simulate(&cfg, x, k, horizon, dt, out, err),
        Command::Value { x, k, horizon, replay } => match replay {
            Some(path) => cmd_replay(&cfg, &path, out),
            None => cmd_value(&cfg, x.unwrap_or(f64::NAN), k.unwrap_or(f64::NAN), horizon, out),
        },
        Command::Verify { grid, k_max, horizon } => cmd_verify(&cfg, grid, k_max, horizon, out, err),
    }
}

#[derive(Serialize)]
struct DeriveReport {
    params: ModelParams,
    constants: Option<crate::model::DerivedConstants>,
    assumptions: crate::model::AssumptionReport,
    error: Option<String>,
    pass: bool,
}

pub fn cmd_derive(cfg: &RunConfig, grid: usize, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    if grid < 100 {
        return Err(CliError::usage(format!("--grid must be at least 100, got {grid}")));
    }
    let params = cfg.model_params()?;
    let assumptions = params.verify_assumptions(grid);
    let (constants, error) = match derive_constants(&params) {
        Ok(c) => (Some(c), None),
        Err(ModelError::InvalidParameter { name, value, reason }) => {
            return Err(CliError::usage(format!("parameter {name} = {value} {reason}")))
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let pass = assumptions.all_pass && constants.is_some();
    let report = DeriveReport {
        params,
        constants,
        assumptions,
        error,
        pass,
    };
    let json = to_json(&report);
    writeln!(out, "{json}")?;
    let path = cfg.write("derive.json", &json)?;
    writeln!(err, "wrote {}", path.display())?;
    if pass {
        Ok(ExitStatus::Ok)
    } else {
        for c in report.assumptions.checks.iter().filter(|c| !c.pass) {
            writeln!(err, "{} failed: {}", c.name, c.message)?;
        }
        Ok(ExitStatus::CheckFailure)
    }
}

pub fn cmd_curves(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let portrait = cfg.portrait()?;
    for curve in portrait.curves() {
        let path = cfg.write(&format!("{}.csv", curve.name), &curve.to_csv())?;
        writeln!(err, "wrote {}", path.display())?;
    }
    let specials = portrait.specials_json();
    let path = cfg.write("specials.json", &specials)?;
    writeln!(err, "wrote {}", path.display())?;
    writeln!(out, "{specials}")?;
    Ok(ExitStatus::Ok)
}

pub fn cmd_classify(cfg: &RunConfig, x: f64, k: f64, out: &mut dyn Write) -> CliResult {
    let portrait = cfg.portrait()?;
    let region = classify(&portrait, x, k);
    writeln!(out, "{region}")?;
    Ok(match region {
        Region::Boundary | Region::Unsupported => ExitStatus::Unsupported,
        _ => ExitStatus::Ok,
    })
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    x: f64,
    k: f64,
    horizon: f64,
    dt: f64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult {
    positive("horizon", horizon)?;
    positive("dt", dt)?;
    let opts = cfg.rollout_options(horizon, true)?;
    let portrait = cfg.portrait()?;
    let ro = rollout(&portrait, x, k, &opts)?;
    let file = ro.schedule_file();
    let schedule = to_json(&file);
    for (name, body) in [
        ("trajectory.csv", trajectory_csv(&ro.trajectory, dt)),
        ("jumps.json", jumps_json(&ro.trajectory)),
        ("schedule.json", schedule.clone()),
    ] {
        let path = cfg.write(name, &body)?;
        writeln!(err, "wrote {}", path.display())?;
    }
    writeln!(out, "{schedule}")?;
    Ok(ExitStatus::Ok)
}

pub fn cmd_value(cfg: &RunConfig, x: f64, k: f64, horizon: f64, out: &mut dyn Write) -> CliResult {
    positive("horizon", horizon)?;
    let opts = cfg.rollout_options(horizon, false)?;
    let portrait = cfg.portrait()?;
    let j = rollout(&portrait, x, k, &opts)?.value;
    writeln!(out, "{}", fmt_f64(j))?;
    Ok(ExitStatus::Ok)
}

/// Re-integrates a saved open-loop policy without the portrait.
pub fn replay_value(model: &Model, realized: &RealizedPolicy, opts: &OdeOptions) -> Result<f64, CliError> {
    let traj = integrate_state(
        model,
        realized.initial,
        &realized.control,
        &realized.measure,
        realized.horizon,
        opts,
    )
    .map_err(|e| CliError::check(e.to_string()))?;
    evaluate_objective(&traj, realized.horizon, realized.tail).map_err(|e| CliError::check(e.to_string()))
}

pub fn cmd_replay(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let realized = match serde_json::from_str::<ScheduleFile>(&text) {
        Ok(f) => f.realized,
        Err(_) => serde_json::from_str::<RealizedPolicy>(&text)
            .map_err(|e| CliError::usage(format!("{}: not a schedule file: {e}", path.display())))?,
    };
    let j = replay_value(&cfg.model()?, &realized, &cfg.ode()?)?;
    writeln!(out, "{}", fmt_f64(j))?;
    Ok(ExitStatus::Ok)
}

#[derive(Serialize)]
struct GridInfo {
    n: usize,
    #[serde(rename = "K_max")]
    k_max: f64,
    horizon: f64,
    x: Vec<f64>,
    #[serde(rename = "K")]
    k: Vec<f64>,
}

#[derive(Serialize)]
struct DominanceSection {
    starts: Vec<serde_json::Value>,
    jump_scans: Vec<crate::verify::JumpScan>,
    small_capital: crate::verify::SmallCapitalComparison,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    grid: GridInfo,
    conditions: crate::verify::ConditionSweep,
    dominance: DominanceSection,
    pass: bool,
}

pub fn cmd_verify(cfg: &RunConfig, grid: usize, k_max: f64, horizon: f64, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    if grid == 0 {
        return Err(CliError::usage("--grid must be positive"));
    }
    positive("k-max", k_max)?;
    positive("horizon", horizon)?;
    let portrait = cfg.portrait()?;
    let sweep = condition_sweep(&portrait, grid, k_max, horizon);

    let oracle = OracleGrid::standard(horizon);
    let mut starts = Vec::new();
    let mut dom_pass = true;
    for (x, k) in representative_starts(&portrait) {
        match dominance_test(&portrait, x, k, None, horizon, Some(&oracle)) {
            Ok(rep) => {
                dom_pass &= rep.pass;
                starts.push(serde_json::to_value(&rep).expect("report serializes"));
            }
            Err(e) => {
                dom_pass = false;
                starts.push(serde_json::json!({ "x0": x, "K0": k, "error": e.to_string(), "pass": false }));
            }
        }
    }
    let mut jump_scans = Vec::new();
    for x in [0.55, 0.8] {
        let k0 = 0.2 * portrait.hs.eval(x).unwrap_or(0.0);
        if classify(&portrait, x, k0) != Region::R1 {
            continue;
        }
        match jump_target_scan(&portrait, x, k0, 200, horizon) {
            Ok(scan) => {
                dom_pass &= scan.pass;
                jump_scans.push(scan);
            }
            Err(e) => {
                dom_pass = false;
                writeln!(err, "jump scan at x = {x}: {e}")?;
            }
        }
    }
    let small = small_capital_comparison(&portrait.model, horizon).map_err(|e| CliError::check(e.to_string()))?;
    dom_pass &= small.pass;

    let (xs, ks) = (sweep.x_grid.clone(), sweep.k_grid.clone());
    let pass = sweep.pass && dom_pass;
    let report = VerifyReport {
        grid: GridInfo {
            n: grid,
            k_max,
            horizon,
            x: xs,
            k: ks,
        },
        conditions: sweep,
        dominance: DominanceSection {
            starts,
            jump_scans,
            small_capital: small,
            pass: dom_pass,
        },
        pass,
    };
    let json = to_json(&report);
    writeln!(out, "{json}")?;
    let path = cfg.write("verify.json", &json)?;
    writeln!(err, "wrote {}", path.display())?;
    Ok(if pass { ExitStatus::Ok } else { ExitStatus::CheckFailure })
}
