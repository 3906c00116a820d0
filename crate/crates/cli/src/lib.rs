//! `iqcsynth` command-line front end.
//!
//! Exit codes: 0 success, 1 infeasible multiplier point / empty feasible set /
//! violated cost bound, 2 usage or data error.

pub mod config;
pub mod result;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use iqcsynth::augment::MultiplierPoint;
use iqcsynth::sim::{self, UncertaintyRealization};
use iqcsynth::synthesis::{self, PointOutcome, SearchSpec, Stage};

use config::{parse_realization, ConfigFile};
use result::ResultFile;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        2
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Infeasible point, no feasible point, or realized cost above the bound.
    Rejected,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::Rejected => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "iqcsynth", version, about = "Robust state-feedback synthesis with nonlinearity copies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check feasibility of one multiplier point
    Check(CheckArgs),
    /// Search the multiplier grid and write the best controller
    Synth(SynthArgs),
    /// Simulate the closed loop with a synthesized controller
    Simulate(SimulateArgs),
    /// Evaluate every grid point and write one CSV row per point
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct MultiplierArgs {
    /// τ per uncertainty channel, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub tau: Vec<f64>,
    /// λ triple for one nonlinearity channel; repeat per channel
    #[arg(long, value_parser = parse_triple, allow_negative_numbers = true)]
    pub lambda: Vec<[f64; 3]>,
}

impl MultiplierArgs {
    fn given(&self) -> bool {
        !self.tau.is_empty() || !self.lambda.is_empty()
    }

    fn point(&self) -> Result<MultiplierPoint, CliError> {
        MultiplierPoint::new(self.tau.clone(), self.lambda.clone()).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub multipliers: MultiplierArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Restrict the search to this single point
    #[command(flatten)]
    pub multipliers: MultiplierArgs,
    /// Seed of the refinement simplex jitter
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Result file written by `synth`
    #[arg(long)]
    pub controller: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-final")]
    pub t_final: Option<f64>,
    /// `zero` or `scaled:<delta>`
    #[arg(long, allow_hyphen_values = true)]
    pub realization: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three comma-separated values, got {}", p.len()))
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Status, CliError> {
    match &cli.command {
        Command::Check(a) => cmd_check(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
    }
}

fn synthesis_error(e: synthesis::SynthesisError) -> CliError {
    match e {
        synthesis::SynthesisError::Numerical(s) => CliError::Data(format!("numerical failure: {s}")),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = ConfigFile::load(&args.config)?;
    let plant = cfg.to_plant()?;
    if !args.multipliers.given() {
        return Err(CliError::Usage("check needs --tau and --lambda".into()));
    }
    let point = args.multipliers.point()?;
    let outcome = synthesis::evaluate_point(&plant, &point).map_err(synthesis_error)?;
    let diag = match &outcome {
        PointOutcome::Feasible(r) => &r.diagnostics,
        PointOutcome::Infeasible(i) => &i.diagnostics,
    };
    for (i, pi) in diag.pi_counts.iter().enumerate() {
        writeln!(out, "channel {}: Pi = {pi}, detU11 = {}", i + 1, fmt_num(diag.det_u11[i]))?;
    }
    for (i, m) in diag.d11_margins.iter().enumerate() {
        writeln!(out, "channel {}: D11 margin = {}", i + 1, fmt_num(*m))?;
    }
    match &outcome {
        PointOutcome::Feasible(r) => {
            let res = r.diagnostics.are_residual.unwrap_or(f64::NAN);
            writeln!(out, "ARE: stabilizing PSD solution, residual = {}", fmt_num(res))?;
            writeln!(out, "V_tau = {}", fmt_num(r.v_tau))?;
            writeln!(out, "feasible")?;
            Ok(Status::Ok)
        }
        PointOutcome::Infeasible(i) => {
            writeln!(out, "infeasible: {} ({})", i.reason, i.detail)?;
            Ok(Status::Rejected)
        }
    }
}

fn search_spec(cfg: &ConfigFile, multipliers: &MultiplierArgs, seed: Option<u64>) -> Result<SearchSpec, CliError> {
    let mut spec = if multipliers.given() {
        let p = multipliers.point()?;
        SearchSpec {
            tau_grid: p.tau.iter().map(|t| vec![*t]).collect(),
            lambda_grid: p.lambda.iter().map(|l| vec![*l]).collect(),
            ..SearchSpec::default()
        }
    } else {
        cfg.search_spec()?
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = ConfigFile::load(&args.config)?;
    let plant = cfg.to_plant()?;
    let spec = search_spec(&cfg, &args.multipliers, args.seed)?;
    let report = synthesis::search(&plant, &spec).map_err(synthesis_error)?;
    writeln!(out, "evaluated {} points, {} feasible", report.evaluated, report.feasible)?;
    for (reason, count) in &report.infeasible_reasons {
        writeln!(out, "  {reason}: {count}")?;
    }
    let Some(best) = report.best else {
        writeln!(out, "no feasible multiplier point")?;
        return Ok(Status::Rejected);
    };
    writeln!(out, "V_tau = {}", fmt_num(best.v_tau))?;
    let tau: Vec<String> = best.point.tau.iter().map(|t| fmt_num(*t)).collect();
    writeln!(out, "tau = [{}]", tau.join(", "))?;
    for (i, l) in best.point.lambda.iter().enumerate() {
        writeln!(out, "lambda{} = [{}, {}, {}]", i + 1, fmt_num(l[0]), fmt_num(l[1]), fmt_num(l[2]))?;
    }
    write_file(&args.out, ResultFile::from_result(&best).to_json()?.as_bytes())?;
    Ok(Status::Ok)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = ConfigFile::load(&args.config)?;
    let plant = cfg.to_plant()?;
    let text = std::fs::read_to_string(&args.controller)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.controller.display())))?;
    let controller = ResultFile::from_json(&text)?;
    let k = controller.gain()?;
    let dims = plant.dims();
    if k.shape() != (dims.nu(), dims.nx()) {
        return Err(CliError::Data(format!(
            "controller K is {}x{}, config needs {}x{}",
            k.nrows(),
            k.ncols(),
            dims.nu(),
            dims.nx()
        )));
    }
    let settings = cfg.sim_settings();
    let dt = args.dt.unwrap_or(settings.dt);
    let t_final = args.t_final.unwrap_or(settings.t_final);
    let realization_text = args.realization.clone().unwrap_or(settings.realization);
    let realization: UncertaintyRealization = parse_realization(&realization_text).map_err(CliError::Usage)?;

    let traj = match sim::simulate(&plant, &k, &plant.x0, &realization, dt, t_final) {
        Ok(t) => t,
        Err(sim::SimError::Diverged { t, partial }) => {
            write_file(&args.out, &trajectory_csv(&partial)?)?;
            writeln!(out, "state diverged at t = {}", fmt_num(t))?;
            return Ok(Status::Rejected);
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    write_file(&args.out, &trajectory_csv(&traj)?)?;

    let j = traj.running_cost.last().copied().unwrap_or(0.0);
    writeln!(out, "J = {}", fmt_num(j))?;
    writeln!(out, "V_tau = {}", fmt_num(controller.v_tau))?;
    let final_norm = traj.final_state_norm();
    if !traj.converged() {
        writeln!(out, "warning: state norm {} at t_final exceeds {}", fmt_num(final_norm), sim::CONVERGENCE_TOL)?;
    }
    if j <= controller.v_tau {
        writeln!(out, "bound holds")?;
        Ok(Status::Ok)
    } else {
        writeln!(out, "bound violated")?;
        Ok(Status::Rejected)
    }
}

/// Header `t,x1..xn,mu1..mug,u1..um,nu1..nug,nut1..nutg,J`, where `mu` are the
/// controller copy states.
pub fn trajectory_csv(traj: &sim::Trajectory) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (n, g, m) = match (traj.x.first(), traj.mu_tilde.first(), traj.u.first()) {
        (Some(x), Some(mu), Some(u)) => (x.len(), mu.len(), u.len()),
        _ => (0, 0, 0),
    };
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=g).map(|i| format!("mu{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=g).map(|i| format!("nu{i}")));
    header.extend((1..=g).map(|i| format!("nut{i}")));
    header.push("J".into());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.len() {
        let row = std::iter::once(traj.t[k])
            .chain(traj.x[k].iter().copied())
            .chain(traj.mu_tilde[k].iter().copied())
            .chain(traj.u[k].iter().copied())
            .chain(traj.nu[k].iter().copied())
            .chain(traj.nu_tilde[k].iter().copied())
            .chain(std::iter::once(traj.running_cost[k]))
            .map(fmt_num);
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = ConfigFile::load(&args.config)?;
    let plant = cfg.to_plant()?;
    let mut spec = cfg.search_spec()?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let report = synthesis::search(&plant, &spec).map_err(synthesis_error)?;

    let dims = plant.dims();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    let mut header: Vec<String> = (1..=dims.k).map(|j| format!("tau{j}")).collect();
    for i in 1..=dims.g {
        header.extend((1..=3).map(|p| format!("lambda{i}_{p}")));
    }
    header.extend(["stage".into(), "status".into(), "V_tau".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for e in &report.trace {
        let mut row: Vec<String> = e.point.tau.iter().map(|t| fmt_num(*t)).collect();
        row.extend(e.point.lambda.iter().flatten().map(|l| fmt_num(*l)));
        row.push(match e.stage {
            Stage::Grid => "grid".into(),
            Stage::Refine => "refine".into(),
        });
        row.push(e.reason.map_or("feasible".to_string(), |r| r.to_string()));
        row.push(e.v_tau.map(fmt_num).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&args.out, &bytes)?;
    writeln!(out, "evaluated {} points, {} feasible", report.evaluated, report.feasible)?;
    match report.best {
        Some(b) => {
            writeln!(out, "best V_tau = {}", fmt_num(b.v_tau))?;
            Ok(Status::Ok)
        }
        None => {
            writeln!(out, "no feasible multiplier point")?;
            Ok(Status::Rejected)
        }
    }
}
