//! `contacton`: command-line runner for the contact instanton lab.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 the configuration
//! violates its schema, 3 any other runtime error.

// Negated comparisons are deliberate: a NaN must fail every tolerance check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;
mod suites;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use contacton_core::action::{action_identity_residual, action_value, critical_residual, first_variation, first_variation_fd_gap, read_path_csv, VariationField};
use contacton_core::connection::{verify_triad_axioms, StandardConnection};
use contacton_core::dynamics::{lift_to_hamiltonian_trajectory, ContactIsotopy, LiftOptions};
use contacton_core::fields::{write_field_binary, write_field_csv};
use contacton_core::solver::{solve, write_iteration_csv, SolveConfig, SolveStatus};
use contacton_core::validators::{run_suite, suite_base_grid, Suite};
use contacton_core::{HamiltonianSpec, ManifoldConfig, TriadChart};
use serde_json::json;

use crate::config::{load_json, load_run_config, SchemaError, SuiteName};
use crate::manifest::{build_report, execute, write_report, write_run};
use crate::suites::{table_csv, to_json};

#[derive(Parser)]
#[command(name = "contacton", version, about = "Numerical lab for Hamiltonian-perturbed contact instantons with Legendrian boundary")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Checks of the standard contact triad and its connection.
    Triad {
        #[command(subcommand)]
        cmd: TriadCmd,
    },
    /// Applies ψ_H^t, φ_H^t or an inverse to one point.
    Flow(FlowArgs),
    /// Perturbed action of a path read from CSV.
    Action {
        #[command(subcommand)]
        cmd: ActionCmd,
    },
    /// On-shell identity convergence table.
    Validate(ValidateArgs),
    /// Relaxes a strip with Legendrian boundary.
    Solve(SolveArgs),
    /// `validate` and `solve` grouped under one name.
    Instanton {
        #[command(subcommand)]
        cmd: InstantonCmd,
    },
    /// Runs the suites selected by a run config and writes a manifest.
    Run(RunArgs),
    /// Merges manifests into order tables and a pass/fail matrix.
    Report {
        dir: PathBuf,
        /// Output directory for report.json, matrix.csv and orders.csv [default: DIR].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TriadCmd {
    Check {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowMap {
    Psi,
    Phi,
    PsiInverse,
    PhiInverse,
}

#[derive(Args)]
struct FlowArgs {
    /// Run config supplying `manifold` and `hamiltonian`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    point: Vec<f64>,
    #[arg(long)]
    t: f64,
    #[arg(long, value_enum, default_value_t = FlowMap::Psi)]
    map: FlowMap,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

#[derive(Subcommand)]
enum ActionCmd {
    /// Action value and the gauge identity residual.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        path: PathBuf,
    },
    /// First variation along a field given as CSV in the path format.
    Vary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        eta: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Critical-point residual, and the Hamiltonian lift when it applies.
    Crit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    /// Number of grids, each half the spacing of the last.
    #[arg(long, default_value_t = 3)]
    refine: usize,
    /// Also write the table as JSON and CSV into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum InstantonCmd {
    Validate(ValidateArgs),
    Solve(SolveArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` [default: contacton-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    refine: Option<usize>,
    /// Replaces the config's suite list; repeatable.
    #[arg(long, value_enum)]
    suite: Vec<SuiteName>,
    #[arg(long)]
    parallel: bool,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse::<Suite>().map_err(|e| e.to_string())
}

/// Outcome of a command that ran to completion.
enum Verdict {
    Pass,
    Fail,
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    print!("{}", String::from_utf8(to_json(v)?)?);
    Ok(())
}

fn chart_and_h(cfg_path: &Path) -> Result<(TriadChart, HamiltonianSpec)> {
    let cfg = load_run_config(cfg_path)?;
    let ManifoldConfig::StandardR2np1 { n } = cfg.manifold;
    Ok((cfg.manifold.chart()?, HamiltonianSpec::from_config(&cfg.hamiltonian, n)?))
}

fn read_path(chart: &TriadChart, path: &Path) -> Result<contacton_core::action::PathGamma> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_path_csv(chart, f)?)
}

fn triad_check(n: usize, samples: usize, seed: u64, tol: f64) -> Result<Verdict> {
    let chart = TriadChart::standard(n)?;
    let rep = verify_triad_axioms(&chart, &StandardConnection::new(&chart), samples, seed)?;
    print_json(&rep)?;
    Ok(verdict(rep.first_violation(tol).is_none()))
}

fn flow(a: &FlowArgs) -> Result<Verdict> {
    let (chart, h) = chart_and_h(&a.config)?;
    if a.point.len() != chart.dim() {
        anyhow::bail!(SchemaError(format!("--point: expected {} coordinates, got {}", chart.dim(), a.point.len())));
    }
    let iso = ContactIsotopy::new(&chart, &h, a.dt);
    let s = match a.map {
        FlowMap::Psi => iso.psi(a.t, &a.point)?,
        FlowMap::Phi => iso.phi(a.t, &a.point)?,
        FlowMap::PsiInverse => iso.psi_inverse(a.t, &a.point)?,
        FlowMap::PhiInverse => iso.phi_inverse(a.t, &a.point)?,
    };
    print_json(&json!({ "point": s.point.as_slice(), "g": s.g }))?;
    Ok(Verdict::Pass)
}

fn action(cmd: &ActionCmd) -> Result<Verdict> {
    match cmd {
        ActionCmd::Eval { config, path } => {
            let (chart, h) = chart_and_h(config)?;
            let g = read_path(&chart, path)?;
            let iso = ContactIsotopy::new(&chart, &h, 1e-3);
            print_json(&json!({
                "action": action_value(&chart, &h, &iso, &g)?,
                "identity_residual": action_identity_residual(&chart, &h, &iso, &g)?,
            }))?;
            Ok(Verdict::Pass)
        }
        ActionCmd::Vary { config, path, eta, eps } => {
            let (chart, h) = chart_and_h(config)?;
            let g = read_path(&chart, path)?;
            let e = read_path(&chart, eta)?;
            let eta = VariationField::new(&g, e.points().to_vec(), 1e-9)?;
            let iso = ContactIsotopy::new(&chart, &h, 1e-3);
            let fv = first_variation(&chart, &h, &iso, &g, &eta)?;
            print_json(&json!({
                "interior": fv.interior,
                "boundary_start": fv.boundary_start,
                "boundary_end": fv.boundary_end,
                "total": fv.total(),
                "fd_gap": first_variation_fd_gap(&chart, &h, &iso, &g, &eta, *eps)?,
            }))?;
            Ok(Verdict::Pass)
        }
        ActionCmd::Crit { config, path, tol } => {
            let (chart, h) = chart_and_h(config)?;
            let g = read_path(&chart, path)?;
            let crit = critical_residual(&chart, &h, &g)?;
            let lift = if crit <= *tol {
                Some(lift_to_hamiltonian_trajectory(&chart, &h, &g, &LiftOptions { critical_threshold: *tol })?.residual)
            } else {
                None
            };
            print_json(&json!({ "critical_residual": crit, "lift_residual": lift }))?;
            Ok(verdict(crit <= *tol))
        }
    }
}

fn validate(a: &ValidateArgs) -> Result<Verdict> {
    if a.refine < 2 {
        anyhow::bail!(SchemaError(format!("--refine: need at least 2 grids, got {}", a.refine)));
    }
    let table = run_suite(a.suite, suite_base_grid(), a.refine)?;
    let ok = a.suite.primary_keys().iter().all(|k| table.key_passes(k, a.suite.target_order()));
    let out = json!({
        "suite": a.suite.name(),
        "target_order": a.suite.target_order(),
        "passed": ok,
        "table": table,
    });
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{}.json", a.suite.name())), to_json(&out)?)?;
        fs::write(dir.join(format!("{}.csv", a.suite.name())), table_csv(&table))?;
    }
    print_json(&out)?;
    Ok(verdict(ok))
}

fn solve_cmd(a: &SolveArgs) -> Result<Verdict> {
    let cfg: SolveConfig = load_json(&a.config)?;
    cfg.validate().map_err(|e| SchemaError(format!("{}: {e}", a.config.display())))?;
    let chart = cfg.chart()?;
    let out = solve(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_field_csv(&chart, &out.field, fs::File::create(a.out.join("field.csv"))?)?;
    write_field_binary(&out.field, fs::File::create(a.out.join("field.bin"))?)?;
    write_iteration_csv(&out.log, fs::File::create(a.out.join("iterations.csv"))?)?;
    fs::write(a.out.join("report.json"), to_json(&out.report)?)?;
    let r = &out.report;
    eprintln!(
        "{:?} after {} iterations: cr_l2 {:.3e}, closed_l2 {:.3e}, |E - gap| {:.3e}",
        r.status,
        r.iterations,
        r.residuals.get("cr_l2").unwrap_or(f64::NAN),
        r.residuals.get("closed_l2").unwrap_or(f64::NAN),
        r.energy_action_defect
    );
    Ok(verdict(r.status == SolveStatus::Converged))
}

fn run(a: &RunArgs) -> Result<Verdict> {
    let mut cfg = load_run_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.refine {
        cfg.refine = r;
    }
    if !a.suite.is_empty() {
        cfg.suites = a.suite.clone();
    }
    cfg.parallel |= a.parallel;
    cfg.validate()?;
    let dir = a.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("contacton-out"));
    let (manifest, timing, artifacts) = execute(&cfg)?;
    write_run(&dir, &manifest, &timing, &artifacts)?;
    let mut errored = false;
    for s in &manifest.suites {
        let tag = if s.error.is_some() {
            errored = true;
            "ERROR"
        } else if s.passed {
            "PASS"
        } else {
            "FAIL"
        };
        let why = s.error.clone().unwrap_or_else(|| s.failures.join("; "));
        println!("{tag:<5} {:<13} {why}", s.suite.as_str());
    }
    println!("manifest {} (config sha256 {})", dir.join(manifest::MANIFEST_FILE).display(), manifest.config_sha256);
    if errored {
        anyhow::bail!("a suite stopped on a runtime error");
    }
    Ok(verdict(manifest.passed))
}

fn report(dir: &Path, out: Option<&Path>) -> Result<Verdict> {
    let rep = build_report(dir)?;
    write_report(&rep, out.unwrap_or(dir))?;
    println!("{} manifests merged, {} skipped, {} order rows", rep.manifests, rep.skipped.len(), rep.orders.len());
    Ok(Verdict::Pass)
}

fn dispatch(cli: &Cli) -> Result<Verdict> {
    match &cli.cmd {
        Command::Triad { cmd: TriadCmd::Check { n, samples, seed, tol } } => triad_check(*n, *samples, *seed, *tol),
        Command::Flow(a) => flow(a),
        Command::Action { cmd } => action(cmd),
        Command::Validate(a) | Command::Instanton { cmd: InstantonCmd::Validate(a) } => validate(a),
        Command::Solve(a) | Command::Instanton { cmd: InstantonCmd::Solve(a) } => solve_cmd(a),
        Command::Run(a) => run(a),
        Command::Report { dir, out } => report(dir, out.as_deref()),
    }
}

/// Caps the global pool at `CONTACTON_THREADS` workers when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CONTACTON_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| SchemaError(format!("CONTACTON_THREADS: expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| dispatch(&cli)) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<SchemaError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
