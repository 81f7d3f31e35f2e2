//! The checks behind `run`. Each suite returns its numbers and artifacts in
//! memory; nothing here touches the filesystem.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use contacton_core::action::{action_identity_residual, first_variation_fd_gap, PathGamma, VariationField};
use contacton_core::connection::{verify_triad_axioms, StandardConnection};
use contacton_core::dynamics::{conformal_exponent_inverse_check, lift_to_hamiltonian_trajectory, pullback_residual, ContactIsotopy, LiftOptions};
use contacton_core::families;
use contacton_core::fields::{gauge_equivalence_check, gauge_transform, write_field_csv, GaugeDirection, MapField, StripGrid};
use contacton_core::report::order_estimate;
use contacton_core::solver::{asymptotic_diagnostics, solve, write_iteration_csv, SolveConfig, SolveStatus};
use contacton_core::validators::{run_suite, ConvergenceTable, ROUNDOFF_FLOOR};
use contacton_core::{HamiltonianSpec, LegendrianSpec, ManifoldConfig, TriadChart, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SuiteName, Tolerances};

/// Sample counts shared by the randomized suites.
const POINTS: usize = 100;
const PATHS: usize = 20;
const PATH_INTERVALS: usize = 200;
const FLOW_DT: f64 = 1e-3;
const VARIATION_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: SuiteName,
    pub passed: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<StripGrid>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<ConvergenceTable>,
}

/// A file produced by a suite, relative to the run's output directory.
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

struct Check {
    metrics: BTreeMap<String, f64>,
    failures: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { metrics: BTreeMap::new(), failures: Vec::new() }
    }

    fn record(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    /// Records `value` and fails unless `value <= tol`.
    fn at_most(&mut self, key: &str, value: f64, tol: f64) {
        self.record(key, value);
        if !(value <= tol) {
            self.failures.push(format!("{key} = {value:e} exceeds {tol:e}"));
        }
    }

    fn at_least(&mut self, key: &str, value: f64, tol: f64) {
        self.record(key, value);
        if !(value >= tol) {
            self.failures.push(format!("{key} = {value:.3} below {tol}"));
        }
    }
}

pub struct SuiteContext<'a> {
    pub cfg: &'a RunConfig,
    pub chart: TriadChart,
    pub h: HamiltonianSpec,
}

impl<'a> SuiteContext<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        let chart = cfg.manifold.chart()?;
        let ManifoldConfig::StandardR2np1 { n } = cfg.manifold;
        let h = HamiltonianSpec::from_config(&cfg.hamiltonian, n)?;
        Ok(Self { cfg, chart, h })
    }
}

/// Runs one suite. Numerical failures are reported in the result; only
/// errors from the numerics themselves surface as `error`.
pub fn run_one(ctx: &SuiteContext, suite: SuiteName) -> (SuiteResult, Vec<Artifact>) {
    let cfg = ctx.cfg;
    let seed = cfg.seed;
    let mut artifacts = Vec::new();
    let mut table = None;
    let mut grid = None;
    let out: Result<Check> = match suite {
        SuiteName::Triad => triad(ctx, &cfg.tolerances),
        SuiteName::Flow => flow(ctx, &cfg.tolerances),
        SuiteName::Action => action(ctx, &cfg.tolerances),
        SuiteName::Gauge => {
            grid = Some(cfg.grid);
            gauge(ctx, &cfg.tolerances)
        }
        SuiteName::EnergyAction => {
            grid = Some(cfg.grid);
            energy_action(ctx, &cfg.tolerances, &mut artifacts)
        }
        other => {
            grid = Some(cfg.grid);
            let v = other.validator().expect("validator suite");
            run_suite(v, cfg.grid, cfg.refine).map_err(anyhow::Error::from).map(|t| {
                let mut c = Check::new();
                for key in v.primary_keys() {
                    c.record(&format!("{key}.value"), t.final_value(key).unwrap_or(f64::NAN));
                    c.record(&format!("{key}.order"), t.final_order(key).unwrap_or(f64::NAN));
                    if !t.key_passes(key, v.target_order()) {
                        c.failures.push(format!("{key}: order {:.3} below {}", t.final_order(key).unwrap_or(f64::NAN), v.target_order()));
                    }
                }
                artifacts.push(Artifact { path: format!("{}.csv", other.as_str()), bytes: table_csv(&t) });
                table = Some(t);
                c
            })
        }
    };
    let result = match out {
        Ok(c) => SuiteResult { suite, passed: c.failures.is_empty(), seed, grid, metrics: c.metrics, failures: c.failures, error: None, table },
        Err(e) => SuiteResult {
            suite,
            passed: false,
            seed,
            grid,
            metrics: BTreeMap::new(),
            failures: Vec::new(),
            error: Some(format!("{e:#}")),
            table: None,
        },
    };
    (result, artifacts)
}

fn triad(ctx: &SuiteContext, tol: &Tolerances) -> Result<Check> {
    let rep = verify_triad_axioms(&ctx.chart, &StandardConnection::new(&ctx.chart), POINTS, ctx.cfg.seed)?;
    let mut c = Check::new();
    for (k, v) in &rep.values {
        c.at_most(k, *v, tol.axioms);
    }
    Ok(c)
}

fn random_coords(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

fn flow(ctx: &SuiteContext, tol: &Tolerances) -> Result<Check> {
    let iso = ContactIsotopy::new(&ctx.chart, &ctx.h, FLOW_DT);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let d = ctx.chart.dim();
    let (mut pull, mut inv) = (0.0f64, 0.0f64);
    for _ in 0..PATHS {
        let p = random_coords(&mut rng, d, 1.0);
        let w = Vector::from_vec(random_coords(&mut rng, d, 1.0));
        let t = rng.random_range(0.1..1.0);
        pull = pull.max(pullback_residual(&iso, t, &p, &w)?);
        inv = inv.max(conformal_exponent_inverse_check(&iso, t, &p)?);
    }
    let mut c = Check::new();
    c.at_most("pullback_max", pull, tol.exponent);
    c.at_most("exponent_inverse_max", inv, tol.exponent);
    Ok(c)
}

fn random_path(chart: &TriadChart, rng: &mut ChaCha8Rng) -> Result<PathGamma> {
    let d = chart.dim();
    let c: Vec<Vec<f64>> = (0..3).map(|_| random_coords(rng, d, 1.0)).collect();
    Ok(PathGamma::from_fn(chart, PATH_INTERVALS, |t| Vector::from_fn(d, |i, _| c[0][i] + c[1][i] * t + 0.5 * c[2][i] * (3.0 * t).sin()))?)
}

fn action(ctx: &SuiteContext, tol: &Tolerances) -> Result<Check> {
    let (chart, h) = (&ctx.chart, &ctx.h);
    let iso = ContactIsotopy::new(chart, h, FLOW_DT);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let d = chart.dim();
    let (mut ident, mut gap) = (0.0f64, 0.0f64);
    for _ in 0..PATHS {
        let g = random_path(chart, &mut rng)?;
        ident = ident.max(action_identity_residual(chart, h, &iso, &g)?);
        let c = random_coords(&mut rng, 2 * d, 1.0);
        let vs = (0..=PATH_INTERVALS).map(|k| {
            let t = g.time(k);
            Vector::from_fn(d, |i, _| c[i] + c[d + i] * (2.0 * t).cos())
        });
        let eta = VariationField::new(&g, vs.collect(), 1e-9)?;
        gap = gap.max(first_variation_fd_gap(chart, h, &iso, &g, &eta, VARIATION_EPS)?);
    }
    let mut c = Check::new();
    c.at_most("identity_max", ident, tol.action);
    c.at_most("first_variation_gap_max", gap, tol.variation);
    // Reeb chords pushed forward by φ^t are critical when the flow preserves
    // the Reeb direction, which holds for every catalog Hamiltonian.
    if !matches!(h, HamiltonianSpec::Expr(_)) {
        let mut lift = 0.0f64;
        for _ in 0..5 {
            let p = random_coords(&mut rng, d, 1.0);
            let (len, wig) = (rng.random_range(0.5..2.0), rng.random_range(-0.3..0.3));
            let pts: Result<Vec<Vector>> = (0..=2 * PATH_INTERVALS)
                .map(|k| {
                    let t = k as f64 / (2 * PATH_INTERVALS) as f64;
                    let mut q = p.clone();
                    q[d - 1] += len * t + wig * (2.0 * t).sin();
                    Ok(iso.phi(t, &q)?.point)
                })
                .collect();
            let g = PathGamma::new(chart, pts?)?;
            lift = lift.max(lift_to_hamiltonian_trajectory(chart, h, &g, &LiftOptions::default())?.residual);
        }
        c.at_most("lifting_max", lift, tol.lifting);
    }
    Ok(c)
}

fn gauge(ctx: &SuiteContext, tol: &Tolerances) -> Result<Check> {
    let (chart, h) = (&ctx.chart, &ctx.h);
    let iso = ContactIsotopy::new(chart, h, FLOW_DT);
    let mut c = Check::new();
    let grids = [ctx.cfg.grid, ctx.cfg.grid.refined()];
    let mut reps = Vec::new();
    for grid in grids {
        let bar = MapField::from_fn(chart, grid, families::reeb_directed_strip(chart, 0.3, 0.0, 1.0, 0.02))?;
        let u = gauge_transform(&iso, &bar, GaugeDirection::Inverse)?;
        reps.push((grid, gauge_equivalence_check(chart, h, &iso, &u)?));
    }
    for (grid, eq) in &reps {
        let bound = tol.gauge_scale * grid.spacing().powi(2);
        for (side, rep) in [("perturbed", &eq.perturbed), ("unperturbed", &eq.unperturbed)] {
            for key in ["cr_l2", "closed_l2"] {
                let v = rep.get(key).unwrap_or(f64::NAN);
                c.at_most(&format!("{side}.{key}.{}x{}", grid.m, grid.n), v, bound);
            }
        }
    }
    for (side, pick) in [("perturbed", 0usize), ("unperturbed", 1)] {
        for key in ["cr_l2", "closed_l2"] {
            let get = |k: usize| {
                let eq = &reps[k].1;
                if pick == 0 { eq.perturbed.get(key) } else { eq.unperturbed.get(key) }.unwrap_or(f64::NAN)
            };
            if get(1) > ROUNDOFF_FLOOR {
                c.at_least(&format!("{side}.{key}.order"), order_estimate(get(0), get(1)), tol.order);
            }
        }
    }
    Ok(c)
}

fn energy_action(ctx: &SuiteContext, tol: &Tolerances, artifacts: &mut Vec<Artifact>) -> Result<Check> {
    let (chart, h) = (&ctx.chart, &ctx.h);
    let r0 = LegendrianSpec::horizontal(chart, 0.0)?;
    let r1 = LegendrianSpec::horizontal(chart, 1.0)?;
    let mut sc = SolveConfig::new(ctx.cfg.grid, r0.clone(), r1, ctx.cfg.hamiltonian.clone());
    sc.rng_seed = ctx.cfg.seed;
    sc.target_residual = 0.1 * tol.residual;
    let out = solve(&sc)?;
    let r = &out.report;
    let mut c = Check::new();
    let res = r.residuals.get("cr_l2").unwrap_or(f64::NAN).hypot(r.residuals.get("closed_l2").unwrap_or(f64::NAN));
    c.record("iterations", r.iterations as f64);
    c.record("energy_pi", r.energy_pi);
    c.record("action_gap", r.action_gap);
    if r.status != SolveStatus::Converged {
        c.failures.push(format!("solver stopped with status {:?}", r.status));
    }
    c.at_most("residual", res, tol.residual);
    c.at_most("energy_action_defect", r.energy_action_defect, tol.energy_action);
    let iso = ContactIsotopy::new(chart, h, sc.flow_dt);
    let diag = asymptotic_diagnostics(chart, h, &iso, &out.field, &r0, 4, tol.fit)?;
    c.at_most("fit_error_max", diag.minus.fit.fit_error.max(diag.plus.fit.fit_error), tol.fit);
    c.at_most("charge_max", diag.minus.charge.q_h.abs().max(diag.plus.charge.q_h.abs()), tol.charge);
    c.at_most("charge_drift", diag.charge_drift, tol.charge);

    let mut field = Vec::new();
    write_field_csv(chart, &out.field, &mut field)?;
    artifacts.push(Artifact { path: "energy_action/field.csv".into(), bytes: field });
    let mut log = Vec::new();
    write_iteration_csv(&out.log, &mut log)?;
    artifacts.push(Artifact { path: "energy_action/iterations.csv".into(), bytes: log });
    artifacts.push(Artifact { path: "energy_action/report.json".into(), bytes: to_json(r).context("serializing solve report")? });
    Ok(c)
}

/// Rows `m, n, h, key...` followed by the order of each key relative to the previous row.
pub fn table_csv(t: &ConvergenceTable) -> Vec<u8> {
    let keys: Vec<&String> = t.orders.keys().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["m".to_string(), "n".into(), "h".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(keys.iter().map(|k| format!("{k}.order")));
    w.write_record(&header).expect("in-memory write");
    for (r, row) in t.rows.iter().enumerate() {
        let mut rec = vec![row.m.to_string(), row.n.to_string(), format!("{:e}", row.h)];
        rec.extend(keys.iter().map(|k| format!("{:e}", row.report.get(k).unwrap_or(f64::NAN))));
        rec.extend(keys.iter().map(|k| if r == 0 { String::new() } else { format!("{:.4}", t.orders[*k][r - 1]) }));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn to_json<T: Serialize>(v: &T) -> serde_json::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}
