//! Least-squares relaxation for perturbed contact instantons on a finite strip.
//!
//! The objective is `Φ(u) = ½(‖∂̄_H^π u‖² + ‖d(e^G (u*λ_H)∘j)‖²)` in the discrete
//! norms of [`crate::fields`]; its gradient is assembled by hand-written
//! reverse mode through the same stencils. Descent is nonlinear conjugate
//! gradient (Polak–Ribière+) with Armijo backtracking. τ-end rows hold
//! Reeb-translated Hamiltonian chords; the `t = 0, 1` rows slide along their
//! Legendrians (gradient projected to the tangent space, position projected
//! after every step).

use std::io::Write;

use nalgebra::SVD;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::csv_err;
use crate::dynamics::{xh_jacobian, ContactIsotopy};
use crate::error::{CoreError, Result};
use crate::fields::{
    action_gap, assemble_dh, asymptotic_action_charge, charge_drift, closedness_residual_from, cr_residual_from, derivative_stencil, gauge_transform,
    pi_energy, AsymptoticCharge, GaugeDirection, MapField, StripEnd, StripGrid,
};
use crate::hamiltonian::{HamiltonianConfig, HamiltonianSpec};
use crate::report::ResidualReport;
use crate::triad::{LegendrianSpec, TriadChart, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStrategy {
    /// Interpolate linearly in τ between the two end chords.
    Linear,
    /// Solve the chord problem for `H = 0` with `R₀` moved by `ψ_H^1`, interpolate,
    /// and pull back through the gauge transform.
    Gauge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EndCondition {
    /// End rows fixed to the chords.
    Dirichlet,
    /// End rows free, pulled toward the chords by `½ w ∫|u − γ|² dt`.
    Penalty { weight: f64 },
}

/// Starting point for the chord search: Legendrian parameters on `R₀` and length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordGuess {
    pub params: Vec<f64>,
    pub length: f64,
}

fn default_step() -> f64 {
    1e-2
}
fn default_damping() -> f64 {
    0.5
}
fn default_iters() -> usize {
    20_000
}
fn default_target() -> f64 {
    1e-6
}
fn default_flow_dt() -> f64 {
    1e-3
}
fn default_perturbation() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub grid: StripGrid,
    pub r0: LegendrianSpec,
    pub r1: LegendrianSpec,
    pub hamiltonian: HamiltonianConfig,
    #[serde(default = "seed_linear")]
    pub seed: SeedStrategy,
    /// Chord guesses at `τ = τ₀` and `τ = τ₁`; default `params = 0`, `length = 1`.
    #[serde(default)]
    pub chord_minus: Option<ChordGuess>,
    #[serde(default)]
    pub chord_plus: Option<ChordGuess>,
    /// Amplitude of the smooth deterministic perturbation added to the seed.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// First trial step of the line search.
    #[serde(default = "default_step")]
    pub initial_step: f64,
    /// Backtracking factor in `(0, 1)`.
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_iters")]
    pub max_iterations: usize,
    /// Stop when `sqrt(cr_l2² + closed_l2²)` falls below this.
    #[serde(default = "default_target")]
    pub target_residual: f64,
    #[serde(default = "end_dirichlet")]
    pub end_condition: EndCondition,
    /// RK4 step for flows and conformal exponents.
    #[serde(default = "default_flow_dt")]
    pub flow_dt: f64,
}

fn seed_linear() -> SeedStrategy {
    SeedStrategy::Linear
}
fn end_dirichlet() -> EndCondition {
    EndCondition::Dirichlet
}

impl SolveConfig {
    /// Defaults around a grid, a Legendrian pair and a Hamiltonian.
    pub fn new(grid: StripGrid, r0: LegendrianSpec, r1: LegendrianSpec, hamiltonian: HamiltonianConfig) -> Self {
        Self {
            grid,
            r0,
            r1,
            hamiltonian,
            seed: SeedStrategy::Linear,
            chord_minus: None,
            chord_plus: None,
            perturbation: default_perturbation(),
            rng_seed: 0,
            initial_step: default_step(),
            damping: default_damping(),
            max_iterations: default_iters(),
            target_residual: default_target(),
            end_condition: EndCondition::Dirichlet,
            flow_dt: default_flow_dt(),
        }
    }

    pub fn chart(&self) -> Result<TriadChart> {
        let d = self.r0.ambient_dim();
        if d < 3 || d.is_multiple_of(2) {
            return Err(CoreError::InvalidParameter { name: "r0", reason: format!("ambient dimension {d} is not 2n+1") });
        }
        TriadChart::standard((d - 1) / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let chart = self.chart()?;
        for r in [&self.r0, &self.r1] {
            LegendrianSpec::new(&chart, r.point(), r.tangents())?;
        }
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CoreError::InvalidParameter { name, reason: format!("must be positive, got {v}") })
            }
        };
        positive("target_residual", self.target_residual)?;
        positive("initial_step", self.initial_step)?;
        positive("flow_dt", self.flow_dt)?;
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(CoreError::InvalidParameter { name: "damping", reason: format!("must lie in (0, 1), got {}", self.damping) });
        }
        if let EndCondition::Penalty { weight } = self.end_condition {
            positive("end_condition.weight", weight)?;
        }
        for g in [&self.chord_minus, &self.chord_plus].into_iter().flatten() {
            if g.params.len() != chart.n() {
                return Err(CoreError::DimensionMismatch { expected: chart.n(), got: g.params.len() });
            }
        }
        Ok(())
    }
}

/// A Reeb-translated Hamiltonian chord `γ(t) = ψ^t (ψ^1)^{-1} φ_R^{Tt} ψ^1(p)`, `p ∈ R₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chord {
    pub start: Vec<f64>,
    pub params: Vec<f64>,
    pub length: f64,
    /// Distance of `γ(1)` from `R₁`.
    pub residual: f64,
}

pub fn chord_point(iso: &ContactIsotopy, p: &[f64], length: f64, t: f64) -> Result<Vector> {
    let q = iso.flow(p, 0.0, 1.0)?.point;
    let r = iso.chart().reeb_flow(&q, length * t);
    Ok(iso.flow(r.as_slice(), 1.0, t)?.point)
}

fn lsq_step(j: &nalgebra::DMatrix<f64>, r: &Vector) -> Result<Vector> {
    let svd = SVD::new(j.clone(), true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1e-300);
    svd.solve(r, tol).map_err(|_| CoreError::Singular("Gauss-Newton step"))
}

/// Gauss–Newton on `(params, T)` for `dist(γ(1), R₁) = 0`; the minimum-norm
/// step keeps degenerate families near the guess.
pub fn find_chord(iso: &ContactIsotopy, r0: &LegendrianSpec, r1: &LegendrianSpec, guess: &ChordGuess) -> Result<Chord> {
    let k = r0.dim();
    let res = |x: &[f64]| -> Result<Vector> {
        let p = r0.at(&x[..k]);
        let e = chord_point(iso, p.as_slice(), x[k], 1.0)?;
        Ok(&e - r1.project(&e))
    };
    let mut x: Vec<f64> = guess.params.iter().copied().chain([guess.length]).collect();
    let mut r = res(&x)?;
    for _ in 0..100 {
        if r.norm() < 1e-13 {
            break;
        }
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::zeros(r.len(), k + 1);
        for c in 0..=k {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[c] += h;
            b[c] -= h;
            jac.set_column(c, &((res(&a)? - res(&b)?) / (2.0 * h)));
        }
        let step = lsq_step(&jac, &r)?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            let rt = res(&trial)?;
            if rt.norm() < r.norm() {
                x = trial;
                r = rt;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(Chord { start: r0.at(&x[..k]).as_slice().to_vec(), params: x[..k].to_vec(), length: x[k], residual: r.norm() })
}

/// Chord samples on the grid's `t` nodes, with the two ends snapped onto the Legendrians.
pub fn chord_row(iso: &ContactIsotopy, chord: &Chord, grid: &StripGrid, r0: &LegendrianSpec, r1: &LegendrianSpec) -> Result<Vec<Vector>> {
    let mut row: Vec<Vector> = (0..=grid.n)
        .into_par_iter()
        .map(|j| chord_point(iso, &chord.start, chord.length, grid.t(j)))
        .collect::<Result<_>>()?;
    row[0] = r0.project(&row[0]);
    row[grid.n] = r1.project(&row[grid.n]);
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub cr_l2: f64,
    pub closed_l2: f64,
    pub penalty: f64,
}

impl Evaluation {
    pub fn residual(&self) -> f64 {
        self.cr_l2.hypot(self.closed_l2)
    }
}

/// The discrete problem: Hamiltonian, boundary data and the fixed end rows.
pub struct StripProblem {
    chart: TriadChart,
    h: HamiltonianSpec,
    iso: ContactIsotopy,
    grid: StripGrid,
    r0: LegendrianSpec,
    r1: LegendrianSpec,
    ends: [Vec<Vector>; 2],
    end_condition: EndCondition,
    precond: Option<Preconditioner>,
}

impl StripProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        chart: &TriadChart,
        h: &HamiltonianSpec,
        iso: &ContactIsotopy,
        grid: StripGrid,
        r0: LegendrianSpec,
        r1: LegendrianSpec,
        ends: [Vec<Vector>; 2],
        end_condition: EndCondition,
    ) -> Self {
        Self { chart: chart.clone(), h: h.clone(), iso: iso.clone(), grid, r0, r1, ends, end_condition, precond: None }
    }

    /// Factors the block preconditioner with weights `e^G` taken from `data`.
    pub fn with_preconditioner(mut self, data: &[f64]) -> Result<Self> {
        self.precond = Some(Preconditioner::build(&self, data)?);
        Ok(self)
    }

    /// Preconditioned, constrained copy of a (raw) gradient.
    pub fn precondition(&self, g: &[f64]) -> Vec<f64> {
        let mut s = match &self.precond {
            Some(p) => p.apply(g),
            None => g.to_vec(),
        };
        self.constrain_direction(&mut s);
        s
    }

    fn fixed_row(&self, i: usize) -> bool {
        matches!(self.end_condition, EndCondition::Dirichlet) && (i == 0 || i == self.grid.m)
    }

    fn field(&self, data: &[f64]) -> Result<MapField> {
        MapField::new(&self.chart, self.grid, data.to_vec())
    }

    fn end_rows(&self) -> [usize; 2] {
        [0, self.grid.m]
    }

    fn penalty(&self, data: &[f64]) -> f64 {
        let EndCondition::Penalty { weight } = self.end_condition else { return 0.0 };
        let d = self.chart.dim();
        let dt = self.grid.dt();
        let mut s = 0.0;
        for (e, i) in self.end_rows().iter().enumerate() {
            for j in 0..=self.grid.n {
                let k = self.grid.index(*i, j);
                let w = if j == 0 || j == self.grid.n { 0.5 * dt } else { dt };
                for c in 0..d {
                    s += w * (data[k * d + c] - self.ends[e][j][c]).powi(2);
                }
            }
        }
        0.5 * weight * s
    }

    pub fn evaluate(&self, data: &[f64]) -> Result<Evaluation> {
        let u = self.field(data)?;
        let f = assemble_dh(&self.chart, &self.h, &u)?;
        let g: Vec<f64> = self.g_values(data)?.into_iter().map(|(g, _)| g).collect();
        let cr = cr_residual_from(self.chart.n(), &f);
        let cl = closedness_residual_from(&f, &g);
        let penalty = self.penalty(data);
        let objective = 0.5 * (cr.l2 * cr.l2 + cl.l2 * cl.l2) + penalty;
        Ok(Evaluation { objective, cr_l2: cr.l2, closed_l2: cl.l2, penalty })
    }

    fn g_values(&self, data: &[f64]) -> Result<Vec<(f64, Vector)>> {
        let d = self.chart.dim();
        let n1 = self.grid.n + 1;
        (0..self.grid.nodes())
            .into_par_iter()
            .map(|k| self.iso.g_hu_with_gradient(self.grid.t(k % n1), &data[k * d..(k + 1) * d]))
            .collect()
    }

    /// `Φ` and its gradient with respect to every node coordinate (unconstrained).
    pub fn gradient(&self, data: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let n = self.chart.n();
        let d = self.chart.dim();
        let grid = self.grid;
        let n1 = grid.n + 1;
        let nodes = grid.nodes();
        let u = self.field(data)?;
        let f = assemble_dh(&self.chart, &self.h, &u)?;
        let gg = self.g_values(data)?;
        let g: Vec<f64> = gg.iter().map(|x| x.0).collect();
        let cr = cr_residual_from(n, &f);
        let cl = closedness_residual_from(&f, &g);
        let (ht, hs) = (grid.dtau(), grid.dt());
        let w = ht * hs;

        // scatter of the cell operator adjoint onto node weights of β_τ = e^G λ_H(u_t) and β_t = −e^G λ(u_τ)
        let mut bt_bar = vec![0.0; nodes];
        let mut bs_bar = vec![0.0; nodes];
        for c in 0..grid.cells() {
            let (i, j) = (c / grid.n, c % grid.n);
            let cb = w * cl.values[c];
            let k00 = i * n1 + j;
            let (k01, k10, k11) = (k00 + 1, k00 + n1, k00 + n1 + 1);
            let a = cb / (2.0 * ht);
            let b = cb / (2.0 * hs);
            bt_bar[k10] += a;
            bt_bar[k11] += a;
            bt_bar[k00] -= a;
            bt_bar[k01] -= a;
            bs_bar[k01] -= b;
            bs_bar[k11] -= b;
            bs_bar[k00] += b;
            bs_bar[k10] += b;
        }

        let mut a_bar = vec![0.0; nodes * d];
        let mut b_bar = vec![0.0; nodes * d];
        let mut p_bar = vec![0.0; nodes * d];
        a_bar
            .par_chunks_mut(d)
            .zip(b_bar.par_chunks_mut(d))
            .zip(p_bar.par_chunks_mut(d))
            .enumerate()
            .for_each(|(k, ((ab, bb), pb))| {
                let p = &data[k * d..(k + 1) * d];
                let a = &f.dh.tau[k * d..(k + 1) * d];
                let b = &f.dh.t[k * d..(k + 1) * d];
                let rho = &cr.values[k * 2 * n..(k + 1) * 2 * n];
                for i in 0..n {
                    ab[i] += 0.5 * w * rho[i];
                    bb[n + i] -= 0.5 * w * rho[i];
                    ab[n + i] += 0.5 * w * rho[n + i];
                    bb[i] += 0.5 * w * rho[n + i];
                }
                let e = g[k].exp();
                let bt = -e * f.lam_tau[k];
                let bs = e * f.lam_t[k];
                let g_bar = bt_bar[k] * bt + bs_bar[k] * bs;
                let lt_bar = -e * bt_bar[k];
                let ls_bar = e * bs_bar[k];
                ab[2 * n] += lt_bar;
                bb[2 * n] += ls_bar;
                for i in 0..n {
                    ab[i] -= p[n + i] * lt_bar;
                    pb[n + i] -= a[i] * lt_bar;
                    bb[i] -= p[n + i] * ls_bar;
                    pb[n + i] -= b[i] * ls_bar;
                }
                for c in 0..d {
                    pb[c] += g_bar * gg[k].1[c];
                }
                // b = u_t − X_H(u)
                let jac = xh_jacobian(&self.chart, &self.h, grid.t(k % n1), p);
                let bv = Vector::from_column_slice(bb);
                let back = jac.transpose() * bv;
                for c in 0..d {
                    pb[c] -= back[c];
                }
            });
        let mut grad = grid_derivatives_transpose(&grid, &a_bar, &b_bar, d);
        for (gk, pk) in grad.iter_mut().zip(&p_bar) {
            *gk += pk;
        }
        let mut penalty = 0.0;
        if let EndCondition::Penalty { weight } = self.end_condition {
            penalty = self.penalty(data);
            for (e, i) in self.end_rows().iter().enumerate() {
                for j in 0..=grid.n {
                    let k = grid.index(*i, j);
                    let wt = if j == 0 || j == grid.n { 0.5 * hs } else { hs };
                    for c in 0..d {
                        grad[k * d + c] += weight * wt * (data[k * d + c] - self.ends[e][j][c]);
                    }
                }
            }
        }
        let objective = 0.5 * (cr.l2 * cr.l2 + cl.l2 * cl.l2) + penalty;
        Ok((Evaluation { objective, cr_l2: cr.l2, closed_l2: cl.l2, penalty }, grad))
    }

    /// Zeroes fixed rows and projects edge rows onto their Legendrian tangents.
    pub fn constrain_direction(&self, v: &mut [f64]) {
        let d = self.chart.dim();
        let grid = self.grid;
        for i in 0..=grid.m {
            let fixed = self.fixed_row(i);
            for j in 0..=grid.n {
                let k = grid.index(i, j);
                let s = &mut v[k * d..(k + 1) * d];
                if fixed {
                    s.fill(0.0);
                } else if j == 0 || j == grid.n {
                    let r = if j == 0 { &self.r0 } else { &self.r1 };
                    let pt = r.project_tangent(&Vector::from_column_slice(s));
                    s.copy_from_slice(pt.as_slice());
                }
            }
        }
    }

    /// Moves edge-row nodes onto their Legendrians.
    pub fn project_boundary(&self, data: &mut [f64]) {
        let d = self.chart.dim();
        for i in 0..=self.grid.m {
            for (j, r) in [(0, &self.r0), (self.grid.n, &self.r1)] {
                let k = self.grid.index(i, j);
                let q = r.project(&Vector::from_column_slice(&data[k * d..(k + 1) * d]));
                data[k * d..(k + 1) * d].copy_from_slice(q.as_slice());
            }
        }
    }

    pub fn boundary_distance(&self, data: &[f64]) -> f64 {
        let d = self.chart.dim();
        let mut m: f64 = 0.0;
        for i in 0..=self.grid.m {
            for (j, r) in [(0, &self.r0), (self.grid.n, &self.r1)] {
                let k = self.grid.index(i, j);
                m = m.max(r.distance(&Vector::from_column_slice(&data[k * d..(k + 1) * d])));
            }
        }
        m
    }
}

/// Per-component inverse of the Gauss–Newton Hessian of the linearization
/// at a flat strip: `¼(D_τᵀD_τ + D_tᵀD_t)` for each ξ-coordinate and `AᵀA`
/// with `A z = d(e^G dz∘j)` for the Reeb coordinate. It ignores the coupling
/// between components, which cancels in the interior for commuting stencils.
pub struct Preconditioner {
    blocks: Vec<CscCholesky<f64>>,
    d: usize,
}

impl Preconditioner {
    pub fn build(problem: &StripProblem, data: &[f64]) -> Result<Self> {
        let grid = problem.grid;
        let d = problem.chart.dim();
        let n = problem.chart.n();
        let (m1, n1) = (grid.m + 1, grid.n + 1);
        let nodes = grid.nodes();
        let w = grid.dtau() * grid.dt();
        let e: Vec<f64> = problem.g_values(data)?.into_iter().map(|(g, _)| g.exp()).collect();
        // rows of D_τ and D_t as sparse (node, weight) lists
        let dtau_row = |i: usize, j: usize| derivative_stencil(i, m1, grid.dtau()).map(|(ii, c)| (ii * n1 + j, c));
        let dt_row = |i: usize, j: usize| derivative_stencil(j, n1, grid.dt()).map(|(jj, c)| (i * n1 + jj, c));
        let mut blocks = Vec::with_capacity(d);
        for comp in 0..d {
            let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
            if comp < 2 * n {
                for i in 0..m1 {
                    for j in 0..n1 {
                        rows.push(dtau_row(i, j).iter().map(|&(k, c)| (k, 0.5 * c)).collect());
                        rows.push(dt_row(i, j).iter().map(|&(k, c)| (k, 0.5 * c)).collect());
                    }
                }
            } else {
                for c in 0..grid.cells() {
                    let (i, j) = (c / grid.n, c % grid.n);
                    let mut row = Vec::with_capacity(24);
                    let (a, b) = (1.0 / (2.0 * grid.dtau()), 1.0 / (2.0 * grid.dt()));
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let k = (i + di) * n1 + j + dj;
                        let sa = if di == 1 { a } else { -a };
                        let sb = if dj == 1 { b } else { -b };
                        for (kk, cc) in dtau_row(i + di, j + dj) {
                            row.push((kk, -sa * e[k] * cc));
                        }
                        for (kk, cc) in dt_row(i + di, j + dj) {
                            row.push((kk, -sb * e[k] * cc));
                        }
                    }
                    rows.push(row);
                }
            }
            let constrained = |k: usize| -> bool {
                let (i, j) = (k / n1, k % n1);
                if problem.fixed_row(i) {
                    return true;
                }
                let r = match j {
                    0 => &problem.r0,
                    x if x == grid.n => &problem.r1,
                    _ => return false,
                };
                let mut unit = Vector::zeros(d);
                unit[comp] = 1.0;
                r.project_tangent(&unit)[comp] < 1e-12
            };
            let fixed: Vec<bool> = (0..nodes).map(constrained).collect();
            let mut coo = CooMatrix::new(nodes, nodes);
            let mut diag = vec![0.0; nodes];
            for row in &rows {
                for &(a, va) in row {
                    if fixed[a] || va == 0.0 {
                        continue;
                    }
                    for &(b, vb) in row {
                        if fixed[b] || vb == 0.0 {
                            continue;
                        }
                        coo.push(a, b, w * va * vb);
                        if a == b {
                            diag[a] += w * va * vb;
                        }
                    }
                }
            }
            let scale = diag.iter().cloned().fold(0.0, f64::max).max(1e-300);
            for k in 0..nodes {
                let mut v = if fixed[k] { 1.0 } else { 1e-10 * scale };
                if let EndCondition::Penalty { weight } = problem.end_condition {
                    let (i, j) = (k / n1, k % n1);
                    if i == 0 || i == grid.m {
                        v += weight * if j == 0 || j == grid.n { 0.5 * grid.dt() } else { grid.dt() };
                    }
                }
                coo.push(k, k, v);
            }
            let csc = CscMatrix::from(&coo);
            blocks.push(CscCholesky::factor(&csc).map_err(|_| CoreError::Singular("preconditioner block"))?);
        }
        Ok(Self { blocks, d })
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let d = self.d;
        let nodes = g.len() / d;
        let cols: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(c, chol)| {
                let rhs = nalgebra::DMatrix::from_fn(nodes, 1, |k, _| g[k * d + c]);
                chol.solve(&rhs).as_slice().to_vec()
            })
            .collect();
        let mut out = vec![0.0; g.len()];
        for (c, col) in cols.iter().enumerate() {
            for k in 0..nodes {
                out[k * d + c] = col[k];
            }
        }
        out
    }
}

/// Adjoint of [`crate::fields::grid_derivatives`]: returns `D_τᵀ a + D_tᵀ b`.
pub fn grid_derivatives_transpose(grid: &StripGrid, a: &[f64], b: &[f64], comps: usize) -> Vec<f64> {
    let (m1, n1) = (grid.m + 1, grid.n + 1);
    let mut out = vec![0.0; a.len()];
    let scatter = |out: &mut [f64], src: &[f64], base: usize, stride: usize, len: usize, h: f64| {
        for k in 0..len {
            let v = src[base + k * stride];
            for (q, w) in derivative_stencil(k, len, h) {
                out[base + q * stride] += w * v;
            }
        }
    };
    for j in 0..n1 {
        for c in 0..comps {
            scatter(&mut out, a, j * comps + c, n1 * comps, m1, grid.dtau());
        }
    }
    for i in 0..m1 {
        for c in 0..comps {
            scatter(&mut out, b, i * n1 * comps + c, comps, n1, grid.dt());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub cr_l2: f64,
    pub closed_l2: f64,
}

pub fn write_iteration_csv<W: Write>(log: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No step along steepest descent decreases the objective.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub residuals: ResidualReport,
    pub boundary_distance: f64,
    pub energy_pi: f64,
    pub charge_minus: AsymptoticCharge,
    pub charge_plus: AsymptoticCharge,
    pub action_gap: f64,
    /// `|E^π − action_gap|`.
    pub energy_action_defect: f64,
    pub chord_minus: Chord,
    pub chord_plus: Chord,
}

pub struct SolveOutcome {
    pub field: MapField,
    pub report: SolveReport,
    pub log: Vec<IterationRecord>,
}

/// Smooth perturbation vanishing on the end rows and tangent to `R₀`, `R₁`
/// on the edges: `sin(kπσ) [sin(lπt) a + (1−t) P₀ b + t P₁ c]`.
fn seed_perturbation(cfg: &SolveConfig, chart: &TriadChart) -> impl Fn(f64, f64) -> Vector {
    let d = chart.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let draw = |rng: &mut ChaCha8Rng| Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let modes: Vec<(usize, usize, Vector, Vector, Vector)> = (1..=2)
        .flat_map(|k| (1..=2).map(move |l| (k, l)))
        .map(|(k, l)| {
            let a = draw(&mut rng);
            let b = cfg.r0.project_tangent(&draw(&mut rng));
            let c = cfg.r1.project_tangent(&draw(&mut rng));
            (k, l, a, b, c)
        })
        .collect();
    let (t0, t1) = (cfg.grid.tau0, cfg.grid.tau1);
    let amp = cfg.perturbation;
    move |s, t| {
        let pi = std::f64::consts::PI;
        let mut v = Vector::zeros(d);
        for (k, l, a, b, c) in &modes {
            let env = amp * (*k as f64 * pi * (s - t0) / (t1 - t0)).sin();
            v += (a * (*l as f64 * pi * t).sin() + b * (1.0 - t) + c * t) * env;
        }
        v
    }
}

fn default_guess(k: usize) -> ChordGuess {
    ChordGuess { params: vec![0.0; k], length: 1.0 }
}

fn chords_for(iso: &ContactIsotopy, cfg: &SolveConfig, r0: &LegendrianSpec, r1: &LegendrianSpec) -> Result<[Chord; 2]> {
    let k = r0.dim();
    let gm = cfg.chord_minus.clone().unwrap_or_else(|| default_guess(k));
    let gp = cfg.chord_plus.clone().unwrap_or_else(|| default_guess(k));
    Ok([find_chord(iso, r0, r1, &gm)?, find_chord(iso, r0, r1, &gp)?])
}

fn linear_seed(chart: &TriadChart, grid: StripGrid, rows: &[Vec<Vector>; 2]) -> Result<MapField> {
    let (t0, t1) = (grid.tau0, grid.tau1);
    let mut data = Vec::with_capacity(grid.nodes() * chart.dim());
    for i in 0..=grid.m {
        let w = (grid.tau(i) - t0) / (t1 - t0);
        for j in 0..=grid.n {
            let p = &rows[0][j] * (1.0 - w) + &rows[1][j] * w;
            data.extend_from_slice(p.as_slice());
        }
    }
    MapField::new(chart, grid, data)
}

/// Builds the problem and the (unperturbed) seed from a configuration.
pub fn prepare(cfg: &SolveConfig) -> Result<(StripProblem, MapField, [Chord; 2])> {
    cfg.validate()?;
    let chart = cfg.chart()?;
    let h = HamiltonianSpec::from_config(&cfg.hamiltonian, chart.n())?;
    let iso = ContactIsotopy::new(&chart, &h, cfg.flow_dt);
    let grid = cfg.grid;
    let chords = chords_for(&iso, cfg, &cfg.r0, &cfg.r1)?;
    let worst = chords[0].residual.max(chords[1].residual);
    if worst > 1e-8 && matches!(cfg.end_condition, EndCondition::Dirichlet) {
        return Err(CoreError::InfeasibleBoundary(worst));
    }
    let rows = [chord_row(&iso, &chords[0], &grid, &cfg.r0, &cfg.r1)?, chord_row(&iso, &chords[1], &grid, &cfg.r0, &cfg.r1)?];
    let seed = match cfg.seed {
        SeedStrategy::Linear => linear_seed(&chart, grid, &rows)?,
        SeedStrategy::Gauge => {
            let zero = HamiltonianSpec::zero();
            let iso0 = ContactIsotopy::new(&chart, &zero, cfg.flow_dt);
            let r0bar = cfg.r0.map_affine(&chart, |p: &Vector| iso.flow(p.as_slice(), 0.0, 1.0).map(|s| s.point))?;
            let bar_chords = chords_for(&iso0, cfg, &r0bar, &cfg.r1)?;
            let bar_rows = [chord_row(&iso0, &bar_chords[0], &grid, &r0bar, &cfg.r1)?, chord_row(&iso0, &bar_chords[1], &grid, &r0bar, &cfg.r1)?];
            let mut bar = linear_seed(&chart, grid, &bar_rows)?;
            bar.set_tags_unchecked(r0bar, cfg.r1.clone());
            let mut u = gauge_transform(&iso, &bar, GaugeDirection::Inverse)?;
            // end rows must be exactly the chords the problem enforces
            let d = chart.dim();
            for (e, i) in [0, grid.m].into_iter().enumerate() {
                for j in 0..=grid.n {
                    let k = grid.index(i, j);
                    u.data_mut()[k * d..(k + 1) * d].copy_from_slice(rows[e][j].as_slice());
                }
            }
            u
        }
    };
    let problem = StripProblem::new(&chart, &h, &iso, grid, cfg.r0.clone(), cfg.r1.clone(), rows, cfg.end_condition).with_preconditioner(seed.data())?;
    Ok((problem, seed, chords))
}

/// Fixed chunking keeps the summation order, and so the iterates, independent of the thread count.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a.par_chunks(4096).zip(b.par_chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
    parts.iter().sum()
}

/// Runs the relaxation from the configured seed.
pub fn solve(cfg: &SolveConfig) -> Result<SolveOutcome> {
    let (problem, seed, chords) = prepare(cfg)?;
    let chart = problem.chart.clone();
    let mut data = seed.data().to_vec();
    let pert = seed_perturbation(cfg, &chart);
    let d = chart.dim();
    let grid = cfg.grid;
    for i in 0..=grid.m {
        for j in 0..=grid.n {
            let k = grid.index(i, j);
            let v = pert(grid.tau(i), grid.t(j));
            for c in 0..d {
                data[k * d + c] += v[c];
            }
        }
    }
    problem.project_boundary(&mut data);
    let (status, iterations, log) = relax(&problem, &mut data, cfg)?;
    let mut field = MapField::new(&chart, grid, data)?;
    field.set_tags_unchecked(cfg.r0.clone(), cfg.r1.clone());
    let report = summarize(&problem, &field, status, iterations, log.last().map(|r| r.objective).unwrap_or(f64::NAN), chords)?;
    Ok(SolveOutcome { field, report, log })
}

/// Accepted iterations over which the objective must still move.
const STALL_WINDOW: usize = 100;

/// Preconditioned NCG (PR+) with Armijo backtracking.
pub fn relax(problem: &StripProblem, data: &mut [f64], cfg: &SolveConfig) -> Result<(SolveStatus, usize, Vec<IterationRecord>)> {
    let (mut ev, g0) = problem.gradient(data)?;
    if !ev.objective.is_finite() {
        return Err(CoreError::Divergence(format!("objective is {} at the seed", ev.objective)));
    }
    let mut g = g0;
    problem.constrain_direction(&mut g);
    let mut s = problem.precondition(&g);
    let mut dir: Vec<f64> = s.iter().map(|x| -x).collect();
    let mut gs_prev = dot(&g, &s);
    let mut probe = cfg.initial_step;
    let mut log = vec![IterationRecord { iter: 0, objective: ev.objective, cr_l2: ev.cr_l2, closed_l2: ev.closed_l2 }];
    let converged = |e: &Evaluation| e.residual() <= cfg.target_residual && e.penalty <= 0.5 * cfg.target_residual * cfg.target_residual;
    let mut trial = vec![0.0; data.len()];
    let mut restarted = false;
    for it in 1..=cfg.max_iterations {
        if converged(&ev) {
            return Ok((SolveStatus::Converged, it - 1, log));
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir.iter_mut().zip(&s).for_each(|(dv, sv)| *dv = -sv);
            slope = -gs_prev;
        }
        let step_to = |alpha: f64, out: &mut Vec<f64>| {
            out.par_iter_mut().zip(data.par_iter().zip(dir.par_iter())).for_each(|(o, (x, dv))| *o = x + alpha * dv);
            problem.project_boundary(out);
        };
        // trial step: minimizer of the quadratic through Φ(0), Φ'(0) and one probe
        step_to(probe, &mut trial);
        let phi_probe = problem.evaluate(&trial)?.objective;
        let curv = 2.0 * (phi_probe - ev.objective - probe * slope) / (probe * probe);
        let mut alpha = if curv > 0.0 && phi_probe.is_finite() { -slope / curv } else { probe };
        let mut accepted = false;
        for _ in 0..60 {
            step_to(alpha, &mut trial);
            let e = problem.evaluate(&trial)?;
            if e.objective.is_finite() && e.objective <= ev.objective + 1e-4 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= cfg.damping;
        }
        if !accepted {
            if restarted {
                return Ok((SolveStatus::Stalled, it - 1, log));
            }
            // one restart along the preconditioned steepest descent
            restarted = true;
            dir.iter_mut().zip(&s).for_each(|(dv, sv)| *dv = -sv);
            continue;
        }
        restarted = false;
        data.copy_from_slice(&trial);
        probe = alpha.max(1e-12);
        let (e, mut gn) = problem.gradient(data)?;
        problem.constrain_direction(&mut gn);
        let sn = problem.precondition(&gn);
        let gs = dot(&gn, &sn);
        let beta = ((gs - dot(&g, &sn)) / gs_prev).max(0.0);
        dir.par_iter_mut().zip(sn.par_iter()).for_each(|(dv, sv)| *dv = -sv + beta * *dv);
        g = gn;
        s = sn;
        gs_prev = gs;
        ev = e;
        log.push(IterationRecord { iter: it, objective: ev.objective, cr_l2: ev.cr_l2, closed_l2: ev.closed_l2 });
        // at a nonzero discrete floor the accepted steps shrink without bound
        if log.len() > STALL_WINDOW && log[log.len() - 1 - STALL_WINDOW].objective - ev.objective <= 1e-12 * ev.objective && !converged(&ev) {
            return Ok((SolveStatus::Stalled, it, log));
        }
    }
    let status = if converged(&ev) { SolveStatus::Converged } else { SolveStatus::MaxIterations };
    Ok((status, cfg.max_iterations, log))
}

fn summarize(problem: &StripProblem, u: &MapField, status: SolveStatus, iterations: usize, objective: f64, chords: [Chord; 2]) -> Result<SolveReport> {
    let (chart, h, iso) = (&problem.chart, &problem.h, &problem.iso);
    let grid = problem.grid;
    let residuals = crate::fields::equation_report(chart, h, iso, u)?;
    let energy_pi = pi_energy(chart, h, iso, u)?;
    let charge_minus = asymptotic_action_charge(chart, h, iso, u, grid.tau0, StripEnd::Negative)?;
    let charge_plus = asymptotic_action_charge(chart, h, iso, u, grid.tau1, StripEnd::Positive)?;
    let gap = action_gap(chart, h, iso, u)?;
    let [chord_minus, chord_plus] = chords;
    Ok(SolveReport {
        status,
        iterations,
        objective,
        residuals,
        boundary_distance: problem.boundary_distance(u.data()),
        energy_pi,
        charge_minus,
        charge_plus,
        action_gap: gap,
        energy_action_defect: (energy_pi - gap).abs(),
        chord_minus,
        chord_plus,
    })
}

/// Fit of one τ-slice against the Reeb-translated chord family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    pub s: f64,
    /// `(∫|u(s, t) − γ(t)|² dt)^{1/2}` at the optimum.
    pub fit_error: f64,
    pub params: Vec<f64>,
    pub fitted_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndDiagnostics {
    pub end: StripEnd,
    pub fit: SliceFit,
    pub charge: AsymptoticCharge,
    /// `|fitted T − T_H|`.
    pub delta_t: f64,
    /// Fits on rows marching toward the end; the last entry is the extreme slice.
    pub sequence: Vec<SliceFit>,
    pub fit_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDiagnostics {
    pub minus: EndDiagnostics,
    pub plus: EndDiagnostics,
    /// `max − min` of `Q_H` over all rows.
    pub charge_drift: f64,
}

/// Gauss–Newton fit of row `i` over `(params, T)`.
pub fn fit_slice(iso: &ContactIsotopy, u: &MapField, r0: &LegendrianSpec, i: usize, t_guess: f64) -> Result<SliceFit> {
    let grid = *u.grid();
    let k = r0.dim();
    let wts: Vec<f64> = (0..=grid.n).map(|j| if j == 0 || j == grid.n { 0.5 * grid.dt() } else { grid.dt() }).collect();
    let target: Vec<Vector> = (0..=grid.n).map(|j| u.node_vec(i, j)).collect();
    let res = |x: &[f64]| -> Result<Vector> {
        let p = r0.at(&x[..k]);
        let rows: Vec<Vector> = (0..=grid.n)
            .into_par_iter()
            .map(|j| chord_point(iso, p.as_slice(), x[k], grid.t(j)))
            .collect::<Result<_>>()?;
        let d = p.len();
        Ok(Vector::from_fn((grid.n + 1) * d, |r, _| wts[r / d].sqrt() * (rows[r / d][r % d] - target[r / d][r % d])))
    };
    let mut x: Vec<f64> = r0.params_of(&target[0]).into_iter().chain([t_guess]).collect();
    let mut r = res(&x)?;
    for _ in 0..50 {
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::zeros(r.len(), k + 1);
        for c in 0..=k {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[c] += h;
            b[c] -= h;
            jac.set_column(c, &((res(&a)? - res(&b)?) / (2.0 * h)));
        }
        let step = lsq_step(&jac, &r)?;
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
        let rt = res(&trial)?;
        if !(rt.norm() < r.norm()) {
            break;
        }
        let done = r.norm() - rt.norm() <= 1e-14 * (1.0 + r.norm());
        x = trial;
        r = rt;
        if done {
            break;
        }
    }
    Ok(SliceFit { s: grid.tau(i), fit_error: r.norm(), params: x[..k].to_vec(), fitted_t: x[k] })
}

/// Fits the extreme slices (and `rows` slices marching toward each end) against
/// `γ(t) = ψ^t (ψ^1)^{-1} φ_R^{Tt} ψ^1(p)` and reports `T` against `T_H`.
pub fn asymptotic_diagnostics(
    chart: &TriadChart,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    u: &MapField,
    r0: &LegendrianSpec,
    rows: usize,
    fit_threshold: f64,
) -> Result<AsymptoticDiagnostics> {
    let grid = *u.grid();
    let rows = rows.max(1).min(grid.m / 2 + 1);
    let half = grid.m / 2;
    let one = |end: StripEnd| -> Result<EndDiagnostics> {
        let (extreme, s) = match end {
            StripEnd::Negative => (0, grid.tau0),
            StripEnd::Positive => (grid.m, grid.tau1),
        };
        let charge = asymptotic_action_charge(chart, h, iso, u, s, end)?;
        let mut sequence = Vec::with_capacity(rows);
        for q in 0..rows {
            // evenly from the middle to the extreme row
            let off = if rows == 1 { half } else { half - q * half / (rows - 1) };
            let i = match end {
                StripEnd::Negative => off.min(half),
                StripEnd::Positive => grid.m - off.min(half),
            };
            let tg = asymptotic_action_charge(chart, h, iso, u, grid.tau(i), end)?.t_h;
            sequence.push(fit_slice(iso, u, r0, i, tg)?);
        }
        let fit = match sequence.last() {
            Some(f) if f.s == grid.tau(extreme) => f.clone(),
            _ => fit_slice(iso, u, r0, extreme, charge.t_h)?,
        };
        Ok(EndDiagnostics { end, delta_t: (fit.fitted_t - charge.t_h).abs(), fit_ok: fit.fit_error <= fit_threshold, fit, charge, sequence })
    };
    Ok(AsymptoticDiagnostics {
        minus: one(StripEnd::Negative)?,
        plus: one(StripEnd::Positive)?,
        charge_drift: charge_drift(chart, h, iso, u, grid.tau0, grid.tau1)?,
    })
}

/// `ResidualReport` view of a solve for manifests.
impl SolveReport {
    pub fn to_residual_report(&self) -> ResidualReport {
        let mut r = self.residuals.clone();
        r.insert("energy_pi", self.energy_pi);
        r.insert("action_gap", self.action_gap);
        r.insert("energy_action_defect", self.energy_action_defect);
        r.insert("q_h_minus", self.charge_minus.q_h.abs());
        r.insert("q_h_plus", self.charge_plus.q_h.abs());
        r.insert("boundary_distance", self.boundary_distance);
        r
    }
}
