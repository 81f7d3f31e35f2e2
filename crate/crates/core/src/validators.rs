//! Finite-difference checks of the on-shell identities satisfied by perturbed
//! contact instantons on the strip.
//!
//! ξ-valued quantities are handled in ξ-frame coefficients, where `J` is the
//! standard block rotation, the metric is Euclidean, and `∇^π_a ζ = ∂_a ζ + ω(u_a) ζ`
//! with `ω` the connection matrices of the chosen connection. Residuals are
//! evaluated away from the strip edges: cells not touching the boundary for
//! the fundamental equation, nodes at distance ≥ 2 (≥ 3 for the Laplacian).

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connection::{connection_matrices, hermitian_curvature, ConnectionField, StandardConnection};
use crate::dynamics::{xh, ContactIsotopy};
use crate::error::{CoreError, Result};
use crate::families;
use crate::fields::{assemble_dh, closedness_residual_from, cr_residual_from, g_field, grid_derivatives, DhField, MapField, StripGrid};
use crate::hamiltonian::HamiltonianSpec;
use crate::report::{order_estimate, ResidualReport};
use crate::triad::{lie_derivative_rj, Matrix, TriadChart, TriadPoint, Vector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidatorOptions {
    /// Bound on the CR max-norm; default `10 Δ² (1 + max|du|)²`.
    pub cr_threshold: Option<f64>,
    /// Bound on the closedness max-norm; same default.
    pub closed_threshold: Option<f64>,
}

#[derive(Default)]
struct Norm {
    sum: f64,
    max: f64,
}

impl Norm {
    fn add(&mut self, v: f64) {
        self.sum += v * v;
        self.max = if v.is_nan() || self.max.is_nan() { f64::NAN } else { self.max.max(v.abs()) };
    }

    fn write(&self, rep: &mut ResidualReport, key: &str, w: f64) {
        rep.insert(&format!("{key}_l2"), (w * self.sum).sqrt());
        rep.insert(&format!("{key}_max"), self.max);
    }
}

fn vnorm(v: &Vector) -> f64 {
    v.norm()
}

/// `J` on ξ-frame coefficients.
fn j_block(n: usize) -> Matrix {
    let mut j = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(n + i, i)] = 1.0;
        j[(i, n + i)] = -1.0;
    }
    j
}

/// Geometry at a point: connection matrices, `ℒ_R J` on ξ, torsion of ξ pairs.
struct Geom {
    omega: Vec<Matrix>,
    lie_j: Matrix,
    frame: Matrix,
    frame_inv: Matrix,
    coeffs: crate::connection::ConnectionCoeffs,
    p: Vector,
}

impl Geom {
    fn at<C: ConnectionField + ?Sized>(chart: &TriadChart, conn: &C, p: &Vector) -> Self {
        let frame = chart.frame(p);
        let frame_inv = frame.clone().try_inverse().expect("frame is invertible");
        let lie = lie_derivative_rj(chart, &TriadPoint { coords: p.clone() }).expect("point has chart dimension");
        let m = 2 * chart.n();
        let full = &frame_inv * chart.project_matrix(p) * lie * &frame;
        Self {
            omega: connection_matrices(chart, conn, p),
            lie_j: full.view((0, 0), (m, m)).into_owned(),
            frame,
            frame_inv,
            coeffs: conn.coeffs_at(p),
            p: p.clone(),
        }
    }

    fn omega_along(&self, v: &[f64]) -> Matrix {
        let m = self.omega[0].nrows();
        let mut w = Matrix::zeros(m, m);
        for (c, om) in self.omega.iter().enumerate() {
            w += om * v[c];
        }
        w
    }

    fn to_coords(&self, c: &Vector) -> Vector {
        let m = c.len();
        self.frame.columns(0, m) * c
    }

    /// ξ-frame coefficients of `T^π(a, b)`.
    fn torsion_pi(&self, chart: &TriadChart, a: &Vector, b: &Vector) -> Vector {
        let t = self.coeffs.torsion(&self.to_coords(a), &self.to_coords(b));
        let pt = chart.project(&self.p, &t);
        let c = &self.frame_inv * pt;
        c.rows(0, a.len()).into_owned()
    }
}

/// Per-node data shared by the validators.
struct OnShell {
    n: usize,
    d: usize,
    grid: StripGrid,
    f: DhField,
    g: Vec<f64>,
    /// ξ-frame coefficients of `d_H^π u(∂τ)`, `d_H^π u(∂t)` and `X_H^π(u)`.
    zt: Vec<f64>,
    zs: Vec<f64>,
    xp: Vec<f64>,
    /// Raw `u_t`.
    ut: Vec<f64>,
    /// `λ(u_t)` without the Hamiltonian.
    lam_t_raw: Vec<f64>,
    rh: Vec<f64>,
    cr_max: f64,
    closed_max: f64,
    du_max: f64,
}

impl OnShell {
    fn new(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<Self> {
        let n = chart.n();
        let d = chart.dim();
        let m = 2 * n;
        let f = assemble_dh(chart, h, u)?;
        let g = g_field(iso, u)?;
        let grid = f.grid;
        let nodes = grid.nodes();
        let mut zt = vec![0.0; nodes * m];
        let mut zs = vec![0.0; nodes * m];
        let mut xp = vec![0.0; nodes * m];
        let mut ut = vec![0.0; nodes * d];
        let mut lam_t_raw = vec![0.0; nodes];
        let mut rh = vec![0.0; nodes];
        let mut du_max: f64 = 0.0;
        for k in 0..nodes {
            let t = grid.t(k % (grid.n + 1));
            let p = Vector::from_column_slice(&u.data()[k * d..(k + 1) * d]);
            let x = xh(chart, h, t, p.as_slice());
            let a = chart.frame_coeffs(&p, &Vector::from_column_slice(&f.pi.tau[k * d..(k + 1) * d]));
            let b = chart.frame_coeffs(&p, &Vector::from_column_slice(&f.pi.t[k * d..(k + 1) * d]));
            let c = chart.frame_coeffs(&p, &chart.project(&p, &x));
            zt[k * m..(k + 1) * m].copy_from_slice(&a.as_slice()[..m]);
            zs[k * m..(k + 1) * m].copy_from_slice(&b.as_slice()[..m]);
            xp[k * m..(k + 1) * m].copy_from_slice(&c.as_slice()[..m]);
            for q in 0..d {
                ut[k * d + q] = f.dh.t[k * d + q] + x[q];
                du_max = du_max.max(f.dh.tau[k * d + q].abs()).max(ut[k * d + q].abs());
            }
            let hv = h.value(t, p.as_slice());
            lam_t_raw[k] = f.lam_t[k] - hv;
            rh[k] = h.reeb_derivative(t, p.as_slice());
        }
        let cr = cr_residual_from(n, &f);
        let cl = closedness_residual_from(&f, &g);
        Ok(Self { n, d, grid, f, g, zt, zs, xp, ut, lam_t_raw, rh, cr_max: cr.max, closed_max: cl.max, du_max })
    }

    fn default_threshold(&self) -> f64 {
        10.0 * self.grid.spacing().powi(2) * (1.0 + self.du_max).powi(2)
    }

    fn require_cr(&self, opts: &ValidatorOptions) -> Result<()> {
        let tol = opts.cr_threshold.unwrap_or_else(|| self.default_threshold());
        if !(self.cr_max <= tol) {
            return Err(CoreError::Precondition { what: "CR residual max-norm".into(), value: self.cr_max, threshold: tol });
        }
        Ok(())
    }

    fn require_closed(&self, opts: &ValidatorOptions) -> Result<()> {
        let tol = opts.closed_threshold.unwrap_or_else(|| self.default_threshold());
        if !(self.closed_max <= tol) {
            return Err(CoreError::Precondition { what: "closedness residual max-norm".into(), value: self.closed_max, threshold: tol });
        }
        Ok(())
    }

    fn vec(&self, data: &[f64], k: usize) -> Vector {
        let m = 2 * self.n;
        Vector::from_column_slice(&data[k * m..(k + 1) * m])
    }

    fn point(&self, u: &MapField, k: usize) -> Vector {
        Vector::from_column_slice(&u.data()[k * self.d..(k + 1) * self.d])
    }

    fn weight(&self) -> f64 {
        self.grid.dtau() * self.grid.dt()
    }

    fn interior(&self, r: usize) -> Vec<usize> {
        let g = &self.grid;
        let mut out = Vec::new();
        for i in r..=g.m.saturating_sub(r) {
            for j in r..=g.n.saturating_sub(r) {
                out.push(g.index(i, j));
            }
        }
        out
    }

    /// Right side of the fundamental equation at a point, given the averaged
    /// data there and `∇_τ X^π` already formed.
    #[allow(clippy::too_many_arguments)]
    fn fundamental_rhs(&self, chart: &TriadChart, geo: &Geom, lam_tau: f64, lam_t: f64, zt: &Vector, zs: &Vector, xp: &Vector, nabla_x: &Vector) -> Vector {
        let j = j_block(self.n);
        let lj = &geo.lie_j * &j;
        &lj * zs * (0.5 * lam_tau) - &lj * zt * (0.5 * lam_t) + geo.torsion_pi(chart, xp, zt) * 2.0 + &lj * xp * (0.5 * lam_tau) - nabla_x
    }
}

/// `d^{∇π}(d_H^π u)(∂τ, ∂t)` minus its expression in `ℒ_R J`, `T^π` and `X_H^π`,
/// assembled per cell from the corner values.
pub fn fundamental_equation_residual_with<C: ConnectionField + ?Sized>(
    chart: &TriadChart,
    conn: &C,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    u: &MapField,
    opts: &ValidatorOptions,
) -> Result<ResidualReport> {
    let s = OnShell::new(chart, h, iso, u)?;
    s.require_cr(opts)?;
    let g = s.grid;
    let (ht, hs) = (g.dtau(), g.dt());
    let n1 = g.n + 1;
    let cells: Vec<(usize, usize)> = (1..g.m - 1).flat_map(|i| (1..g.n - 1).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let k = [i * n1 + j, i * n1 + j + 1, (i + 1) * n1 + j, (i + 1) * n1 + j + 1];
            let avg = |data: &[f64], w: usize| -> Vector {
                Vector::from_fn(w, |c, _| 0.25 * k.iter().map(|q| data[q * w + c]).sum::<f64>())
            };
            let ctau = |data: &[f64], w: usize| -> Vector {
                Vector::from_fn(w, |c, _| (data[k[2] * w + c] + data[k[3] * w + c] - data[k[0] * w + c] - data[k[1] * w + c]) / (2.0 * ht))
            };
            let ct = |data: &[f64], w: usize| -> Vector {
                Vector::from_fn(w, |c, _| (data[k[1] * w + c] + data[k[3] * w + c] - data[k[0] * w + c] - data[k[2] * w + c]) / (2.0 * hs))
            };
            let m = 2 * s.n;
            let p = avg(u.data(), s.d);
            let geo = Geom::at(chart, conn, &p);
            let (utau, ut) = (avg(&s.f.dh.tau, s.d), avg(&s.ut, s.d));
            let (zt, zs, xp) = (avg(&s.zt, m), avg(&s.zs, m), avg(&s.xp, m));
            let lhs = ctau(&s.zs, m) - ct(&s.zt, m) + geo.omega_along(utau.as_slice()) * &zs - geo.omega_along(ut.as_slice()) * &zt;
            let nabla_x = ctau(&s.xp, m) + geo.omega_along(utau.as_slice()) * &xp;
            let lam_tau = avg(&s.f.lam_tau, 1)[0];
            let lam_t = avg(&s.lam_t_raw, 1)[0];
            vnorm(&(lhs - s.fundamental_rhs(chart, &geo, lam_tau, lam_t, &zt, &zs, &xp, &nabla_x)))
        })
        .collect();
    let mut nm = Norm::default();
    vals.iter().for_each(|v| nm.add(*v));
    let mut rep = ResidualReport::new();
    nm.write(&mut rep, "fundamental", s.weight());
    Ok(rep)
}

pub fn fundamental_equation_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField, opts: &ValidatorOptions) -> Result<ResidualReport> {
    fundamental_equation_residual_with(chart, &StandardConnection::new(chart), h, iso, u, opts)
}

/// `d(u*λ_H) − ½|d_H^π u|² dA − u*(R[H] λ) ∧ dt` on interior nodes.
pub fn du_lambda_h_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField, opts: &ValidatorOptions) -> Result<ResidualReport> {
    let s = OnShell::new(chart, h, iso, u)?;
    s.require_cr(opts)?;
    let (dtau_lt, _) = grid_derivatives(&s.grid, &s.f.lam_t, 1);
    let (_, dt_ls) = grid_derivatives(&s.grid, &s.f.lam_tau, 1);
    let mut nm = Norm::default();
    for k in s.interior(2) {
        let e = s.vec(&s.zt, k).norm_squared() + s.vec(&s.zs, k).norm_squared();
        nm.add(dtau_lt[k] - dt_ls[k] - 0.5 * e - s.rh[k] * s.f.lam_tau[k]);
    }
    let mut rep = ResidualReport::new();
    nm.write(&mut rep, "dulambda", s.weight());
    Ok(rep)
}

/// Residuals of the `(ζ, α)` system with `ζ = d_H^π u(∂τ)`, `f = λ(u_τ)`,
/// `g = λ(u_t) + H`, `α = g + i f`.
///
/// `dbar_alpha_derived` tests `2∂̄α = |ζ|² + R[H] f + i(−G_τ f − G_t g)`, which
/// follows from the two equations with the weight `e^G` kept.
/// `dbar_alpha_printed` tests `∂̄α = ½|ζ|² + R[H] f` as commonly displayed;
/// the two agree when `R[H] = 0`. `zeta_derived` tests
/// `∇_τζ + J∇_tζ + J F = 0` with `F` the full right side of the fundamental
/// equation; `zeta_printed_*` test `∇_τζ + J∇_tζ + B + JP = 0` with `B` built
/// from `u*λ` or `u*λ_H`. `boundary_imag_max` is `max |Im α|` on both edges.
pub fn isothermal_system_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField, opts: &ValidatorOptions) -> Result<ResidualReport> {
    isothermal_system_residual_with(chart, &StandardConnection::new(chart), h, iso, u, opts)
}

pub fn isothermal_system_residual_with<C: ConnectionField + ?Sized>(
    chart: &TriadChart,
    conn: &C,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    u: &MapField,
    opts: &ValidatorOptions,
) -> Result<ResidualReport> {
    let s = OnShell::new(chart, h, iso, u)?;
    s.require_cr(opts)?;
    s.require_closed(opts)?;
    let m = 2 * s.n;
    let grid = s.grid;
    let (ff, gg) = (&s.f.lam_tau, &s.f.lam_t);
    let (f_tau, f_t) = grid_derivatives(&grid, ff, 1);
    let (g_tau, g_t) = grid_derivatives(&grid, gg, 1);
    let (gw_tau, gw_t) = grid_derivatives(&grid, &s.g, 1);
    let (zt_tau, zt_t) = grid_derivatives(&grid, &s.zt, m);
    let (xp_tau, _) = grid_derivatives(&grid, &s.xp, m);
    let j = j_block(s.n);
    let idx = s.interior(2);
    let rows: Vec<[f64; 5]> = idx
        .par_iter()
        .map(|&k| {
            let zeta2 = s.vec(&s.zt, k).norm_squared();
            let re = g_tau[k] - f_t[k];
            let im = f_tau[k] + g_t[k];
            let rd = re - (zeta2 + s.rh[k] * ff[k]);
            let id = im - (-gw_tau[k] * ff[k] - gw_t[k] * gg[k]);
            let rp = 0.5 * re - 0.5 * zeta2 - s.rh[k] * ff[k];
            let ip = 0.5 * im;
            let p = s.point(u, k);
            let geo = Geom::at(chart, conn, &p);
            let utau = &s.f.dh.tau[k * s.d..(k + 1) * s.d];
            let ut = &s.ut[k * s.d..(k + 1) * s.d];
            let zt = s.vec(&s.zt, k);
            let zs = s.vec(&s.zs, k);
            let xp = s.vec(&s.xp, k);
            let nt = s.vec(&zt_tau, k) + geo.omega_along(utau) * &zt;
            let ns = s.vec(&zt_t, k) + geo.omega_along(ut) * &zt;
            let nabla_x = s.vec(&xp_tau, k) + geo.omega_along(utau) * &xp;
            let ff_k = s.fundamental_rhs(chart, &geo, ff[k], s.lam_t_raw[k], &zt, &zs, &xp, &nabla_x);
            let base = &nt + &j * &ns;
            let zeta_d = vnorm(&(&base + &j * &ff_k));
            let lj = &geo.lie_j;
            let tq = geo.torsion_pi(chart, &xp, &zt) * 2.0;
            let b = |gv: f64| -> Vector { lj * &zt * (-0.5 * gv) + lj * (&j * &zt) * (0.5 * ff[k]) + &j * &tq };
            let jp = &j * (lj * (&j * &xp)) * (0.5 * ff[k]);
            let zeta_l = vnorm(&(&base + b(s.lam_t_raw[k]) + &jp));
            let zeta_lh = vnorm(&(&base + b(gg[k]) + &jp));
            [rd.hypot(id), rp.hypot(ip), zeta_d, zeta_l, zeta_lh]
        })
        .collect();
    let keys = ["dbar_alpha_derived", "dbar_alpha_printed", "zeta_derived", "zeta_printed_lambda", "zeta_printed_lambda_h"];
    let mut rep = ResidualReport::new();
    for (c, key) in keys.iter().enumerate() {
        let mut nm = Norm::default();
        rows.iter().for_each(|r| nm.add(r[c]));
        nm.write(&mut rep, key, s.weight());
    }
    let edge = (0..=grid.m)
        .flat_map(|i| [grid.index(i, 0), grid.index(i, grid.n)])
        .fold(0.0f64, |a, k| a.max(ff[k].abs()));
    rep.insert("boundary_imag_max", edge);
    Ok(rep)
}

/// FD curvature data at one node.
#[derive(Clone, Debug)]
pub struct CurvatureSample {
    pub node: (usize, usize),
    /// `R^{∇π}(u_τ, u_t)` on ξ-frame coefficients.
    pub r_tau_t: Matrix,
    /// `max |Ω_ab + Ω_ba|` over coordinate pairs.
    pub antisymmetry: f64,
    /// `max |T^π|` over ξ-frame pairs.
    pub torsion_pi: f64,
    /// `ℒ_R J ∘ J` on ξ-frame coefficients.
    pub lie_jj: Matrix,
}

pub fn curvature_sample<C: ConnectionField + ?Sized>(chart: &TriadChart, conn: &C, u: &MapField, utau: &[f64], ut: &[f64], i: usize, j: usize) -> CurvatureSample {
    let d = chart.dim();
    let m = 2 * chart.n();
    let p = u.node_vec(i, j);
    let om = hermitian_curvature(chart, conn, &p);
    let mut r = Matrix::zeros(m, m);
    let mut anti: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            r += &om[a * d + b] * (utau[a] * ut[b]);
            anti = anti.max((&om[a * d + b] + &om[b * d + a]).amax());
        }
    }
    let geo = Geom::at(chart, conn, &p);
    let mut tors: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            let (mut ea, mut eb) = (Vector::zeros(m), Vector::zeros(m));
            ea[a] = 1.0;
            eb[b] = 1.0;
            tors = tors.max(geo.torsion_pi(chart, &ea, &eb).amax());
        }
    }
    CurvatureSample { node: (i, j), r_tau_t: r, antisymmetry: anti, torsion_pi: tors, lie_jj: &geo.lie_j * j_block(chart.n()) }
}

/// `½Δe − |∇^π β|² − K|β|² − 2⟨R(∂τ,∂t)β_τ, β_t⟩ + 2(⟨∇_t F, β_τ⟩ − ⟨∇_τ F, β_t⟩)`
/// with `e = |β_τ|² + |β_t|²`, `β = d_H^π u`, `F = d^{∇π}β(∂τ, ∂t)` and `K = 0`.
pub fn weitzenbock_laplacian_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField, opts: &ValidatorOptions) -> Result<ResidualReport> {
    weitzenbock_laplacian_residual_with(chart, &StandardConnection::new(chart), h, iso, u, opts)
}

pub fn weitzenbock_laplacian_residual_with<C: ConnectionField + ?Sized>(
    chart: &TriadChart,
    conn: &C,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    u: &MapField,
    opts: &ValidatorOptions,
) -> Result<ResidualReport> {
    let s = OnShell::new(chart, h, iso, u)?;
    s.require_cr(opts)?;
    let m = 2 * s.n;
    let d = s.d;
    let grid = s.grid;
    let nodes = grid.nodes();
    let geos: Vec<Geom> = (0..nodes).into_par_iter().map(|k| Geom::at(chart, conn, &s.point(u, k))).collect();
    let (zt_tau, zt_t) = grid_derivatives(&grid, &s.zt, m);
    let (zs_tau, zs_t) = grid_derivatives(&grid, &s.zs, m);
    let mut nab = [vec![0.0; nodes * m], vec![0.0; nodes * m], vec![0.0; nodes * m], vec![0.0; nodes * m]];
    let mut ff = vec![0.0; nodes * m];
    let mut e = vec![0.0; nodes];
    for k in 0..nodes {
        let wt = geos[k].omega_along(&s.f.dh.tau[k * d..(k + 1) * d]);
        let ws = geos[k].omega_along(&s.ut[k * d..(k + 1) * d]);
        let (zt, zs) = (s.vec(&s.zt, k), s.vec(&s.zs, k));
        // ∇_a β_b for (a, b) in (τ,τ), (τ,t), (t,τ), (t,t)
        let parts = [
            s.vec(&zt_tau, k) + &wt * &zt,
            s.vec(&zs_tau, k) + &wt * &zs,
            s.vec(&zt_t, k) + &ws * &zt,
            s.vec(&zs_t, k) + &ws * &zs,
        ];
        let f = &parts[1] - &parts[2];
        ff[k * m..(k + 1) * m].copy_from_slice(f.as_slice());
        for (q, v) in parts.iter().enumerate() {
            nab[q][k * m..(k + 1) * m].copy_from_slice(v.as_slice());
        }
        e[k] = zt.norm_squared() + zs.norm_squared();
    }
    let (f_tau, f_t) = grid_derivatives(&grid, &ff, m);
    let n1 = grid.n + 1;
    let (ht, hs) = (grid.dtau(), grid.dt());
    let mut nm = Norm::default();
    let mut anti: f64 = 0.0;
    let mut tors: f64 = 0.0;
    for k in s.interior(3) {
        let (i, j) = (k / n1, k % n1);
        let lap = (e[k + n1] - 2.0 * e[k] + e[k - n1]) / (ht * ht) + (e[k + 1] - 2.0 * e[k] + e[k - 1]) / (hs * hs);
        let grad2: f64 = nab.iter().map(|a| s.vec(a, k).norm_squared()).sum();
        let cs = curvature_sample(chart, conn, u, &s.f.dh.tau[k * d..(k + 1) * d], &s.ut[k * d..(k + 1) * d], i, j);
        anti = anti.max(cs.antisymmetry);
        tors = tors.max(cs.torsion_pi);
        let (zt, zs) = (s.vec(&s.zt, k), s.vec(&s.zs, k));
        let curv = 2.0 * (&cs.r_tau_t * &zt).dot(&zs);
        let f = s.vec(&ff, k);
        let wt = geos[k].omega_along(&s.f.dh.tau[k * d..(k + 1) * d]);
        let ws = geos[k].omega_along(&s.ut[k * d..(k + 1) * d]);
        let nf_tau = s.vec(&f_tau, k) + &wt * &f;
        let nf_t = s.vec(&f_t, k) + &ws * &f;
        let rhs = grad2 + curv - 2.0 * (nf_t.dot(&zt) - nf_tau.dot(&zs));
        nm.add(0.5 * lap - rhs);
    }
    let mut rep = ResidualReport::new();
    nm.write(&mut rep, "weitzenbock", s.weight());
    rep.insert("curvature_antisymmetry_max", anti);
    rep.insert("torsion_pi_max", tors);
    Ok(rep)
}

/// Discrete checks of the vector-valued form calculus on the strip with
/// random ξ-valued forms along a holomorphic lift.
///
/// - `star_inner_max`: `⟨β₁, β₂⟩ = *(β₁ ∧ *β₂)` node-wise (pure algebra).
/// - `ibp0_*`, `ibp1_*`: `*d⟨β₀, *β₁⟩ = ⟨d^∇β₀, β₁⟩ − ⟨β₀, δβ₁⟩` for a section
///   and a 1-form, and for a 1-form and a 2-form, with `δ = −*d^∇*`;
///   pointwise and integrated against forms vanishing near the edge.
/// - `dnabla_two_ways_max`: the FD assembly of `d^∇β(∂τ, ∂t)` scaled to a
///   rotated frame against `(∇_{v₁}β)(v₂) − (∇_{v₂}β)(v₁)` from exact derivatives.
pub fn vector_form_calculus_check(chart: &TriadChart, grid: &StripGrid, seed: u64) -> Result<ResidualReport> {
    let m = 2 * chart.n();
    let d = chart.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = MapField::from_fn(chart, *grid, families::holomorphic_lift(chart, 0.2, 1.0, 0.1))?;
    let conn = StandardConnection::new(chart);
    // Smooth synthetic sections: c0 + c1 sin(a τ + b t) per component, times a bump.
    let mut synth = || -> Vec<[f64; 4]> { (0..m).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)]).collect() };
    let (c_s, c_a, c_b, c_f) = (synth(), synth(), synth(), synth());
    let (t0, t1) = (grid.tau0, grid.tau1);
    let pi = std::f64::consts::PI;
    let bump = move |s: f64, t: f64| -> (f64, f64, f64) {
        let x = pi * (s - t0) / (t1 - t0);
        let b = (x.sin() * (pi * t).sin()).powi(2);
        let bs = 2.0 * x.sin() * x.cos() * (pi / (t1 - t0)) * (pi * t).sin().powi(2);
        let bt = 2.0 * (pi * t).sin() * (pi * t).cos() * pi * x.sin().powi(2);
        (b, bs, bt)
    };
    // value and exact partials of one synthetic component
    let eval = move |c: &[f64; 4], s: f64, t: f64| -> (f64, f64, f64) {
        let (b, bs, bt) = bump(s, t);
        let w = c[2] * s + c[3] * t;
        let v = c[0] + c[1] * w.sin();
        let (vs, vt) = (c[1] * c[2] * w.cos(), c[1] * c[3] * w.cos());
        (v * b, vs * b + v * bs, vt * b + v * bt)
    };
    let nodes = grid.nodes();
    let n1 = grid.n + 1;
    let sample = |c: &Vec<[f64; 4]>| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; nodes * m];
        let mut vs = vec![0.0; nodes * m];
        let mut vt = vec![0.0; nodes * m];
        for k in 0..nodes {
            let (s, t) = (grid.tau(k / n1), grid.t(k % n1));
            for q in 0..m {
                let (a, b, cc) = eval(&c[q], s, t);
                v[k * m + q] = a;
                vs[k * m + q] = b;
                vt[k * m + q] = cc;
            }
        }
        (v, vs, vt)
    };
    let (sec, _, _) = sample(&c_s);
    let (bta, bta_s, bta_t) = sample(&c_a);
    let (btb, btb_s, btb_t) = sample(&c_b);
    let (two, _, _) = sample(&c_f);
    let (utau, ut) = grid_derivatives(grid, u.data(), d);
    let om: Vec<(Matrix, Matrix)> = (0..nodes)
        .map(|k| {
            let g = Geom::at(chart, &conn, &u.node_vec(k / n1, k % n1));
            (g.omega_along(&utau[k * d..(k + 1) * d]), g.omega_along(&ut[k * d..(k + 1) * d]))
        })
        .collect();
    let vec_at = |data: &[f64], k: usize| Vector::from_column_slice(&data[k * m..(k + 1) * m]);
    let nabla = |data: &[f64]| -> (Vec<Vector>, Vec<Vector>) {
        let (ds, dt) = grid_derivatives(grid, data, m);
        let a = (0..nodes).map(|k| vec_at(&ds, k) + &om[k].0 * vec_at(data, k)).collect();
        let b = (0..nodes).map(|k| vec_at(&dt, k) + &om[k].1 * vec_at(data, k)).collect();
        (a, b)
    };
    let scalar_d = |vals: &[f64]| grid_derivatives(grid, vals, 1);
    let w = grid.dtau() * grid.dt();
    let mut rep = ResidualReport::new();

    // star/inner identity: β₁ ∧ *β₂ with *β = β_τ dt − β_t dτ
    let mut star: f64 = 0.0;
    for k in 0..nodes {
        let (a_tau, a_t, b_tau, b_t) = (vec_at(&bta, k), vec_at(&btb, k), vec_at(&btb, k), vec_at(&bta, k));
        let inner = a_tau.dot(&b_tau) + a_t.dot(&b_t);
        let (sb_tau, sb_t) = (-&b_t, b_tau.clone());
        let wedge = a_tau.dot(&sb_t) - a_t.dot(&sb_tau);
        star = star.max((inner - wedge).abs());
    }
    rep.insert("star_inner_max", star);

    // k = 0: section s, 1-form β = (bta, btb)
    let (ns_tau, ns_t) = nabla(&sec);
    let (na_tau, _) = nabla(&bta);
    let (_, nb_t) = nabla(&btb);
    let flux_tau: Vec<f64> = (0..nodes).map(|k| vec_at(&sec, k).dot(&vec_at(&bta, k))).collect();
    let flux_t: Vec<f64> = (0..nodes).map(|k| vec_at(&sec, k).dot(&vec_at(&btb, k))).collect();
    let (div_tau, _) = scalar_d(&flux_tau);
    let (_, div_t) = scalar_d(&flux_t);
    let (mut p0, mut l0, mut r0) = (Norm::default(), 0.0, 0.0);
    for k in 0..nodes {
        let dn = ns_tau[k].dot(&vec_at(&bta, k)) + ns_t[k].dot(&vec_at(&btb, k));
        let delta = -(&na_tau[k] + &nb_t[k]);
        let sd = vec_at(&sec, k).dot(&delta);
        p0.add(div_tau[k] + div_t[k] - (dn - sd));
        l0 += w * dn;
        r0 += w * sd;
    }
    p0.write(&mut rep, "ibp0_pointwise", w);
    rep.insert("ibp0_global", (l0 - r0).abs());

    // k = 1: 1-form β = (bta, btb), 2-form f dA
    let (nf_tau, nf_t) = nabla(&two);
    let (_, na_t) = nabla(&bta);
    let (nb_tau, _) = nabla(&btb);
    let g_tau: Vec<f64> = (0..nodes).map(|k| vec_at(&btb, k).dot(&vec_at(&two, k))).collect();
    let g_t: Vec<f64> = (0..nodes).map(|k| vec_at(&bta, k).dot(&vec_at(&two, k))).collect();
    let (dg_tau, _) = scalar_d(&g_tau);
    let (_, dg_t) = scalar_d(&g_t);
    let (mut p1, mut l1, mut r1) = (Norm::default(), 0.0, 0.0);
    for k in 0..nodes {
        let db = &nb_tau[k] - &na_t[k];
        let lhs = db.dot(&vec_at(&two, k));
        let rhs = vec_at(&bta, k).dot(&nf_t[k]) - vec_at(&btb, k).dot(&nf_tau[k]);
        p1.add(dg_tau[k] - dg_t[k] - (lhs - rhs));
        l1 += w * lhs;
        r1 += w * rhs;
    }
    p1.write(&mut rep, "ibp1_pointwise", w);
    rep.insert("ibp1_global", (l1 - r1).abs());

    // d^∇β two ways on a rotated frame
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let v1 = [theta.cos(), theta.sin()];
    let v2 = [-1.3 * theta.sin(), 1.3 * theta.cos() + 0.2];
    let det = v1[0] * v2[1] - v1[1] * v2[0];
    let mut two_ways: f64 = 0.0;
    for k in 0..nodes {
        let (i, j) = (k / n1, k % n1);
        if i == 0 || j == 0 || i == grid.m || j == grid.n {
            continue;
        }
        let fd = (&nb_tau[k] - &na_t[k]) * det;
        let grad = |a: usize, b: usize| -> Vector {
            // (∇_{∂a} β)(∂b) from exact partials plus ω
            let (src, ds) = if b == 0 { (&bta, if a == 0 { &bta_s } else { &bta_t }) } else { (&btb, if a == 0 { &btb_s } else { &btb_t }) };
            let w = if a == 0 { &om[k].0 } else { &om[k].1 };
            vec_at(ds, k) + w * vec_at(src, k)
        };
        let mut exact = Vector::zeros(m);
        for a in 0..2 {
            for b in 0..2 {
                exact += (grad(a, b) - grad(b, a)) * (v1[a] * v2[b]);
            }
        }
        two_ways = two_ways.max((fd - exact).amax());
    }
    rep.insert("dnabla_two_ways_max", two_ways);
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fundamental,
    Dulambda,
    Isothermal,
    Weitzenbock,
    Calculus,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Fundamental, Suite::Dulambda, Suite::Isothermal, Suite::Weitzenbock, Suite::Calculus];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Fundamental => "fundamental",
            Suite::Dulambda => "dulambda",
            Suite::Isothermal => "isothermal",
            Suite::Weitzenbock => "weitzenbock",
            Suite::Calculus => "calculus",
        }
    }

    /// Minimum refinement order expected of the suite's primary residuals.
    pub fn target_order(&self) -> f64 {
        match self {
            Suite::Fundamental | Suite::Weitzenbock => 0.9,
            _ => 1.8,
        }
    }

    /// Keys whose refinement order is checked.
    pub fn primary_keys(&self) -> &'static [&'static str] {
        match self {
            Suite::Fundamental => &["holomorphic.fundamental_l2", "linear_z.fundamental_l2"],
            Suite::Dulambda => &["holomorphic.dulambda_l2", "basic_lift.dulambda_l2", "linear_z.dulambda_l2"],
            Suite::Isothermal => &["holomorphic.dbar_alpha_derived_l2", "holomorphic.zeta_derived_l2", "constant.dbar_alpha_derived_l2"],
            Suite::Weitzenbock => &["holomorphic.weitzenbock_l2", "constant.weitzenbock_l2"],
            Suite::Calculus => &["calculus.ibp0_pointwise_l2", "calculus.ibp1_pointwise_l2", "calculus.dnabla_two_ways_max"],
        }
    }
}

impl FromStr for Suite {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| CoreError::InvalidParameter { name: "suite", reason: format!("unknown suite '{s}'") })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub report: ResidualReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub suite: String,
    pub rows: Vec<ConvergenceRow>,
    /// `log2(r_k / r_{k+1})` per key between consecutive rows.
    pub orders: BTreeMap<String, Vec<f64>>,
}

/// Residuals below this are treated as exact: no order is measurable from roundoff.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

impl ConvergenceTable {
    pub fn from_rows(suite: &str, rows: Vec<ConvergenceRow>) -> Self {
        let mut orders = BTreeMap::new();
        if let Some(first) = rows.first() {
            for key in first.report.values.keys() {
                let seq: Vec<f64> = rows.windows(2).map(|w| order_estimate(w[0].report.get(key).unwrap_or(f64::NAN), w[1].report.get(key).unwrap_or(f64::NAN))).collect();
                orders.insert(key.clone(), seq);
            }
        }
        Self { suite: suite.to_string(), rows, orders }
    }

    /// Order between the last two rows.
    pub fn final_order(&self, key: &str) -> Option<f64> {
        self.orders.get(key).and_then(|v| v.last().copied())
    }

    pub fn final_value(&self, key: &str) -> Option<f64> {
        self.rows.last().and_then(|r| r.report.get(key))
    }

    /// A key passes if its last-step order meets `target`, or if it already
    /// sits at roundoff on the finest grid.
    pub fn key_passes(&self, key: &str, target: f64) -> bool {
        match (self.final_value(key), self.final_order(key)) {
            (Some(v), _) if v <= ROUNDOFF_FLOOR => true,
            (_, Some(o)) => o >= target,
            _ => false,
        }
    }
}

/// Runs `eval` on `levels` successively halved grids starting at `base`.
pub fn convergence_table<F>(suite: &str, base: StripGrid, levels: usize, eval: F) -> Result<ConvergenceTable>
where
    F: Fn(&StripGrid) -> Result<ResidualReport>,
{
    let mut rows = Vec::with_capacity(levels);
    let mut g = base;
    for _ in 0..levels.max(1) {
        rows.push(ConvergenceRow { m: g.m, n: g.n, h: g.spacing(), report: eval(&g)? });
        g = g.refined();
    }
    Ok(ConvergenceTable::from_rows(suite, rows))
}

/// Evaluates a suite on its exact families; keys are prefixed by family name.
pub fn evaluate_suite(suite: Suite, grid: &StripGrid) -> Result<ResidualReport> {
    let ch = TriadChart::standard(1)?;
    let zero = HamiltonianSpec::zero();
    let hc = HamiltonianSpec::Constant { c: 0.5 };
    let hz = HamiltonianSpec::LinearZ;
    let iso = |h: &HamiltonianSpec| ContactIsotopy::new(&ch, h, 1e-3);
    let opts = ValidatorOptions::default();
    let hol = MapField::from_fn(&ch, *grid, families::holomorphic_lift(&ch, 0.3, 1.0, 0.2))?;
    let lz = MapField::from_fn(&ch, *grid, families::linear_z_cr_family(&ch, 0.5, 1.3, |s, t| 0.3 * s * t + 0.2 * (s + t).sin()))?;
    let mut rep = ResidualReport::new();
    match suite {
        Suite::Fundamental => {
            rep.merge_prefixed("holomorphic.", &fundamental_equation_residual(&ch, &zero, &iso(&zero), &hol, &opts)?);
            rep.merge_prefixed("constant.", &fundamental_equation_residual(&ch, &hc, &iso(&hc), &hol, &opts)?);
            rep.merge_prefixed("linear_z.", &fundamental_equation_residual(&ch, &hz, &iso(&hz), &lz, &opts)?);
        }
        Suite::Dulambda => {
            let basic = MapField::from_fn(&ch, *grid, families::basic_lift(&ch, |s: f64, t: f64| s.exp() * t.sin() + 0.5 * t))?;
            rep.merge_prefixed("holomorphic.", &du_lambda_h_residual(&ch, &zero, &iso(&zero), &hol, &opts)?);
            rep.merge_prefixed("basic_lift.", &du_lambda_h_residual(&ch, &zero, &iso(&zero), &basic, &opts)?);
            rep.merge_prefixed("linear_z.", &du_lambda_h_residual(&ch, &hz, &iso(&hz), &lz, &opts)?);
        }
        Suite::Isothermal => {
            rep.merge_prefixed("holomorphic.", &isothermal_system_residual(&ch, &zero, &iso(&zero), &hol, &opts)?);
            rep.merge_prefixed("constant.", &isothermal_system_residual(&ch, &hc, &iso(&hc), &hol, &opts)?);
            let edge = MapField::from_fn(&ch, *grid, families::legendrian_edge_solution(&ch, 0.4, 1.0, 0.3))?;
            rep.merge_prefixed("legendrian_edge.", &isothermal_system_residual(&ch, &zero, &iso(&zero), &edge, &opts)?);
            rep.insert("legendrian_edge.boundary_imag_t0_max", boundary_imag_row(&ch, &zero, &edge, 0)?);
        }
        Suite::Weitzenbock => {
            rep.merge_prefixed("holomorphic.", &weitzenbock_laplacian_residual(&ch, &zero, &iso(&zero), &hol, &opts)?);
            rep.merge_prefixed("constant.", &weitzenbock_laplacian_residual(&ch, &hc, &iso(&hc), &hol, &opts)?);
        }
        Suite::Calculus => {
            rep.merge_prefixed("calculus.", &vector_form_calculus_check(&ch, grid, 7)?);
        }
    }
    Ok(rep)
}

/// `max |λ_H(u_τ)|` along row `t = t_j`.
pub fn boundary_imag_row(chart: &TriadChart, h: &HamiltonianSpec, u: &MapField, j: usize) -> Result<f64> {
    let f = assemble_dh(chart, h, u)?;
    let g = u.grid();
    Ok((0..=g.m).fold(0.0f64, |a, i| a.max(f.lam_tau[g.index(i, j)].abs())))
}

/// Default base grid for the suites.
pub fn suite_base_grid() -> StripGrid {
    StripGrid { tau0: -1.0, tau1: 1.0, m: 32, n: 16 }
}

pub fn run_suite(suite: Suite, base: StripGrid, levels: usize) -> Result<ConvergenceTable> {
    convergence_table(suite.name(), base, levels, |g| evaluate_suite(suite, g))
}
