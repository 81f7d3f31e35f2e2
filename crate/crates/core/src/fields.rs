//! Strip maps `u : [τ0, τ1] × [0, 1] → ℝ^{2n+1}` sampled on a uniform grid and
//! the fields the perturbed instanton equations are written in.
//!
//! Node `(i, j)` sits at `(τ0 + i Δτ, j Δt)`; node data is stored row-major in
//! `i`, then `j`, then coordinate. The domain one-form is `dt` everywhere, so
//! `d_H u(∂τ) = u_τ` and `d_H u(∂t) = u_t − X_H(t, u)`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_value, coordinate_header, csv_err, PathGamma};
use crate::dynamics::{contact_vector_field_into, ContactIsotopy};
use crate::error::{check_dim, CoreError, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::report::ResidualReport;
use crate::triad::{LegendrianSpec, TriadChart, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripGrid {
    pub tau0: f64,
    pub tau1: f64,
    /// Intervals in τ.
    pub m: usize,
    /// Intervals in t.
    pub n: usize,
}

impl StripGrid {
    pub fn new(tau0: f64, tau1: f64, m: usize, n: usize) -> Result<Self> {
        let g = Self { tau0, tau1, m, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > self.tau0) || !self.tau0.is_finite() || !self.tau1.is_finite() {
            return Err(CoreError::InvalidParameter { name: "grid.tau", reason: format!("need tau0 < tau1, got [{}, {}]", self.tau0, self.tau1) });
        }
        if self.m < 4 || self.n < 4 {
            return Err(CoreError::InvalidParameter { name: "grid", reason: format!("need at least 4 intervals per direction, got {}x{}", self.m, self.n) });
        }
        Ok(())
    }

    pub fn dtau(&self) -> f64 {
        (self.tau1 - self.tau0) / self.m as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.tau0 + i as f64 * self.dtau()
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn nodes(&self) -> usize {
        (self.m + 1) * (self.n + 1)
    }

    pub fn cells(&self) -> usize {
        self.m * self.n
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    /// Largest mesh width.
    pub fn spacing(&self) -> f64 {
        self.dtau().max(self.dt())
    }

    /// Both widths halved.
    pub fn refined(&self) -> Self {
        Self { m: 2 * self.m, n: 2 * self.n, ..*self }
    }

    /// Row index of the slice `τ = s`, snapped to the nearest row.
    pub fn row_of(&self, s: f64) -> Result<usize> {
        if !(s >= self.tau0 - 1e-12 && s <= self.tau1 + 1e-12) {
            return Err(CoreError::SliceOutsideGrid { s, lo: self.tau0, hi: self.tau1 });
        }
        Ok((((s - self.tau0) / self.dtau()).round() as usize).min(self.m))
    }
}

/// `(position, weight)` of the derivative stencil at position `k` of a line
/// of `len >= 4` samples. The one-sided end stencils have leading error
/// `h² f‴/6`, the same as the centred one, so the error field is smooth
/// across the first interior node and differences of derivatives stay
/// second order up to the edge.
pub fn derivative_stencil(k: usize, len: usize, h: f64) -> [(usize, f64); 4] {
    let c = 1.0 / h;
    if k == 0 {
        [(0, -2.0 * c), (1, 3.5 * c), (2, -2.0 * c), (3, 0.5 * c)]
    } else if k == len - 1 {
        [(len - 1, 2.0 * c), (len - 2, -3.5 * c), (len - 3, 2.0 * c), (len - 4, -0.5 * c)]
    } else {
        [(k + 1, 0.5 * c), (k - 1, -0.5 * c), (k, 0.0), (k, 0.0)]
    }
}

#[inline]
fn line_deriv(data: &[f64], base: usize, stride: usize, k: usize, len: usize, h: f64) -> f64 {
    derivative_stencil(k, len, h).iter().map(|&(q, w)| w * data[base + q * stride]).sum()
}

/// Second-order `∂τ` and `∂t` of a node field with `comps` values per node.
pub fn grid_derivatives(grid: &StripGrid, data: &[f64], comps: usize) -> (Vec<f64>, Vec<f64>) {
    let (m1, n1) = (grid.m + 1, grid.n + 1);
    let mut dtau = vec![0.0; data.len()];
    let mut dt = vec![0.0; data.len()];
    dtau.par_chunks_mut(n1 * comps).zip(dt.par_chunks_mut(n1 * comps)).enumerate().for_each(|(i, (a, b))| {
        for j in 0..n1 {
            for c in 0..comps {
                a[j * comps + c] = line_deriv(data, j * comps + c, n1 * comps, i, m1, grid.dtau());
                b[j * comps + c] = line_deriv(data, i * n1 * comps + c, comps, j, n1, grid.dt());
            }
        }
    });
    (dtau, dt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapField {
    grid: StripGrid,
    dim: usize,
    data: Vec<f64>,
    r0: Option<LegendrianSpec>,
    r1: Option<LegendrianSpec>,
}

impl MapField {
    pub fn new(chart: &TriadChart, grid: StripGrid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_dim(grid.nodes() * chart.dim(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        Ok(Self { grid, dim: chart.dim(), data, r0: None, r1: None })
    }

    pub fn from_fn(chart: &TriadChart, grid: StripGrid, f: impl Fn(f64, f64) -> Vector + Sync) -> Result<Self> {
        let d = chart.dim();
        let mut data = vec![0.0; grid.nodes() * d];
        data.par_chunks_mut(d).enumerate().for_each(|(k, out)| {
            let (i, j) = (k / (grid.n + 1), k % (grid.n + 1));
            let v = f(grid.tau(i), grid.t(j));
            for c in 0..d {
                out[c] = if c < v.len() { v[c] } else { f64::NAN };
            }
        });
        Self::new(chart, grid, data)
    }

    /// Attaches `R0` (at `t = 0`) and `R1` (at `t = 1`), checking the boundary rows.
    pub fn with_tags(mut self, r0: LegendrianSpec, r1: LegendrianSpec, tol: f64) -> Result<Self> {
        let dist = self.boundary_distance(&r0, &r1);
        if !(dist <= tol) {
            return Err(CoreError::Precondition { what: "boundary distance to Legendrian".into(), value: dist, threshold: tol });
        }
        self.r0 = Some(r0);
        self.r1 = Some(r1);
        Ok(self)
    }

    pub fn boundary_distance(&self, r0: &LegendrianSpec, r1: &LegendrianSpec) -> f64 {
        (0..=self.grid.m)
            .map(|i| r0.distance(&self.node_vec(i, 0)).max(r1.distance(&self.node_vec(i, self.grid.n))))
            .fold(0.0, f64::max)
    }

    pub fn tags(&self) -> Option<(&LegendrianSpec, &LegendrianSpec)> {
        self.r0.as_ref().zip(self.r1.as_ref())
    }

    pub fn set_tags_unchecked(&mut self, r0: LegendrianSpec, r1: LegendrianSpec) {
        self.r0 = Some(r0);
        self.r1 = Some(r1);
    }

    pub fn grid(&self) -> &StripGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, i: usize, j: usize) -> &[f64] {
        let k = self.grid.index(i, j) * self.dim;
        &self.data[k..k + self.dim]
    }

    pub fn node_vec(&self, i: usize, j: usize) -> Vector {
        Vector::from_column_slice(self.node(i, j))
    }

    /// The `t`-slice at row `i` as a path.
    pub fn slice(&self, chart: &TriadChart, i: usize) -> Result<PathGamma> {
        PathGamma::new(chart, (0..=self.grid.n).map(|j| self.node_vec(i, j)).collect())
    }

    pub fn max_abs_diff(&self, other: &MapField) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-node pair of vectors: the values of a one-form on `∂τ` and `∂t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneFormField {
    pub dim: usize,
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
}

impl OneFormField {
    pub fn at(&self, node: usize) -> (&[f64], &[f64]) {
        let r = node * self.dim..(node + 1) * self.dim;
        (&self.tau[r.clone()], &self.t[r])
    }
}

/// `d_H u`, its ξ-part, and `u*λ_H` as scalar pairs.
#[derive(Clone, Debug)]
pub struct DhField {
    pub grid: StripGrid,
    pub dh: OneFormField,
    pub pi: OneFormField,
    /// `λ(u_τ)` per node.
    pub lam_tau: Vec<f64>,
    /// `λ(u_t) + H` per node.
    pub lam_t: Vec<f64>,
}

pub fn assemble_dh(chart: &TriadChart, h: &HamiltonianSpec, u: &MapField) -> Result<DhField> {
    check_dim(chart.dim(), u.dim())?;
    let grid = *u.grid();
    let d = chart.dim();
    let n = chart.n();
    let (mut dtau, mut dt) = grid_derivatives(&grid, u.data(), d);
    let nodes = grid.nodes();
    let mut pi_tau = vec![0.0; nodes * d];
    let mut pi_t = vec![0.0; nodes * d];
    let mut lam_tau = vec![0.0; nodes];
    let mut lam_t = vec![0.0; nodes];
    dtau.par_chunks_mut(d)
        .zip(dt.par_chunks_mut(d))
        .zip(pi_tau.par_chunks_mut(d).zip(pi_t.par_chunks_mut(d)))
        .zip(lam_tau.par_iter_mut().zip(lam_t.par_iter_mut()))
        .enumerate()
        .for_each_init(
            || (vec![0.0; d], vec![0.0; d]),
            |(grad, x), (k, (((a, b), (pa, pb)), (la, lb)))| {
                let p = &u.data()[k * d..(k + 1) * d];
                let t = grid.t(k % (grid.n + 1));
                h.gradient_into(t, p, grad);
                contact_vector_field_into(n, p, h.value(t, p), grad, x);
                for c in 0..d {
                    b[c] -= x[c];
                }
                *la = project_into(n, p, a, pa);
                *lb = project_into(n, p, b, pb);
            },
        );
    Ok(DhField {
        grid,
        dh: OneFormField { dim: d, tau: dtau, t: dt },
        pi: OneFormField { dim: d, tau: pi_tau, t: pi_t },
        lam_tau,
        lam_t,
    })
}

/// Writes `Πv` into `out` and returns `λ(v)`.
#[inline]
pub(crate) fn project_into(n: usize, p: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
    let mut ydx = 0.0;
    for i in 0..n {
        ydx += p[n + i] * v[i];
        out[i] = v[i];
        out[n + i] = v[n + i];
    }
    out[2 * n] = ydx;
    v[2 * n] - ydx
}

/// `|πv|²` in the triad metric for a vector already in ξ.
#[inline]
pub(crate) fn xi_norm_sq(n: usize, v: &[f64]) -> f64 {
    v[..2 * n].iter().map(|c| c * c).sum()
}

/// Largest node-wise defect of `|d_H u|² = |d_H^π u|² + (u*λ_H)²` over both slots.
pub fn decomposition_residual(chart: &TriadChart, u: &MapField, f: &DhField) -> f64 {
    let d = chart.dim();
    (0..f.grid.nodes())
        .map(|k| {
            let p = Vector::from_column_slice(&u.data()[k * d..(k + 1) * d]);
            let g = chart.metric(&p);
            let (a, b) = f.dh.at(k);
            let (pa, pb) = f.pi.at(k);
            let a = Vector::from_column_slice(a);
            let b = Vector::from_column_slice(b);
            let ra = (a.dot(&(&g * &a)) - xi_norm_sq(chart.n(), pa) - f.lam_tau[k].powi(2)).abs();
            let rb = (b.dot(&(&g * &b)) - xi_norm_sq(chart.n(), pb) - f.lam_t[k].powi(2)).abs();
            ra.max(rb) / (1.0 + a.norm_squared() + b.norm_squared())
        })
        .fold(0.0, f64::max)
}

/// `g_{H,u}` at every node.
pub fn g_field(iso: &ContactIsotopy, u: &MapField) -> Result<Vec<f64>> {
    let grid = *u.grid();
    (0..grid.nodes())
        .into_par_iter()
        .map(|k| iso.g_hu(grid.t(k % (grid.n + 1)), u.node(k / (grid.n + 1), k % (grid.n + 1))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FieldResidual {
    /// Node values (CR, `2n` frame components) or cell values (closedness).
    pub values: Vec<f64>,
    pub l2: f64,
    pub max: f64,
}

/// `∂̄_H^π u (∂τ) = ½(d_H^π u(∂τ) + J d_H^π u(∂t))` in frame components.
pub fn cr_residual_from(n: usize, f: &DhField) -> FieldResidual {
    let d = 2 * n + 1;
    let nodes = f.grid.nodes();
    let mut values = vec![0.0; nodes * 2 * n];
    values.par_chunks_mut(2 * n).enumerate().for_each(|(k, out)| {
        let a = &f.pi.tau[k * d..];
        let b = &f.pi.t[k * d..];
        for i in 0..n {
            out[i] = 0.5 * (a[i] - b[n + i]);
            out[n + i] = 0.5 * (a[n + i] + b[i]);
        }
    });
    let w = f.grid.dtau() * f.grid.dt();
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for c in values.chunks(2 * n) {
        let s: f64 = c.iter().map(|x| x * x).sum();
        sum += s;
        max = if s.is_nan() { f64::NAN } else { max.max(s.sqrt()) };
    }
    FieldResidual { values, l2: (w * sum).sqrt(), max }
}

pub fn cr_residual(chart: &TriadChart, h: &HamiltonianSpec, u: &MapField) -> Result<FieldResidual> {
    Ok(cr_residual_from(chart.n(), &assemble_dh(chart, h, u)?))
}

/// Cell values of `d(e^G (u*λ_H)∘j)(∂τ, ∂t)` from node weights `g`.
pub fn closedness_residual_from(f: &DhField, g: &[f64]) -> FieldResidual {
    let grid = f.grid;
    let n1 = grid.n + 1;
    let bt: Vec<f64> = (0..grid.nodes()).map(|k| -g[k].exp() * f.lam_tau[k]).collect();
    let bs: Vec<f64> = (0..grid.nodes()).map(|k| g[k].exp() * f.lam_t[k]).collect();
    let (ht, hs) = (grid.dtau(), grid.dt());
    let values: Vec<f64> = (0..grid.cells())
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / grid.n, c % grid.n);
            let k00 = i * n1 + j;
            let (k01, k10, k11) = (k00 + 1, k00 + n1, k00 + n1 + 1);
            (bt[k10] + bt[k11] - bt[k00] - bt[k01]) / (2.0 * ht) - (bs[k01] + bs[k11] - bs[k00] - bs[k10]) / (2.0 * hs)
        })
        .collect();
    let w = ht * hs;
    let l2 = (w * values.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let max = values.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    FieldResidual { values, l2, max }
}

pub fn closedness_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<FieldResidual> {
    let f = assemble_dh(chart, h, u)?;
    Ok(closedness_residual_from(&f, &g_field(iso, u)?))
}

/// `{cr_l2, cr_max, closed_l2, closed_max}` for the perturbed system.
pub fn equation_report(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<ResidualReport> {
    let f = assemble_dh(chart, h, u)?;
    let cr = cr_residual_from(chart.n(), &f);
    let cl = closedness_residual_from(&f, &g_field(iso, u)?);
    Ok(ResidualReport::new()
        .with("cr_l2", cr.l2)
        .with("cr_max", cr.max)
        .with("closed_l2", cl.l2)
        .with("closed_max", cl.max))
}

/// `½ e^G |d_H^π u|²` at every node.
pub fn energy_density(n: usize, f: &DhField, g: &[f64]) -> Vec<f64> {
    let d = 2 * n + 1;
    (0..f.grid.nodes())
        .map(|k| 0.5 * g[k].exp() * (xi_norm_sq(n, &f.pi.tau[k * d..]) + xi_norm_sq(n, &f.pi.t[k * d..])))
        .collect()
}

/// Cell-averaged energy over rows `[i0, i1]`.
pub fn energy_between(grid: &StripGrid, density: &[f64], i0: usize, i1: usize) -> f64 {
    let n1 = grid.n + 1;
    let mut s = 0.0;
    for i in i0..i1 {
        for j in 0..grid.n {
            let k = i * n1 + j;
            s += density[k] + density[k + 1] + density[k + n1] + density[k + n1 + 1];
        }
    }
    0.25 * s * grid.dtau() * grid.dt()
}

pub fn pi_energy(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<f64> {
    let f = assemble_dh(chart, h, u)?;
    let dens = energy_density(chart.n(), &f, &g_field(iso, u)?);
    Ok(energy_between(&f.grid, &dens, 0, f.grid.m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeDirection {
    /// `ū = (φ^t)^{-1} u`.
    Forward,
    /// `u = φ^t ū`.
    Inverse,
}

/// Node-wise gauge transform; Legendrian tags follow through `ψ^1` at `t = 0`.
pub fn gauge_transform(iso: &ContactIsotopy, u: &MapField, dir: GaugeDirection) -> Result<MapField> {
    let grid = *u.grid();
    let d = u.dim();
    let pts: Vec<Vector> = (0..grid.nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (grid.n + 1), k % (grid.n + 1));
            let t = grid.t(j);
            let p = u.node(i, j);
            match dir {
                GaugeDirection::Forward => iso.phi_inverse(t, p),
                GaugeDirection::Inverse => iso.phi(t, p),
            }
            .map(|s| s.point)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(grid.nodes() * d);
    for p in &pts {
        data.extend_from_slice(p.as_slice());
    }
    let mut out = MapField::new(iso.chart(), grid, data)?;
    if let Some((r0, r1)) = u.tags() {
        let chart = iso.chart();
        let (s0, s1) = match dir {
            GaugeDirection::Forward => (0.0, 1.0),
            GaugeDirection::Inverse => (1.0, 0.0),
        };
        let m0 = r0.map_affine(chart, |p: &Vector| iso.flow(p.as_slice(), s0, s1).map(|s| s.point))?;
        out.set_tags_unchecked(m0, r1.clone());
    }
    Ok(out)
}

/// Residual reports of `u` for the perturbed system and of `ū` for the unperturbed one.
#[derive(Clone, Debug)]
pub struct GaugeEquivalence {
    pub perturbed: ResidualReport,
    pub unperturbed: ResidualReport,
    pub transformed: MapField,
}

pub fn gauge_equivalence_check(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<GaugeEquivalence> {
    let bar = gauge_transform(iso, u, GaugeDirection::Forward)?;
    let zero = HamiltonianSpec::zero();
    let iso0 = ContactIsotopy::new(chart, &zero, iso.dt());
    Ok(GaugeEquivalence {
        perturbed: equation_report(chart, h, iso, u)?,
        unperturbed: equation_report(chart, &zero, &iso0, &bar)?,
        transformed: bar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripEnd {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCharge {
    /// τ of the grid row actually used.
    pub s: f64,
    pub t_h: f64,
    pub q_h: f64,
}

/// Slice integrals `∫ e^G (λ(u_t) + H) dt` and `−∫ e^G λ(u_τ) dt` at row `i`.
pub fn slice_integrals(f: &DhField, g: &[f64], i: usize) -> (f64, f64) {
    let n1 = f.grid.n + 1;
    let a: Vec<f64> = (0..n1).map(|j| g[i * n1 + j].exp() * f.lam_t[i * n1 + j]).collect();
    let q: Vec<f64> = (0..n1).map(|j| -g[i * n1 + j].exp() * f.lam_tau[i * n1 + j]).collect();
    (crate::action::trapezoid(&a), crate::action::trapezoid(&q))
}

/// `T_H` and `Q_H` at the slice `τ = s`; the energy term runs toward the chosen end.
pub fn asymptotic_action_charge(
    chart: &TriadChart,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    u: &MapField,
    s: f64,
    end: StripEnd,
) -> Result<AsymptoticCharge> {
    let grid = *u.grid();
    let i = grid.row_of(s)?;
    let f = assemble_dh(chart, h, u)?;
    let g = g_field(iso, u)?;
    let dens = energy_density(chart.n(), &f, &g);
    let (a, q) = slice_integrals(&f, &g, i);
    let t_h = match end {
        StripEnd::Positive => a + energy_between(&grid, &dens, i, grid.m),
        StripEnd::Negative => a - energy_between(&grid, &dens, 0, i),
    };
    Ok(AsymptoticCharge { s: grid.tau(i), t_h, q_h: q })
}

/// `max − min` of `Q_H` over the rows in `[s0, s1]`.
pub fn charge_drift(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField, s0: f64, s1: f64) -> Result<f64> {
    let grid = *u.grid();
    let (i0, i1) = (grid.row_of(s0)?, grid.row_of(s1)?);
    let f = assemble_dh(chart, h, u)?;
    let g = g_field(iso, u)?;
    let qs: Vec<f64> = (i0.min(i1)..=i0.max(i1)).map(|i| slice_integrals(&f, &g, i).1).collect();
    let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = qs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(hi - lo)
}

/// `𝒜_H` of the last slice minus that of the first.
pub fn action_gap(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, u: &MapField) -> Result<f64> {
    let plus = action_value(chart, h, iso, &u.slice(chart, u.grid().m)?)?;
    let minus = action_value(chart, h, iso, &u.slice(chart, 0)?)?;
    Ok(plus - minus)
}

/// Writes `tau, t, x1.., y1.., z` rows in node order.
pub fn write_field_csv<W: Write>(chart: &TriadChart, u: &MapField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coordinate_header(chart, &["tau", "t"])).map_err(csv_err)?;
    let g = u.grid();
    for i in 0..=g.m {
        for j in 0..=g.n {
            let mut row = vec![g.tau(i).to_string(), g.t(j).to_string()];
            row.extend(u.node(i, j).iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`] on a known grid.
pub fn read_field_csv<R: Read>(chart: &TriadChart, grid: StripGrid, input: R) -> Result<MapField> {
    let mut r = csv::Reader::from_reader(input);
    let d = chart.dim();
    let mut data = Vec::with_capacity(grid.nodes() * d);
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d + 2 {
            return Err(CoreError::Parse(format!("row {k}: expected {} columns, got {}", d + 2, rec.len())));
        }
        for s in rec.iter().skip(2) {
            data.push(s.trim().parse::<f64>().map_err(|e| CoreError::Parse(format!("row {k}: {e}")))?);
        }
    }
    MapField::new(chart, grid, data)
}

const DUMP_MAGIC: &[u8; 4] = b"CTFD";

/// Little-endian dump: magic, `m`, `n`, `dim` as u64, `tau0`, `tau1`, then node data.
pub fn write_field_binary<W: Write>(u: &MapField, mut out: W) -> Result<()> {
    let g = u.grid();
    out.write_all(DUMP_MAGIC)?;
    for v in [g.m as u64, g.n as u64, u.dim() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [g.tau0, g.tau1].iter().chain(u.data()) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_binary<R: Read>(chart: &TriadChart, mut input: R) -> Result<MapField> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(CoreError::Parse("not a field dump".into()));
    }
    let mut b8 = [0u8; 8];
    let mut ints = [0u64; 3];
    for v in ints.iter_mut() {
        input.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8);
    }
    let mut floats = |k: usize| -> Result<Vec<f64>> {
        (0..k)
            .map(|_| {
                input.read_exact(&mut b8)?;
                Ok(f64::from_le_bytes(b8))
            })
            .collect()
    };
    let taus = floats(2)?;
    check_dim(chart.dim(), ints[2] as usize)?;
    let grid = StripGrid::new(taus[0], taus[1], ints[0] as usize, ints[1] as usize)?;
    let data = floats(grid.nodes() * chart.dim())?;
    MapField::new(chart, grid, data)
}
