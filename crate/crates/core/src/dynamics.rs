//! Contact Hamiltonian fields, their flows and conformal exponents.
//!
//! With the sign convention `λ(X_H) = −H` and `X_H ⌟ dλ = dH − R[H] λ`, the
//! field in the standard chart is
//! `X_{x_i} = H_{y_i}`, `X_{y_i} = −(H_{x_i} + y_i H_z)`, `X_z = −H + Σ y_i H_{y_i}`,
//! and `ℒ_{X_H} λ = −R[H] λ`, so the conformal exponent of the flow obeys
//! `ġ = −R[H]` along trajectories.

use rayon::prelude::*;

use crate::action::{critical_residual, PathGamma};
use crate::error::{CoreError, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::triad::{Matrix, TangentVec, TriadChart, TriadPoint, Vector};

/// `X` with `λ(X) = −h` and `X ⌟ dλ = dh − dh(R) λ`, from a value and differential.
pub fn contact_vector_field_into(n: usize, p: &[f64], h: f64, grad: &[f64], out: &mut [f64]) {
    let hz = grad[2 * n];
    let mut z = -h;
    for i in 0..n {
        let y = p[n + i];
        out[i] = grad[n + i];
        out[n + i] = -(grad[i] + y * hz);
        z += y * grad[n + i];
    }
    out[2 * n] = z;
}

pub fn xh(chart: &TriadChart, h: &HamiltonianSpec, t: f64, p: &[f64]) -> Vector {
    let d = chart.dim();
    let mut grad = vec![0.0; d];
    h.gradient_into(t, p, &mut grad);
    let mut out = Vector::zeros(d);
    contact_vector_field_into(chart.n(), p, h.value(t, p), &grad, out.as_mut_slice());
    out
}

pub fn hamiltonian_vector_field(chart: &TriadChart, h: &HamiltonianSpec, t: f64, p: &TriadPoint) -> Result<TangentVec> {
    chart.check_point(p)?;
    let x = xh(chart, h, t, p.coords.as_slice());
    if x.iter().any(|c| !c.is_finite()) {
        return Err(CoreError::NonFinite);
    }
    TangentVec::new(p.clone(), x)
}

/// Solves the defining equations of `X_H` as a linear system.
pub fn hamiltonian_vector_field_by_solve(chart: &TriadChart, h: &HamiltonianSpec, t: f64, p: &TriadPoint) -> Result<Vector> {
    chart.check_point(p)?;
    let d = chart.dim();
    let q = &p.coords;
    let lam = chart.lambda_covector(q);
    let dh = h.gradient(t, q.as_slice());
    let rh = h.reeb_derivative(t, q.as_slice());
    let mut a = Matrix::zeros(d + 1, d);
    let mut b = Vector::zeros(d + 1);
    for j in 0..d {
        a[(0, j)] = lam[j];
    }
    b[0] = -h.value(t, q.as_slice());
    for k in 0..d {
        let mut ek = Vector::zeros(d);
        ek[k] = 1.0;
        for j in 0..d {
            let mut ej = Vector::zeros(d);
            ej[j] = 1.0;
            a[(k + 1, j)] = chart.dlambda(&ej, &ek);
        }
        b[k + 1] = dh[k] - rh * lam[k];
    }
    let svd = a.svd(true, true);
    if svd.singular_values.min() < 1e-12 {
        return Err(CoreError::Singular("contact Hamiltonian field"));
    }
    svd.solve(&b, 1e-14).map_err(|_| CoreError::Singular("contact Hamiltonian field"))
}

/// `∂X_H/∂p` from the gradient and Hessian of `H`.
pub fn xh_jacobian(chart: &TriadChart, h: &HamiltonianSpec, t: f64, p: &[f64]) -> Matrix {
    let n = chart.n();
    let d = chart.dim();
    let g = h.gradient(t, p);
    let hs = h.hessian(t, p);
    let hz = g[2 * n];
    let mut m = Matrix::zeros(d, d);
    for b in 0..d {
        let mut zb = -g[b];
        for i in 0..n {
            let y = p[n + i];
            let dy = if b == n + i { 1.0 } else { 0.0 };
            m[(i, b)] = hs[(n + i, b)];
            m[(n + i, b)] = -(hs[(i, b)] + dy * hz + y * hs[(2 * n, b)]);
            zb += dy * g[n + i] + y * hs[(n + i, b)];
        }
        m[(2 * n, b)] = zb;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub point: Vector,
    /// Conformal exponent of the time-`s0 → s1` map at the initial point.
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowVariation {
    pub point: Vector,
    pub g: f64,
    pub dphi: Matrix,
    pub dg: Vector,
}

/// Flow of a contact Hamiltonian, re-integrated on demand by fixed-step RK4.
#[derive(Clone, Debug)]
pub struct ContactIsotopy {
    chart: TriadChart,
    h: HamiltonianSpec,
    dt: f64,
    blowup: f64,
}

pub fn integrate_isotopy(chart: &TriadChart, h: &HamiltonianSpec, steps: usize) -> Result<ContactIsotopy> {
    if steps == 0 {
        return Err(CoreError::InvalidParameter { name: "steps", reason: "must be at least 1".into() });
    }
    Ok(ContactIsotopy::new(chart, h, 1.0 / steps as f64))
}

impl ContactIsotopy {
    pub fn new(chart: &TriadChart, h: &HamiltonianSpec, dt: f64) -> Self {
        Self { chart: chart.clone(), h: h.clone(), dt, blowup: 1e8 }
    }

    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.blowup = bound;
        self
    }

    pub fn chart(&self) -> &TriadChart {
        &self.chart
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let steps = (1.0 / self.dt).round() as usize;
        (0..=steps).map(|k| k as f64 / steps as f64).collect()
    }

    fn substeps(&self, s0: f64, s1: f64) -> usize {
        let span = (s1 - s0).abs();
        if span == 0.0 {
            0
        } else {
            ((span / self.dt) - 1e-9).ceil().max(1.0) as usize
        }
    }

    fn check(&self, t: f64, x: &[f64]) -> Result<()> {
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm <= self.blowup) {
            return Err(CoreError::FlowBlowUp { t, norm });
        }
        Ok(())
    }

    /// Trajectory through `p` at time `s0`, evaluated at time `s1`.
    pub fn flow(&self, p: &[f64], s0: f64, s1: f64) -> Result<FlowSample> {
        let d = self.chart.dim();
        let n = self.chart.n();
        let steps = self.substeps(s0, s1);
        let mut x = p.to_vec();
        let mut g = 0.0;
        if steps == 0 {
            return Ok(FlowSample { point: Vector::from_vec(x), g });
        }
        let hstep = (s1 - s0) / steps as f64;
        let mut grad = vec![0.0; d];
        let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut kg = [0.0; 4];
        let mut tmp = vec![0.0; d];
        let h = &self.h;
        let rhs = |t: f64, y: &[f64], out: &mut [f64], grad: &mut [f64]| -> f64 {
            h.gradient_into(t, y, grad);
            contact_vector_field_into(n, y, h.value(t, y), grad, out);
            -h.reeb_derivative(t, y)
        };
        for s in 0..steps {
            let t = s0 + s as f64 * hstep;
            kg[0] = rhs(t, &x, &mut k[0], &mut grad);
            for (c, w) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
                for j in 0..d {
                    tmp[j] = x[j] + w * hstep * k[c - 1][j];
                }
                let (lo, hi) = k.split_at_mut(c);
                let _ = lo;
                kg[c] = rhs(t + w * hstep, &tmp, &mut hi[0], &mut grad);
            }
            for j in 0..d {
                x[j] += hstep / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
            }
            g += hstep / 6.0 * (kg[0] + 2.0 * kg[1] + 2.0 * kg[2] + kg[3]);
            self.check(t + hstep, &x)?;
        }
        Ok(FlowSample { point: Vector::from_vec(x), g })
    }

    /// Flow together with its differential and the differential of `g`,
    /// integrated from the variational equations.
    pub fn flow_with_variation(&self, p: &[f64], s0: f64, s1: f64) -> Result<FlowVariation> {
        let d = self.chart.dim();
        let steps = self.substeps(s0, s1);
        // state: x (d), g (1), V (d×d row-major), dg (d)
        let len = d + 1 + d * d + d;
        let mut y = vec![0.0; len];
        y[..d].copy_from_slice(p);
        for a in 0..d {
            y[d + 1 + a * d + a] = 1.0;
        }
        let rhs = |t: f64, y: &[f64]| -> Vec<f64> {
            let x = &y[..d];
            let mut out = vec![0.0; len];
            let xv = xh(&self.chart, &self.h, t, x);
            out[..d].copy_from_slice(xv.as_slice());
            out[d] = -self.h.reeb_derivative(t, x);
            let jac = xh_jacobian(&self.chart, &self.h, t, x);
            let rg = self.h.reeb_gradient(t, x);
            let v = &y[d + 1..d + 1 + d * d];
            for a in 0..d {
                for b in 0..d {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += jac[(a, c)] * v[c * d + b];
                    }
                    out[d + 1 + a * d + b] = s;
                }
            }
            for b in 0..d {
                let mut s = 0.0;
                for a in 0..d {
                    s += rg[a] * v[a * d + b];
                }
                out[d + 1 + d * d + b] = -s;
            }
            out
        };
        if steps > 0 {
            let hstep = (s1 - s0) / steps as f64;
            for s in 0..steps {
                let t = s0 + s as f64 * hstep;
                let k1 = rhs(t, &y);
                let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * hstep * b).collect();
                let k2 = rhs(t + 0.5 * hstep, &y2);
                let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * hstep * b).collect();
                let k3 = rhs(t + 0.5 * hstep, &y3);
                let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + hstep * b).collect();
                let k4 = rhs(t + hstep, &y4);
                for j in 0..len {
                    y[j] += hstep / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
                self.check(t + hstep, &y[..d])?;
            }
        }
        Ok(FlowVariation {
            point: Vector::from_column_slice(&y[..d]),
            g: y[d],
            dphi: Matrix::from_row_slice(d, d, &y[d + 1..d + 1 + d * d]),
            dg: Vector::from_column_slice(&y[d + 1 + d * d..]),
        })
    }

    /// `ψ^t(p)` and `g_{ψ^t}(p)`.
    pub fn psi(&self, t: f64, p: &[f64]) -> Result<FlowSample> {
        self.flow(p, 0.0, t)
    }

    /// `(ψ^t)^{-1}(p)` and its exponent.
    pub fn psi_inverse(&self, t: f64, p: &[f64]) -> Result<FlowSample> {
        self.flow(p, t, 0.0)
    }

    /// `φ^t = ψ^t (ψ^1)^{-1}`.
    pub fn phi(&self, t: f64, p: &[f64]) -> Result<FlowSample> {
        self.flow(p, 1.0, t)
    }

    /// `(φ^t)^{-1}`.
    pub fn phi_inverse(&self, t: f64, p: &[f64]) -> Result<FlowSample> {
        self.flow(p, t, 1.0)
    }

    /// `g_{(φ^t)^{-1}}(p)`, the weight of the perturbed equation at `u = p`.
    pub fn g_hu(&self, t: f64, p: &[f64]) -> Result<f64> {
        match self.h.reeb_constant() {
            Some(r) => Ok(-r * (1.0 - t)),
            None => Ok(self.phi_inverse(t, p)?.g),
        }
    }

    /// `g_{H,u}` together with its spatial differential.
    pub fn g_hu_with_gradient(&self, t: f64, p: &[f64]) -> Result<(f64, Vector)> {
        match self.h.reeb_constant() {
            Some(r) => Ok((-r * (1.0 - t), Vector::zeros(p.len()))),
            None => {
                let v = self.flow_with_variation(p, t, 1.0)?;
                Ok((v.g, v.dg))
            }
        }
    }

    /// Applies `flow(·, s0, s1)` to many points in parallel, preserving order.
    pub fn flow_many(&self, points: &[Vector], times: &[(f64, f64)]) -> Result<Vec<FlowSample>> {
        points
            .par_iter()
            .zip(times.par_iter())
            .map(|(p, (s0, s1))| self.flow(p.as_slice(), *s0, *s1))
            .collect()
    }
}

/// `|g_{ψ^{-1}}(p) + g_ψ(ψ^{-1}(p))|` for `ψ = ψ^t`.
pub fn conformal_exponent_inverse_check(iso: &ContactIsotopy, t: f64, p: &[f64]) -> Result<f64> {
    let inv = iso.psi_inverse(t, p)?;
    let fwd = iso.psi(t, inv.point.as_slice())?;
    Ok((inv.g + fwd.g).abs())
}

/// `|g_{ψ∘φ}(p) − g_ψ(φ(p)) − g_φ(p)|` for the time-`t` maps of two isotopies,
/// with the left side read off from `λ(dψ dφ R)`.
pub fn conformal_exponent_composition_check(psi: &ContactIsotopy, phi: &ContactIsotopy, t: f64, p: &[f64]) -> Result<f64> {
    let chart = psi.chart();
    let a = phi.flow_with_variation(p, 0.0, t)?;
    let b = psi.flow_with_variation(a.point.as_slice(), 0.0, t)?;
    let r = chart.reeb(&Vector::from_column_slice(p));
    let pushed = &b.dphi * (&a.dphi * r);
    let composite = chart.lambda(&b.point, &pushed).ln();
    Ok((composite - b.g - a.g).abs())
}

/// `|λ(dψ^t v) − e^{g} λ(v)|` at `p`.
pub fn pullback_residual(iso: &ContactIsotopy, t: f64, p: &[f64], v: &Vector) -> Result<f64> {
    let chart = iso.chart();
    let f = iso.flow_with_variation(p, 0.0, t)?;
    let lhs = chart.lambda(&f.point, &(&f.dphi * v));
    let rhs = f.g.exp() * chart.lambda(&Vector::from_column_slice(p), v);
    Ok((lhs - rhs).abs())
}

#[derive(Clone, Debug)]
pub struct LiftOptions {
    /// Bound on the critical residual accepted as input.
    pub critical_threshold: f64,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self { critical_threshold: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianLift {
    pub rho: Vec<f64>,
    pub tilde_gamma: PathGamma,
    pub residual: f64,
}

/// Removes the Reeb drift of a critical path: `ρ(t) = ∫_0^t (λ(γ̇) + H)`,
/// `γ̃ = φ_R^{−ρ}(γ)`, and the residual of `γ̃̇ = X_{H̃}(t, γ̃)` with
/// `H̃(t, x) = H(t, φ_R^{ρ(t)} x)`.
pub fn lift_to_hamiltonian_trajectory(
    chart: &TriadChart,
    h: &HamiltonianSpec,
    gamma: &PathGamma,
    opts: &LiftOptions,
) -> Result<HamiltonianLift> {
    let crit = critical_residual(chart, h, gamma)?;
    if !(crit <= opts.critical_threshold) {
        return Err(CoreError::Precondition {
            what: "critical residual |(γ̇ − X_H)^π|".into(),
            value: crit,
            threshold: opts.critical_threshold,
        });
    }
    let n_int = gamma.intervals();
    let dt = 1.0 / n_int as f64;
    let vel = gamma.velocities();
    let b: Vec<f64> = (0..=n_int)
        .map(|k| {
            let t = k as f64 * dt;
            let p = gamma.point(k);
            chart.lambda(p, &vel[k]) + h.value(t, p.as_slice())
        })
        .collect();
    let mut rho = vec![0.0; n_int + 1];
    for k in 1..=n_int {
        rho[k] = rho[k - 1] + 0.5 * dt * (b[k - 1] + b[k]);
    }
    let points: Vec<Vector> = (0..=n_int).map(|k| chart.reeb_flow(gamma.point(k), -rho[k])).collect();
    let tilde = PathGamma::new(chart, points)?;
    let tvel = tilde.velocities();
    let d = chart.dim();
    let mut grad = vec![0.0; d];
    let mut xt = vec![0.0; d];
    let mut residual: f64 = 0.0;
    for k in 0..=n_int {
        let t = k as f64 * dt;
        let x = tilde.point(k);
        let shifted = chart.reeb_flow(x, rho[k]);
        // φ_R is a translation, so H̃ has the same differential at x as H at the shifted point.
        h.gradient_into(t, shifted.as_slice(), &mut grad);
        contact_vector_field_into(chart.n(), x.as_slice(), h.value(t, shifted.as_slice()), &grad, &mut xt);
        let r = (0..d).fold(0.0f64, |m, j| m.max((tvel[k][j] - xt[j]).abs()));
        residual = residual.max(r);
    }
    Ok(HamiltonianLift { rho, tilde_gamma: tilde, residual })
}
