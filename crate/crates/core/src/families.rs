//! Closed-form strip maps used as oracles. All are written for general `n`
//! with the motion in the first `(x, y)` pair.

use crate::triad::{TriadChart, Vector};

fn point(n: usize, x: f64, y: f64, z: f64) -> Vector {
    let mut p = Vector::zeros(2 * n + 1);
    p[0] = x;
    p[n] = y;
    p[2 * n] = z;
    p
}

pub fn constant_map(p: Vector) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    move |_, _| p.clone()
}

/// `(x0, 0, z0 + T t)`.
pub fn reeb_strip(chart: &TriadChart, x0: f64, z0: f64, len: f64) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    let n = chart.n();
    move |_, t| point(n, x0, 0.0, z0 + len * t)
}

/// `(x0, 0, z0 + T t + ε sin(πt) e^{πτ})`; the height is harmonic.
pub fn reeb_directed_strip(chart: &TriadChart, x0: f64, z0: f64, len: f64, eps: f64) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    let n = chart.n();
    let pi = std::f64::consts::PI;
    move |s, t| point(n, x0, 0.0, z0 + len * t + eps * (pi * t).sin() * (pi * s).exp())
}

/// `x + iy = ζ + ε e^ζ` with harmonic height `T t + δ e^τ cos t`. CR and
/// closed for `H ≡ 0` because `∇x·∇y = 0` and `Δx = 0`.
pub fn holomorphic_lift(chart: &TriadChart, eps: f64, len: f64, delta: f64) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    let n = chart.n();
    move |s, t| {
        let e = s.exp();
        point(n, s + eps * e * t.cos(), t + eps * e * t.sin(), len * t + delta * e * t.cos())
    }
}

/// `(τ, t, a(τ, t))`.
pub fn basic_lift<A>(chart: &TriadChart, a: A) -> impl Fn(f64, f64) -> Vector + Sync + Clone
where
    A: Fn(f64, f64) -> f64 + Sync + Clone,
{
    let n = chart.n();
    move |s, t| point(n, s, t, a(s, t))
}

/// `w = εζ²/2`, `a = T t + ε' τ t`; the `t = 0` row lies on the x-axis.
pub fn legendrian_edge_solution(chart: &TriadChart, eps: f64, len: f64, eps2: f64) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    let n = chart.n();
    move |s, t| point(n, 0.5 * eps * (s * s - t * t), eps * s * t, len * t + eps2 * s * t)
}

/// `(τ, t, τ²)`: CR but not closed.
pub fn non_harmonic_lift(chart: &TriadChart) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    basic_lift(chart, |s, _| s * s)
}

/// `(τ, −t, 0)`: the ξ-part is anti-holomorphic.
pub fn anti_holomorphic_lift(chart: &TriadChart) -> impl Fn(f64, f64) -> Vector + Sync + Clone {
    let n = chart.n();
    move |s, t| point(n, s, -t, 0.0)
}

/// Exponent `μ` with `μ² + μ = k²`.
pub fn linear_z_mu(k: f64) -> f64 {
    0.5 * (-1.0 + (1.0 + 4.0 * k * k).sqrt())
}

/// CR maps for `H = z`: `x = a e^{μt} cos kτ`, `y = −a (μ/k) e^{μt} sin kτ`, any height.
pub fn linear_z_cr_family<Z>(chart: &TriadChart, amp: f64, k: f64, height: Z) -> impl Fn(f64, f64) -> Vector + Sync + Clone
where
    Z: Fn(f64, f64) -> f64 + Sync + Clone,
{
    let n = chart.n();
    let mu = linear_z_mu(k);
    move |s, t| {
        let e = amp * (mu * t).exp();
        point(n, e * (k * s).cos(), -e * (mu / k) * (k * s).sin(), height(s, t))
    }
}
