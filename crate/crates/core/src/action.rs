//! The perturbed action on discretized paths and its first variation.
//!
//! `𝒜_H(γ) = ∫_0^1 e^{G(t, γ)} (λ(γ̇) + H(t, γ)) dt` with `G = g_{(φ^t)^{-1}}`,
//! which equals the unperturbed action of `γ̄ = (φ^t)^{-1} γ`.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::dynamics::{xh, ContactIsotopy};
use crate::error::{CoreError, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::triad::{LegendrianSpec, TriadChart, Vector};

/// Fourth-order differences of samples on a uniform grid of step `h`:
/// five-point centered inside, one-sided five-point stencils at the two
/// nodes nearest each end. Fewer than five samples fall back to second order.
pub fn differentiate(samples: &[Vector], h: f64) -> Vec<Vector> {
    let m = samples.len();
    let s = samples;
    if m < 5 {
        return (0..m)
            .map(|k| {
                if k == 0 {
                    (&s[1] * 4.0 - &s[0] * 3.0 - &s[2]) / (2.0 * h)
                } else if k == m - 1 {
                    (&s[m - 3] - &s[m - 2] * 4.0 + &s[m - 1] * 3.0) / (2.0 * h)
                } else {
                    (&s[k + 1] - &s[k - 1]) / (2.0 * h)
                }
            })
            .collect();
    }
    let c = 1.0 / (12.0 * h);
    (0..m)
        .map(|k| {
            let v = if k == 0 {
                &s[0] * -25.0 + &s[1] * 48.0 - &s[2] * 36.0 + &s[3] * 16.0 - &s[4] * 3.0
            } else if k == 1 {
                &s[0] * -3.0 - &s[1] * 10.0 + &s[2] * 18.0 - &s[3] * 6.0 + &s[4]
            } else if k == m - 2 {
                &s[m - 1] * 3.0 + &s[m - 2] * 10.0 - &s[m - 3] * 18.0 + &s[m - 4] * 6.0 - &s[m - 5]
            } else if k == m - 1 {
                &s[m - 1] * 25.0 - &s[m - 2] * 48.0 + &s[m - 3] * 36.0 - &s[m - 4] * 16.0 + &s[m - 5] * 3.0
            } else {
                (&s[k + 1] - &s[k - 1]) * 8.0 - &s[k + 2] + &s[k - 2]
            };
            v * c
        })
        .collect()
}

/// Composite trapezoid rule on `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let h = 1.0 / n as f64;
    let inner: f64 = values[1..n].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n]))
}

#[derive(Clone, Debug)]
pub struct PathGamma {
    points: Vec<Vector>,
    r0: Option<LegendrianSpec>,
    r1: Option<LegendrianSpec>,
}

impl PathGamma {
    /// At least three samples on the uniform grid `t_k = k / N`.
    pub fn new(chart: &TriadChart, points: Vec<Vector>) -> Result<Self> {
        if points.len() < 3 {
            return Err(CoreError::InvalidParameter { name: "points", reason: "need at least 3 samples".into() });
        }
        for p in &points {
            crate::error::check_dim(chart.dim(), p.len())?;
            if p.iter().any(|c| !c.is_finite()) {
                return Err(CoreError::NonFinite);
            }
        }
        Ok(Self { points, r0: None, r1: None })
    }

    pub fn from_fn(chart: &TriadChart, intervals: usize, f: impl Fn(f64) -> Vector) -> Result<Self> {
        Self::new(chart, (0..=intervals).map(|k| f(k as f64 / intervals as f64)).collect())
    }

    /// Attaches endpoint Legendrians, checking the endpoints lie on them.
    pub fn with_tags(mut self, r0: LegendrianSpec, r1: LegendrianSpec, tol: f64) -> Result<Self> {
        for (p, r) in [(self.points[0].clone(), &r0), (self.points.last().unwrap().clone(), &r1)] {
            let d = r.distance(&p);
            if !(d <= tol) {
                return Err(CoreError::Precondition { what: "endpoint distance to Legendrian".into(), value: d, threshold: tol });
            }
        }
        self.r0 = Some(r0);
        self.r1 = Some(r1);
        Ok(self)
    }

    pub fn tags(&self) -> Option<(&LegendrianSpec, &LegendrianSpec)> {
        self.r0.as_ref().zip(self.r1.as_ref())
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn point(&self, k: usize) -> &Vector {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn velocities(&self) -> Vec<Vector> {
        differentiate(&self.points, self.dt())
    }

    /// `γ + ε η`, the flat-chart exponential; tags are dropped.
    pub fn perturbed(&self, eta: &VariationField, eps: f64) -> PathGamma {
        let points = self.points.iter().zip(&eta.vectors).map(|(p, v)| p + v * eps).collect();
        PathGamma { points, r0: None, r1: None }
    }
}

#[derive(Clone, Debug)]
pub struct VariationField {
    pub vectors: Vec<Vector>,
}

impl VariationField {
    /// Checks the sample count and, for tagged paths, endpoint tangency.
    pub fn new(gamma: &PathGamma, vectors: Vec<Vector>, tol: f64) -> Result<Self> {
        crate::error::check_dim(gamma.points.len(), vectors.len())?;
        if let Some((r0, r1)) = gamma.tags() {
            for (v, r) in [(&vectors[0], r0), (vectors.last().unwrap(), r1)] {
                let off = (v - r.project_tangent(v)).amax();
                if !(off <= tol) {
                    return Err(CoreError::Precondition { what: "endpoint variation off the Legendrian tangent".into(), value: off, threshold: tol });
                }
            }
        }
        Ok(Self { vectors })
    }
}

fn weights(iso: &ContactIsotopy, gamma: &PathGamma) -> Result<Vec<f64>> {
    (0..=gamma.intervals())
        .into_par_iter()
        .map(|k| iso.g_hu(gamma.time(k), gamma.point(k).as_slice()))
        .collect()
}

pub fn action_value(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, gamma: &PathGamma) -> Result<f64> {
    let g = weights(iso, gamma)?;
    let vel = gamma.velocities();
    let vals: Vec<f64> = (0..=gamma.intervals())
        .map(|k| {
            let p = gamma.point(k);
            g[k].exp() * (chart.lambda(p, &vel[k]) + h.value(gamma.time(k), p.as_slice()))
        })
        .collect();
    Ok(trapezoid(&vals))
}

/// `γ̄(t) = (φ^t)^{-1}(γ(t))`.
pub fn unperturbed_path(iso: &ContactIsotopy, gamma: &PathGamma) -> Result<PathGamma> {
    let pts: Result<Vec<Vector>> = (0..=gamma.intervals())
        .into_par_iter()
        .map(|k| Ok(iso.phi_inverse(gamma.time(k), gamma.point(k).as_slice())?.point))
        .collect();
    PathGamma::new(iso.chart(), pts?)
}

/// `|𝒜_H(γ) − 𝒜_0(γ̄)|`.
pub fn action_identity_residual(chart: &TriadChart, h: &HamiltonianSpec, iso: &ContactIsotopy, gamma: &PathGamma) -> Result<f64> {
    let lhs = action_value(chart, h, iso, gamma)?;
    let bar = unperturbed_path(iso, gamma)?;
    let vel = bar.velocities();
    let vals: Vec<f64> = (0..=bar.intervals()).map(|k| chart.lambda(bar.point(k), &vel[k])).collect();
    Ok((lhs - trapezoid(&vals)).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstVariation {
    pub interior: f64,
    pub boundary_end: f64,
    pub boundary_start: f64,
}

impl FirstVariation {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary_end - self.boundary_start
    }
}

/// `δ𝒜_H(γ)(η)` split into the interior integral and the two boundary terms
/// `λ(η(1))` and `e^{g_{ψ^1}(γ(0))} λ(η(0))`.
///
/// The interior integrand is
/// `e^G [dλ(η, γ̇ − X) + dG(η) λ(γ̇ − X) − dG(γ̇ − X) λ(η)]`; the `dG` terms
/// vanish whenever `R[H]` is constant.
pub fn first_variation(
    chart: &TriadChart,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    gamma: &PathGamma,
    eta: &VariationField,
) -> Result<FirstVariation> {
    crate::error::check_dim(gamma.points.len(), eta.vectors.len())?;
    let vel = gamma.velocities();
    let vals: Result<Vec<f64>> = (0..=gamma.intervals())
        .into_par_iter()
        .map(|k| {
            let t = gamma.time(k);
            let p = gamma.point(k);
            let (g, dg) = iso.g_hu_with_gradient(t, p.as_slice())?;
            let w = &vel[k] - xh(chart, h, t, p.as_slice());
            let e = &eta.vectors[k];
            Ok(g.exp() * (chart.dlambda(e, &w) + dg.dot(e) * chart.lambda(p, &w) - dg.dot(&w) * chart.lambda(p, e)))
        })
        .collect();
    let n_int = gamma.intervals();
    let g_start = iso.psi(1.0, gamma.point(0).as_slice())?.g;
    Ok(FirstVariation {
        interior: trapezoid(&vals?),
        boundary_end: chart.lambda(gamma.point(n_int), &eta.vectors[n_int]),
        boundary_start: g_start.exp() * chart.lambda(gamma.point(0), &eta.vectors[0]),
    })
}

/// `|first_variation − (𝒜_H(γ + εη) − 𝒜_H(γ)) / ε|`.
pub fn first_variation_fd_gap(
    chart: &TriadChart,
    h: &HamiltonianSpec,
    iso: &ContactIsotopy,
    gamma: &PathGamma,
    eta: &VariationField,
    eps: f64,
) -> Result<f64> {
    let a0 = action_value(chart, h, iso, gamma)?;
    let a1 = action_value(chart, h, iso, &gamma.perturbed(eta, eps))?;
    Ok((first_variation(chart, h, iso, gamma, eta)?.total() - (a1 - a0) / eps).abs())
}

/// `max_k |Π(γ̇ − X_H)(t_k)|` in the triad metric.
pub fn critical_residual(chart: &TriadChart, h: &HamiltonianSpec, gamma: &PathGamma) -> Result<f64> {
    let vel = gamma.velocities();
    let mut r: f64 = 0.0;
    for k in 0..=gamma.intervals() {
        let p = gamma.point(k);
        let w = &vel[k] - xh(chart, h, gamma.time(k), p.as_slice());
        let pi = chart.project(p, &w);
        r = r.max(chart.norm_sq(p, &pi).sqrt());
    }
    Ok(r)
}

/// Writes `t, x1.., y1.., z` rows.
pub fn write_path_csv<W: Write>(chart: &TriadChart, gamma: &PathGamma, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coordinate_header(chart, &["t"])).map_err(csv_err)?;
    for k in 0..=gamma.intervals() {
        let mut row = vec![gamma.time(k).to_string()];
        row.extend(gamma.point(k).iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a path written by [`write_path_csv`]; the `t` column must be uniform on `[0, 1]`.
pub fn read_path_csv<R: Read>(chart: &TriadChart, input: R) -> Result<PathGamma> {
    let mut r = csv::Reader::from_reader(input);
    let d = chart.dim();
    let mut pts = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d + 1 {
            return Err(CoreError::Parse(format!("row {k}: expected {} columns, got {}", d + 1, rec.len())));
        }
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| CoreError::Parse(format!("row {k}: {e}")))?;
        pts.push((vals[0], Vector::from_column_slice(&vals[1..])));
    }
    let n = pts.len().saturating_sub(1);
    for (k, (t, _)) in pts.iter().enumerate() {
        if n > 0 && (t - k as f64 / n as f64).abs() > 1e-9 {
            return Err(CoreError::Parse(format!("row {k}: t = {t} is off the uniform grid")));
        }
    }
    PathGamma::new(chart, pts.into_iter().map(|p| p.1).collect())
}

pub(crate) fn coordinate_header(chart: &TriadChart, lead: &[&str]) -> Vec<String> {
    let n = chart.n();
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("y{i}")));
    h.push("z".into());
    h
}

pub(crate) fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_isotopy;
    use crate::hamiltonian::HamiltonianConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chart() -> TriadChart {
        TriadChart::standard(1).unwrap()
    }

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    fn random_path(rng: &mut ChaCha8Rng, n: usize) -> PathGamma {
        let c: Vec<[f64; 3]> = (0..3).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        PathGamma::from_fn(&chart(), n, |t| {
            Vector::from_fn(3, |i, _| c[0][i] + c[1][i] * t + 0.5 * c[2][i] * (3.0 * t).sin())
        })
        .unwrap()
    }

    fn random_eta(rng: &mut ChaCha8Rng, gamma: &PathGamma) -> VariationField {
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vs = (0..=gamma.intervals())
            .map(|k| {
                let t = gamma.time(k);
                Vector::from_fn(3, |i, _| c[i] + c[i + 3] * (2.0 * t).cos())
            })
            .collect();
        VariationField { vectors: vs }
    }

    fn expr_h() -> HamiltonianSpec {
        let cfg = HamiltonianConfig::Expr {
            h: "0.2*x*y + 0.1*z^2".into(),
            dh: vec!["0.2*y".into(), "0.2*x".into(), "0.2*z".into()],
            rh: "0.2*z".into(),
        };
        HamiltonianSpec::from_config(&cfg, 1).unwrap()
    }

    #[test]
    fn action_examples() {
        let ch = chart();
        let zero = HamiltonianSpec::zero();
        let iso0 = integrate_isotopy(&ch, &zero, 1000).unwrap();
        let chord = PathGamma::from_fn(&ch, 50, |t| v(&[0.3, 0.0, 2.5 * t])).unwrap();
        assert!((action_value(&ch, &zero, &iso0, &chord).unwrap() - 2.5).abs() < 1e-12);
        let constant = PathGamma::from_fn(&ch, 10, |_| v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(action_value(&ch, &zero, &iso0, &constant).unwrap(), 0.0);
        let c = HamiltonianSpec::Constant { c: 0.7 };
        let isoc = integrate_isotopy(&ch, &c, 1000).unwrap();
        assert!((action_value(&ch, &c, &isoc, &constant).unwrap() - 0.7).abs() < 1e-12);
        assert!(action_identity_residual(&ch, &zero, &iso0, &chord).unwrap() < 1e-14);
    }

    #[test]
    fn action_identity_for_catalog() {
        let ch = chart();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for h in [HamiltonianSpec::Constant { c: -0.6 }, HamiltonianSpec::LinearZ] {
            let iso = integrate_isotopy(&ch, &h, 1000).unwrap();
            for _ in 0..4 {
                let g = random_path(&mut rng, 200);
                let r = action_identity_residual(&ch, &h, &iso, &g).unwrap();
                assert!(r < 1e-5, "{} {r}", h.tag());
            }
        }
    }

    #[test]
    fn action_identity_converges_at_order_two() {
        let ch = chart();
        let h = HamiltonianSpec::LinearZ;
        let iso = integrate_isotopy(&ch, &h, 1000).unwrap();
        let f = |t: f64| v(&[t.sin(), 0.5 + (2.0 * t).cos(), t * t]);
        let r1 = action_identity_residual(&ch, &h, &iso, &PathGamma::from_fn(&ch, 20, f).unwrap()).unwrap();
        let r2 = action_identity_residual(&ch, &h, &iso, &PathGamma::from_fn(&ch, 40, f).unwrap()).unwrap();
        assert!(crate::report::order_estimate(r1, r2) > 1.8, "{r1} {r2}");
    }

    #[test]
    fn first_variation_matches_differences() {
        let ch = chart();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for h in [HamiltonianSpec::zero(), HamiltonianSpec::Constant { c: 0.4 }, HamiltonianSpec::LinearZ, expr_h()] {
            let iso = integrate_isotopy(&ch, &h, 1000).unwrap();
            for _ in 0..3 {
                let g = random_path(&mut rng, 200);
                let eta = random_eta(&mut rng, &g);
                let gap = first_variation_fd_gap(&ch, &h, &iso, &g, &eta, 1e-4).unwrap();
                assert!(gap < 5e-3, "{} {gap}", h.tag());
            }
        }
    }

    #[test]
    fn legendrian_boundary_terms_vanish() {
        let ch = chart();
        let h = HamiltonianSpec::LinearZ;
        let iso = integrate_isotopy(&ch, &h, 1000).unwrap();
        let r0 = LegendrianSpec::horizontal(&ch, 0.0).unwrap();
        let r1 = LegendrianSpec::horizontal(&ch, 1.0).unwrap();
        let g = PathGamma::from_fn(&ch, 100, |t| v(&[0.2 + t, (std::f64::consts::PI * t).sin(), t]))
            .unwrap()
            .with_tags(r0, r1, 1e-12)
            .unwrap();
        let vs = (0..=100).map(|k| v(&[1.0, (k as f64 * 0.1).cos() * (k * (100 - k)) as f64 / 2500.0, 0.0])).collect();
        let eta = VariationField::new(&g, vs, 1e-12).unwrap();
        let fv = first_variation(&ch, &h, &iso, &g, &eta).unwrap();
        assert!(fv.boundary_end.abs() < 1e-10 && fv.boundary_start.abs() < 1e-10);
        let bad = (0..=100).map(|_| v(&[0.0, 0.0, 1.0])).collect();
        assert!(VariationField::new(&g, bad, 1e-9).is_err());
    }

    #[test]
    fn critical_paths() {
        let ch = chart();
        let zero = HamiltonianSpec::zero();
        let chord = PathGamma::from_fn(&ch, 40, |t| v(&[0.3, 0.0, 1.7 * t])).unwrap();
        assert!(critical_residual(&ch, &zero, &chord).unwrap() < 1e-14);
        let delta = 1e-3;
        let bent = PathGamma::from_fn(&ch, 200, |t| v(&[0.3 + delta * t, 0.0, 1.7 * t])).unwrap();
        let r = critical_residual(&ch, &zero, &bent).unwrap();
        assert!((r - delta).abs() < 1e-9);
        // Reeb chord of length T pushed forward by φ^t for a constant H.
        let c = 0.9;
        let h = HamiltonianSpec::Constant { c };
        let iso = integrate_isotopy(&ch, &h, 1000).unwrap();
        let pts = (0..=100)
            .map(|k| {
                let t = k as f64 / 100.0;
                iso.phi(t, &[0.1, 0.0, 1.3 * t]).unwrap().point
            })
            .collect();
        let g = PathGamma::new(&ch, pts).unwrap();
        assert!(critical_residual(&ch, &h, &g).unwrap() < 1e-6);
        let eta = random_eta(&mut ChaCha8Rng::seed_from_u64(1), &g);
        let fv = first_variation(&ch, &h, &iso, &g, &eta).unwrap();
        assert!(fv.interior.abs() < 1e-8);
    }

    #[test]
    fn csv_roundtrip() {
        let ch = TriadChart::standard(2).unwrap();
        let g = PathGamma::from_fn(&ch, 8, |t| Vector::from_fn(5, |i, _| t * i as f64 - 0.25)).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&ch, &g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,y1,y2,z\n"));
        let back = read_path_csv(&ch, buf.as_slice()).unwrap();
        assert_eq!(back.points(), g.points());
        assert!(read_path_csv(&ch, "t,x1\n0,1\n".as_bytes()).is_err());
    }
}
