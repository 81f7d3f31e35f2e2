//! Standard contact triad on R^{2n+1}.
//!
//! Coordinates are ordered `(x_1..x_n, y_1..y_n, z)`. The contact form is
//! `λ = dz − Σ y_i dx_i`, the Reeb field is `∂z`, and `J` is the translation
//! invariant structure with `J e_i = f_i`, `J f_i = −e_i` for the frame
//! `e_i = ∂x_i + y_i ∂z`, `f_i = ∂y_i`. The triad metric makes
//! `{e_i, f_i, R}` orthonormal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CoreError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Chart selection: `{"type":"standard_r2np1","n":..}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldConfig {
    #[serde(rename = "standard_r2np1")]
    StandardR2np1 { n: usize },
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self::StandardR2np1 { n: 1 }
    }
}

impl ManifoldConfig {
    pub fn chart(&self) -> Result<TriadChart> {
        match *self {
            Self::StandardR2np1 { n } => TriadChart::standard(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriadPoint {
    pub coords: Vector,
}

impl TriadPoint {
    pub fn new(coords: Vector) -> Result<Self> {
        let len = coords.len();
        if len < 3 || len.is_multiple_of(2) {
            return Err(CoreError::InvalidParameter {
                name: "coords",
                reason: format!("length {len} is not 2n+1 with n >= 1"),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        Ok(Self { coords })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(coords))
    }

    pub fn n(&self) -> usize {
        (self.coords.len() - 1) / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec {
    pub base: TriadPoint,
    pub components: Vector,
}

impl TangentVec {
    pub fn new(base: TriadPoint, components: Vector) -> Result<Self> {
        check_dim(base.coords.len(), components.len())?;
        Ok(Self { base, components })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TriadChart {
    n: usize,
    fd_step: f64,
}

impl TriadChart {
    pub fn standard(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidParameter {
                name: "n",
                reason: "must be positive".into(),
            });
        }
        Ok(Self { n, fd_step: 1e-4 })
    }

    /// Step used by the central differences of frame and flow derivatives.
    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn zi(&self) -> usize {
        2 * self.n
    }

    pub fn check_point(&self, p: &TriadPoint) -> Result<()> {
        check_dim(self.dim(), p.coords.len())
    }

    pub fn check_vec(&self, v: &TangentVec) -> Result<()> {
        self.check_point(&v.base)?;
        check_dim(self.dim(), v.components.len())
    }

    pub fn lambda(&self, p: &Vector, v: &Vector) -> f64 {
        let n = self.n;
        let mut s = v[2 * n];
        for i in 0..n {
            s -= p[n + i] * v[i];
        }
        s
    }

    pub fn lambda_covector(&self, p: &Vector) -> Vector {
        let n = self.n;
        let mut c = Vector::zeros(self.dim());
        for i in 0..n {
            c[i] = -p[n + i];
        }
        c[2 * n] = 1.0;
        c
    }

    pub fn reeb(&self, _p: &Vector) -> Vector {
        let mut r = Vector::zeros(self.dim());
        r[2 * self.n] = 1.0;
        r
    }

    pub fn project(&self, p: &Vector, v: &Vector) -> Vector {
        let mut w = v.clone();
        w[2 * self.n] -= self.lambda(p, v);
        w
    }

    pub fn project_matrix(&self, p: &Vector) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::identity(d, d);
        let c = self.lambda_covector(p);
        for j in 0..d {
            m[(2 * self.n, j)] -= c[j];
        }
        m
    }

    /// `J∘Π`, so that `J R = 0`.
    pub fn j(&self, p: &Vector, v: &Vector) -> Vector {
        let n = self.n;
        let mut w = Vector::zeros(self.dim());
        for i in 0..n {
            let a = v[i];
            let b = v[n + i];
            w[i] = -b;
            w[n + i] = a;
            w[2 * n] -= p[n + i] * b;
        }
        w
    }

    pub fn j_matrix(&self, p: &Vector) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for k in 0..d {
            let mut e = Vector::zeros(d);
            e[k] = 1.0;
            m.set_column(k, &self.j(p, &e));
        }
        m
    }

    pub fn dlambda(&self, v: &Vector, w: &Vector) -> f64 {
        let n = self.n;
        (0..n).map(|i| v[i] * w[n + i] - v[n + i] * w[i]).sum()
    }

    /// Columns `e_1..e_n, f_1..f_n, R`.
    pub fn frame(&self, p: &Vector) -> Matrix {
        let n = self.n;
        let d = self.dim();
        let mut f = Matrix::identity(d, d);
        for i in 0..n {
            f[(2 * n, i)] = p[n + i];
        }
        f
    }

    /// Coefficients of `v` in the frame; the last entry is `λ(v)`.
    pub fn frame_coeffs(&self, p: &Vector, v: &Vector) -> Vector {
        let mut c = v.clone();
        c[2 * self.n] = self.lambda(p, v);
        c
    }

    pub fn metric(&self, p: &Vector) -> Matrix {
        let f = self.frame(p);
        let inv = f.try_inverse().expect("frame is unimodular");
        inv.transpose() * inv
    }

    pub fn inner(&self, p: &Vector, v: &Vector, w: &Vector) -> f64 {
        let a = self.frame_coeffs(p, v);
        let b = self.frame_coeffs(p, w);
        a.dot(&b)
    }

    pub fn norm_sq(&self, p: &Vector, v: &Vector) -> f64 {
        self.inner(p, v, v)
    }

    /// Triad metric from its defining formula `dλ(Πv, JΠw) + λ(v)λ(w)`.
    pub fn metric_from_definition(&self, p: &Vector, v: &Vector, w: &Vector) -> f64 {
        let pv = self.project(p, v);
        let jpw = self.j(p, &self.project(p, w));
        self.dlambda(&pv, &jpw) + self.lambda(p, v) * self.lambda(p, w)
    }

    pub fn reeb_flow(&self, p: &Vector, s: f64) -> Vector {
        let mut q = p.clone();
        q[2 * self.n] += s;
        q
    }

    pub fn reeb_flow_differential(&self, _p: &Vector, _s: f64) -> Matrix {
        Matrix::identity(self.dim(), self.dim())
    }
}

pub fn lambda_at(chart: &TriadChart, v: &TangentVec) -> Result<f64> {
    chart.check_vec(v)?;
    Ok(chart.lambda(&v.base.coords, &v.components))
}

pub fn xi_project(chart: &TriadChart, v: &TangentVec) -> Result<TangentVec> {
    chart.check_vec(v)?;
    Ok(TangentVec {
        base: v.base.clone(),
        components: chart.project(&v.base.coords, &v.components),
    })
}

pub fn j_apply(chart: &TriadChart, v: &TangentVec) -> Result<TangentVec> {
    chart.check_vec(v)?;
    Ok(TangentVec {
        base: v.base.clone(),
        components: chart.j(&v.base.coords, &v.components),
    })
}

/// Central difference of `s ↦ (φ_s)^* A` at `s = 0`, where `flow(p, s)`
/// returns `(φ_s(p), dφ_s(p))` and `field(q)` is an endomorphism field.
pub fn lie_derivative_along_flow<F, A>(flow: F, field: A, p: &Vector, h: f64) -> Matrix
where
    F: Fn(&Vector, f64) -> (Vector, Matrix),
    A: Fn(&Vector) -> Matrix,
{
    let pulled = |s: f64| {
        let (q, dphi) = flow(p, s);
        let inv = dphi.clone().try_inverse().expect("flow differential invertible");
        inv * field(&q) * dphi
    };
    (pulled(h) - pulled(-h)) / (2.0 * h)
}

/// Matrix of `ℒ_R J` at `p`, by finite differences of the Reeb pushforward.
pub fn lie_derivative_rj(chart: &TriadChart, p: &TriadPoint) -> Result<Matrix> {
    chart.check_point(p)?;
    Ok(lie_derivative_along_flow(
        |q, s| (chart.reeb_flow(q, s), chart.reeb_flow_differential(q, s)),
        |q| chart.j_matrix(q),
        &p.coords,
        chart.fd_step(),
    ))
}

/// Affine Legendrian subspace `point + span(tangents)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendrianSpec {
    point: Vec<f64>,
    tangents: Vec<Vec<f64>>,
}

impl LegendrianSpec {
    pub fn new(chart: &TriadChart, point: Vector, tangents: Vec<Vector>) -> Result<Self> {
        let d = chart.dim();
        check_dim(d, point.len())?;
        check_dim(chart.n(), tangents.len())?;
        for t in &tangents {
            check_dim(d, t.len())?;
        }
        // Gram–Schmidt in the Euclidean chart metric.
        let mut basis: Vec<Vector> = Vec::with_capacity(tangents.len());
        for t in &tangents {
            let mut w = t.clone();
            for b in &basis {
                w -= b * b.dot(&w);
            }
            let nrm = w.norm();
            if nrm < 1e-12 * t.norm().max(1.0) {
                return Err(CoreError::InvalidParameter {
                    name: "tangents",
                    reason: "tangent vectors are linearly dependent".into(),
                });
            }
            basis.push(w / nrm);
        }
        // λ_q(v) is affine in q along the subspace, so checking the base point
        // and one step along each tangent certifies the whole subspace.
        let scale = 1.0 + point.amax();
        let mut probes = vec![point.clone()];
        probes.extend(basis.iter().map(|b| &point + b));
        for q in &probes {
            for b in &basis {
                let l = chart.lambda(q, b);
                if l.abs() > 1e-12 * scale {
                    return Err(CoreError::InvalidParameter {
                        name: "tangents",
                        reason: format!("λ does not vanish on the subspace ({l:e})"),
                    });
                }
            }
        }
        Ok(Self {
            point: point.as_slice().to_vec(),
            tangents: basis.iter().map(|b| b.as_slice().to_vec()).collect(),
        })
    }

    /// `{y = 0, z = c}` through `x = 0`.
    pub fn horizontal(chart: &TriadChart, z: f64) -> Result<Self> {
        let n = chart.n();
        let mut p = Vector::zeros(chart.dim());
        p[2 * n] = z;
        let tangents = (0..n)
            .map(|i| {
                let mut t = Vector::zeros(chart.dim());
                t[i] = 1.0;
                t
            })
            .collect();
        Self::new(chart, p, tangents)
    }

    pub fn dim(&self) -> usize {
        self.tangents.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.point.len()
    }

    pub fn point(&self) -> Vector {
        Vector::from_column_slice(&self.point)
    }

    pub fn tangents(&self) -> Vec<Vector> {
        self.tangents.iter().map(|t| Vector::from_column_slice(t)).collect()
    }

    /// Affine subspaces have vanishing second fundamental form.
    pub fn second_fundamental_form(&self) -> Vec<Matrix> {
        let k = self.dim();
        vec![Matrix::zeros(k, k); self.ambient_dim()]
    }

    pub fn at(&self, s: &[f64]) -> Vector {
        let mut p = self.point();
        for (si, t) in s.iter().zip(&self.tangents) {
            for (pk, tk) in p.iter_mut().zip(t) {
                *pk += si * tk;
            }
        }
        p
    }

    pub fn params_of(&self, p: &Vector) -> Vec<f64> {
        let dp = p - self.point();
        self.tangents
            .iter()
            .map(|t| t.iter().zip(dp.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn project(&self, p: &Vector) -> Vector {
        self.at(&self.params_of(p))
    }

    pub fn project_tangent(&self, v: &Vector) -> Vector {
        let mut w = Vector::zeros(v.len());
        for t in self.tangents() {
            w += &t * t.dot(v);
        }
        w
    }

    pub fn distance(&self, p: &Vector) -> f64 {
        (p - self.project(p)).norm()
    }

    pub fn contains(&self, p: &Vector, tol: f64) -> bool {
        self.distance(p) <= tol
    }

    /// Image under an affine map given pointwise; errors if the image is not affine.
    pub fn map_affine<F>(&self, chart: &TriadChart, f: F) -> Result<Self>
    where
        F: Fn(&Vector) -> Result<Vector>,
    {
        let p0 = self.point();
        let q0 = f(&p0)?;
        let mut tangents = Vec::with_capacity(self.dim());
        for t in self.tangents() {
            let q1 = f(&(&p0 + &t))?;
            let qm = f(&(&p0 + &t * 0.5))?;
            let defect = (&qm - (&q0 + &q1) * 0.5).amax();
            let qn = f(&(&p0 - &t))?;
            let defect = defect.max((&qn - (&q0 * 2.0 - &q1)).amax());
            if defect > 1e-7 * (1.0 + q0.amax()) {
                return Err(CoreError::NotAffine(defect));
            }
            tangents.push(q1 - &q0);
        }
        Self::new(chart, q0, tangents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    #[test]
    fn manifold_config_selects_chart() {
        let m: ManifoldConfig = serde_json::from_str(r#"{"type":"standard_r2np1","n":2}"#).unwrap();
        assert_eq!(m.chart().unwrap().dim(), 5);
        assert!(serde_json::from_str::<ManifoldConfig>(r#"{"type":"sphere","n":2}"#).is_err());
        assert!(ManifoldConfig::StandardR2np1 { n: 0 }.chart().is_err());
    }

    #[test]
    fn lambda_examples() {
        let ch = TriadChart::standard(1).unwrap();
        let p = TriadPoint::from_slice(&[1.0, 2.0, 3.0]).unwrap();
        let tv = TangentVec::new(p.clone(), v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(lambda_at(&ch, &tv).unwrap(), -2.0);
        let r = TangentVec::new(p.clone(), ch.reeb(&p.coords)).unwrap();
        assert_eq!(lambda_at(&ch, &r).unwrap(), 1.0);
        let o = TriadPoint::from_slice(&[0.0, 0.0, 0.0]).unwrap();
        let tv = TangentVec::new(o, v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(lambda_at(&ch, &tv).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ch = TriadChart::standard(2).unwrap();
        let p = TriadPoint::from_slice(&[1.0, 2.0, 3.0]).unwrap();
        let tv = TangentVec::new(p, v(&[1.0, 0.0, 0.0])).unwrap();
        assert!(matches!(
            lambda_at(&ch, &tv),
            Err(CoreError::DimensionMismatch { expected: 5, got: 3 })
        ));
        assert!(TriadPoint::from_slice(&[1.0, 2.0]).is_err());
        assert!(TriadPoint::from_slice(&[1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn projection_examples() {
        let ch = TriadChart::standard(1).unwrap();
        let p = TriadPoint::from_slice(&[0.0, 1.0, 0.0]).unwrap();
        let tv = TangentVec::new(p.clone(), v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(xi_project(&ch, &tv).unwrap().components, v(&[1.0, 0.0, 1.0]));
        let r = TangentVec::new(p.clone(), ch.reeb(&p.coords)).unwrap();
        assert_eq!(xi_project(&ch, &r).unwrap().components, v(&[0.0, 0.0, 0.0]));
        let e = TangentVec::new(p.clone(), v(&[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(xi_project(&ch, &e).unwrap().components, e.components);
    }

    #[test]
    fn j_examples() {
        let ch = TriadChart::standard(1).unwrap();
        let p = TriadPoint::from_slice(&[0.0, 1.0, 0.0]).unwrap();
        let e1 = TangentVec::new(p.clone(), v(&[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(j_apply(&ch, &e1).unwrap().components, v(&[0.0, 1.0, 0.0]));
        let r = TangentVec::new(p.clone(), ch.reeb(&p.coords)).unwrap();
        assert_eq!(j_apply(&ch, &r).unwrap().components, v(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn metric_in_coordinates() {
        let ch = TriadChart::standard(1).unwrap();
        let y = 0.7;
        let g = ch.metric(&v(&[0.3, y, -1.0]));
        let expect = Matrix::from_row_slice(3, 3, &[1.0 + y * y, 0.0, -y, 0.0, 1.0, 0.0, -y, 0.0, 1.0]);
        assert!((g - expect).amax() < 1e-14);
    }

    #[test]
    fn lie_derivative_vanishes_for_standard_j() {
        let ch = TriadChart::standard(2).unwrap();
        let p = TriadPoint::from_slice(&[0.2, -1.0, 0.5, 1.5, 3.0]).unwrap();
        let l = lie_derivative_rj(&ch, &p).unwrap();
        assert!(l.amax() < 1e-10);
        let shifted = TriadPoint::new(ch.reeb_flow(&p.coords, 2.5)).unwrap();
        assert_eq!(lie_derivative_rj(&ch, &shifted).unwrap(), l);
    }

    #[test]
    fn lie_derivative_fd_is_second_order() {
        // z-dependent conjugate of J: A(q) = P(z) J P(z)^{-1}, so ℒ_R A = dA/dz.
        let ch = TriadChart::standard(1).unwrap();
        let conj = |z: f64| {
            let c = z.cos();
            let s = z.sin();
            Matrix::from_row_slice(3, 3, &[1.0 + 0.3 * s, 0.2 * c, 0.0, 0.1 * s, 1.0, 0.0, 0.0, 0.0, 1.0])
        };
        let field = |q: &Vector| {
            let p = conj(q[2]);
            &p * ch.j_matrix(q) * p.clone().try_inverse().unwrap()
        };
        let p = v(&[0.4, -0.3, 0.8]);
        let dz = 1e-6;
        let exact = (field(&ch.reeb_flow(&p, dz)) - field(&ch.reeb_flow(&p, -dz))) / (2.0 * dz);
        let flow = |q: &Vector, s: f64| (ch.reeb_flow(q, s), ch.reeb_flow_differential(q, s));
        let e1 = (lie_derivative_along_flow(flow, field, &p, 0.1) - &exact).amax();
        let e2 = (lie_derivative_along_flow(flow, field, &p, 0.05) - &exact).amax();
        let order = (e1 / e2).log2();
        assert!(order > 1.9 && order < 2.1, "order {order}");
    }

    #[test]
    fn legendrian_construction() {
        let ch = TriadChart::standard(1).unwrap();
        let r = LegendrianSpec::horizontal(&ch, 1.0).unwrap();
        assert!(r.contains(&v(&[3.0, 0.0, 1.0]), 1e-15));
        assert_eq!(r.project(&v(&[3.0, 2.0, 5.0])), v(&[3.0, 0.0, 1.0]));
        assert!(r.second_fundamental_form().iter().all(|b| b.amax() == 0.0));
        // λ(∂x) = −y, so the ∂x line through y = 1 is not Legendrian.
        let bad = LegendrianSpec::new(&ch, v(&[0.0, 1.0, 0.0]), vec![v(&[1.0, 0.0, 0.0])]);
        assert!(bad.is_err());
        // the e_1 line through y = 1 is.
        let ok = LegendrianSpec::new(&ch, v(&[0.0, 1.0, 0.0]), vec![v(&[1.0, 0.0, 1.0])]);
        assert!(ok.is_ok());
    }
}
