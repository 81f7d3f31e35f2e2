//! Contact triad connection of the standard triad.
//!
//! The frame `{e_i, f_i, R}` is parallel, so in coordinates the only nonzero
//! symbols are `Γ^z_{y_i x_i} = −1`, i.e. `∇_{∂y_i} ∂x_i = −∂z`. The torsion is
//! `T(∂x_i, ∂y_i) = ∂z`, whose ξ-part vanishes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::report::ResidualReport;
use crate::triad::{lie_derivative_rj, Matrix, TriadChart, TriadPoint, Vector};

/// `Γ^k_{ij}` with `∇_{∂i} ∂j = Γ^k_{ij} ∂k`, stored at `k·d² + i·d + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionCoeffs {
    pub base: TriadPoint,
    dim: usize,
    gamma: Vec<f64>,
}

impl ConnectionCoeffs {
    pub fn zeros(base: TriadPoint) -> Self {
        let dim = base.coords.len();
        Self { base, dim, gamma: vec![0.0; dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.dim + i) * self.dim + j
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[self.idx(k, i, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let ix = self.idx(k, i, j);
        self.gamma[ix] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    /// `Γ(X, Y)^k = Γ^k_{ij} X^i Y^j`.
    pub fn apply(&self, x: &Vector, y: &Vector) -> Vector {
        let d = self.dim;
        let mut out = Vector::zeros(d);
        for k in 0..d {
            let mut s = 0.0;
            for i in 0..d {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    s += self.gamma[(k * d + i) * d + j] * x[i] * y[j];
                }
            }
            out[k] = s;
        }
        out
    }

    /// Torsion on constant vectors: `Γ(X, Y) − Γ(Y, X)`.
    pub fn torsion(&self, x: &Vector, y: &Vector) -> Vector {
        self.apply(x, y) - self.apply(y, x)
    }
}

/// Source of Christoffel symbols at arbitrary points.
pub trait ConnectionField: Sync {
    fn coeffs_at(&self, p: &Vector) -> ConnectionCoeffs;
}

/// Closed-form connection of the standard triad.
#[derive(Clone, Debug)]
pub struct StandardConnection {
    pub chart: TriadChart,
}

impl StandardConnection {
    pub fn new(chart: &TriadChart) -> Self {
        Self { chart: chart.clone() }
    }
}

impl ConnectionField for StandardConnection {
    fn coeffs_at(&self, p: &Vector) -> ConnectionCoeffs {
        let n = self.chart.n();
        let base = TriadPoint { coords: p.clone() };
        let mut c = ConnectionCoeffs::zeros(base);
        for i in 0..n {
            c.set(2 * n, n + i, i, -1.0);
        }
        c
    }
}

/// A connection with one symbol shifted by `delta`; used as a negative control.
#[derive(Clone, Debug)]
pub struct PerturbedConnection<C> {
    pub inner: C,
    pub entry: (usize, usize, usize),
    pub delta: f64,
}

impl<C: ConnectionField> ConnectionField for PerturbedConnection<C> {
    fn coeffs_at(&self, p: &Vector) -> ConnectionCoeffs {
        let mut c = self.inner.coeffs_at(p);
        let (k, i, j) = self.entry;
        c.set(k, i, j, c.get(k, i, j) + self.delta);
        c
    }
}

pub fn christoffel_at(chart: &TriadChart, p: &TriadPoint) -> Result<ConnectionCoeffs> {
    chart.check_point(p)?;
    Ok(StandardConnection::new(chart).coeffs_at(&p.coords))
}

fn central<F: Fn(&Vector) -> Vector>(f: F, p: &Vector, dir: &Vector, h: f64) -> Vector {
    (f(&(p + dir * h)) - f(&(p - dir * h))) / (2.0 * h)
}

fn unit(d: usize, a: usize) -> Vector {
    let mut e = Vector::zeros(d);
    e[a] = 1.0;
    e
}

/// `∇_X Y` at `X.base`, with the derivative of `Y` by central differences.
pub fn cov_deriv<F>(chart: &TriadChart, coeffs: &ConnectionCoeffs, x: &Vector, y: F) -> Vector
where
    F: Fn(&Vector) -> Vector,
{
    let p = &coeffs.base.coords;
    let dy = central(&y, p, x, chart.fd_step());
    dy + coeffs.apply(x, &y(p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorsionSample {
    pub base: TriadPoint,
    pub pairs: Vec<(Vector, Vector)>,
    pub t: Vec<Vector>,
    pub t_pi: Vec<Vector>,
}

pub fn torsion(chart: &TriadChart, coeffs: &ConnectionCoeffs, pairs: &[(Vector, Vector)]) -> TorsionSample {
    let p = &coeffs.base.coords;
    let t: Vec<Vector> = pairs.iter().map(|(v, w)| coeffs.torsion(v, w)).collect();
    let t_pi = t.iter().map(|x| chart.project(p, x)).collect();
    TorsionSample { base: coeffs.base.clone(), pairs: pairs.to_vec(), t, t_pi }
}

/// Solves the defining axioms as a linear system in the `d³` symbols, with
/// frame derivatives by central differences. Independent of the closed form.
pub fn christoffel_from_axioms(chart: &TriadChart, p: &TriadPoint) -> Result<ConnectionCoeffs> {
    chart.check_point(p)?;
    let d = chart.dim();
    let n = chart.n();
    let h = chart.fd_step();
    let q = &p.coords;
    let nu = d * d * d;
    let var = |k: usize, i: usize, j: usize| (k * d + i) * d + j;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();

    let g = chart.metric(q);
    let pm = chart.project_matrix(q);
    let jm = chart.j_matrix(q);
    let lam = chart.lambda_covector(q);
    let r = chart.reeb(q);
    let frame = chart.frame(q);
    let xi: Vec<Vector> = (0..2 * n).map(|l| frame.column(l).into_owned()).collect();
    let dg: Vec<Matrix> = (0..d)
        .map(|a| {
            let e = unit(d, a);
            (chart.metric(&(q + &e * h)) - chart.metric(&(q - &e * h))) / (2.0 * h)
        })
        .collect();
    let dr: Vec<Vector> = (0..d).map(|a| central(|x| chart.reeb(x), q, &unit(d, a), h)).collect();

    // metric: ∂_a g_bc = Γ^m_ab g_mc + Γ^m_ac g_bm
    for a in 0..d {
        for b in 0..d {
            for c in b..d {
                let mut row = vec![0.0; nu];
                for m in 0..d {
                    row[var(m, a, b)] += g[(m, c)];
                    row[var(m, a, c)] += g[(b, m)];
                }
                rows.push(row);
                rhs.push(dg[a][(b, c)]);
            }
        }
    }
    // T(R, ·) = 0
    for b in 0..d {
        for c in 0..d {
            let mut row = vec![0.0; nu];
            for a in 0..d {
                row[var(c, a, b)] += r[a];
                row[var(c, b, a)] -= r[a];
            }
            rows.push(row);
            rhs.push(0.0);
        }
    }
    // ∇_R R = 0
    for c in 0..d {
        let mut row = vec![0.0; nu];
        let mut b0 = 0.0;
        for a in 0..d {
            b0 -= r[a] * dr[a][c];
            for b in 0..d {
                row[var(c, a, b)] += r[a] * r[b];
            }
        }
        rows.push(row);
        rhs.push(b0);
    }
    // λ(∇_Y R) = 0 for Y ∈ ξ
    for y in &xi {
        let mut row = vec![0.0; nu];
        let mut b0 = 0.0;
        for c in 0..d {
            for a in 0..d {
                b0 -= lam[c] * y[a] * dr[a][c];
                for b in 0..d {
                    row[var(c, a, b)] += lam[c] * y[a] * r[b];
                }
            }
        }
        rows.push(row);
        rhs.push(b0);
    }
    // Π∇_a(J ε) − JΠ∇_a ε = 0 for frame fields ε of ξ
    let pe: Vec<Vector> = (0..d).map(|c| pm.column(c).into_owned()).collect();
    let jpe: Vec<Vector> = (0..d).map(|c| (&jm * &pm).column(c).into_owned()).collect();
    for l in 0..2 * n {
        let eps = |x: &Vector| chart.frame(x).column(l).into_owned();
        let jeps = |x: &Vector| chart.j(x, &chart.frame(x).column(l).into_owned());
        let je = chart.j(q, &xi[l]);
        for a in 0..d {
            let ea = unit(d, a);
            let known = &pm * central(jeps, q, &ea, h) - &jm * &pm * central(eps, q, &ea, h);
            for m in 0..d {
                let mut row = vec![0.0; nu];
                for c in 0..d {
                    for b in 0..d {
                        row[var(c, a, b)] += pe[c][m] * je[b] - jpe[c][m] * xi[l][b];
                    }
                }
                rows.push(row);
                rhs.push(-known[m]);
            }
        }
    }
    // T^π(JY, Z) + T^π(JZ, Y) = 0
    let torsion_row = |v: &Vector, w: &Vector, sign: f64, row: &mut Vec<f64>, m: usize| {
        for c in 0..d {
            for a in 0..d {
                for b in 0..d {
                    row[var(c, a, b)] += sign * pe[c][m] * (v[a] * w[b] - w[a] * v[b]);
                }
            }
        }
    };
    for l in 0..2 * n {
        for k in l..2 * n {
            let jl = chart.j(q, &xi[l]);
            let jk = chart.j(q, &xi[k]);
            for m in 0..d {
                let mut row = vec![0.0; nu];
                torsion_row(&jl, &xi[k], 1.0, &mut row, m);
                torsion_row(&jk, &xi[l], 1.0, &mut row, m);
                rows.push(row);
                rhs.push(0.0);
            }
        }
    }
    // ∇_Y R − J∇_{JY} R = 0
    for y in &xi {
        let jy = chart.j(q, y);
        let known: Vector = (0..d).fold(Vector::zeros(d), |acc, a| acc + &dr[a] * y[a])
            - &jm * (0..d).fold(Vector::zeros(d), |acc, a| acc + &dr[a] * jy[a]);
        for m in 0..d {
            let mut row = vec![0.0; nu];
            for c in 0..d {
                let jec = jm.column(c);
                for a in 0..d {
                    for b in 0..d {
                        row[var(c, a, b)] += unit(d, c)[m] * y[a] * r[b] - jec[m] * jy[a] * r[b];
                    }
                }
            }
            rows.push(row);
            rhs.push(-known[m]);
        }
    }
    // λ(T(Y, Z)) = dλ(Y, Z) on ξ
    for l in 0..2 * n {
        for k in l + 1..2 * n {
            let mut row = vec![0.0; nu];
            for c in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        row[var(c, a, b)] += lam[c] * (xi[l][a] * xi[k][b] - xi[k][a] * xi[l][b]);
                    }
                }
            }
            rows.push(row);
            rhs.push(chart.dlambda(&xi[l], &xi[k]));
        }
    }

    let a = Matrix::from_fn(rows.len(), nu, |i, j| rows[i][j]);
    let b = Vector::from_vec(rhs);
    let sv = a.singular_values();
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(CoreError::Singular("triad connection axiom system"));
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * &b;
    let sol = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(CoreError::Singular("triad connection axiom system"))?;
    let mut c = ConnectionCoeffs::zeros(p.clone());
    c.gamma.copy_from_slice(sol.as_slice());
    Ok(c)
}

/// Matrices `Ω_{ab}` of the curvature of `∇^π = Π∇|_ξ` on coordinate pairs,
/// acting on ξ-frame coefficients. Entry `[a·d + b]`.
pub fn hermitian_curvature<C: ConnectionField + ?Sized>(chart: &TriadChart, conn: &C, p: &Vector) -> Vec<Matrix> {
    let d = chart.dim();
    let h = chart.fd_step();
    let omegas = |q: &Vector| -> Vec<Matrix> { connection_matrices(chart, conn, q) };
    let w0 = omegas(p);
    let dw: Vec<Vec<Matrix>> = (0..d)
        .map(|a| {
            let e = unit(d, a);
            let plus = omegas(&(p + &e * h));
            let minus = omegas(&(p - &e * h));
            plus.iter().zip(&minus).map(|(x, y)| (x - y) / (2.0 * h)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            out.push(&dw[a][b] - &dw[b][a] + &w0[a] * &w0[b] - &w0[b] * &w0[a]);
        }
    }
    out
}

/// `ω_a[k][l] = ⟨∇^π_{∂a} ε_l, ε_k⟩` for the ξ-frame `ε`.
pub fn connection_matrices<C: ConnectionField + ?Sized>(chart: &TriadChart, conn: &C, q: &Vector) -> Vec<Matrix> {
    let d = chart.dim();
    let m = 2 * chart.n();
    let h = chart.fd_step();
    let coeffs = conn.coeffs_at(q);
    let frame = chart.frame(q);
    (0..d)
        .map(|a| {
            let e = unit(d, a);
            let df = (chart.frame(&(q + &e * h)) - chart.frame(&(q - &e * h))) / (2.0 * h);
            let mut w = Matrix::zeros(m, m);
            for l in 0..m {
                let el = frame.column(l).into_owned();
                let v = chart.project(q, &(df.column(l) + coeffs.apply(&e, &el)));
                let c = chart.frame_coeffs(q, &v);
                for k in 0..m {
                    w[(k, l)] = c[k];
                }
            }
            w
        })
        .collect()
}

pub const AXIOM_KEYS: [&str; 8] = [
    "axiom1_metric",
    "axiom2_reeb_torsion",
    "axiom3_reeb_parallel",
    "axiom4_hermitian",
    "axiom5_torsion_pi",
    "axiom6_dbar_reeb",
    "cor_lambda_torsion",
    "cor_nabla_reeb",
];

/// Max residual of each defining property over random points and vectors.
pub fn verify_triad_axioms<C: ConnectionField + ?Sized>(
    chart: &TriadChart,
    conn: &C,
    samples: usize,
    seed: u64,
) -> Result<ResidualReport> {
    if samples == 0 {
        return Err(CoreError::InvalidParameter { name: "samples", reason: "must be at least 1".into() });
    }
    let d = chart.dim();
    let h = chart.fd_step();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ResidualReport::new();
    for k in AXIOM_KEYS {
        rep.insert(k, 0.0);
    }
    let rv = |rng: &mut ChaCha8Rng, s: f64| Vector::from_fn(d, |_, _| rng.random_range(-s..s));
    for _ in 0..samples {
        let p = rv(&mut rng, 2.0);
        let coeffs = conn.coeffs_at(&p);
        let x = rv(&mut rng, 1.0);
        let c1 = rv(&mut rng, 1.0);
        let c2 = rv(&mut rng, 1.0);
        let y = chart.project(&p, &c1);
        let z = chart.project(&p, &c2);
        let r = chart.reeb(&p);
        let reeb = |q: &Vector| chart.reeb(q);
        let nabla = |v: &Vector, f: &dyn Fn(&Vector) -> Vector| cov_deriv(chart, &coeffs, v, f);

        let dgyz = {
            let plus = chart.inner(&(&p + &x * h), &c1, &c2);
            let minus = chart.inner(&(&p - &x * h), &c1, &c2);
            (plus - minus) / (2.0 * h)
        };
        let m1 = dgyz - chart.inner(&p, &coeffs.apply(&x, &c1), &c2) - chart.inner(&p, &c1, &coeffs.apply(&x, &c2));
        rep.insert_max("axiom1_metric", m1.abs());

        rep.insert_max("axiom2_reeb_torsion", coeffs.torsion(&r, &x).amax());

        let nrr = nabla(&r, &reeb);
        let nyr = nabla(&y, &reeb);
        rep.insert_max("axiom3_reeb_parallel", nrr.amax().max(chart.lambda(&p, &nyr).abs()));

        let yfield = |q: &Vector| chart.project(q, &c1);
        let jyfield = |q: &Vector| chart.j(q, &chart.project(q, &c1));
        let lhs = chart.project(&p, &nabla(&x, &jyfield));
        let rhs = chart.j(&p, &nabla(&x, &yfield));
        rep.insert_max("axiom4_hermitian", (lhs - rhs).amax());

        let tp = |v: &Vector, w: &Vector| chart.project(&p, &coeffs.torsion(v, w));
        let a5 = tp(&chart.j(&p, &y), &z) + tp(&chart.j(&p, &z), &y);
        rep.insert_max("axiom5_torsion_pi", a5.amax());

        let jy = chart.j(&p, &y);
        let a6 = &nyr - chart.j(&p, &nabla(&jy, &reeb));
        rep.insert_max("axiom6_dbar_reeb", a6.amax());

        let lt = chart.lambda(&p, &coeffs.torsion(&y, &z)) - chart.dlambda(&y, &z);
        rep.insert_max("cor_lambda_torsion", lt.abs());

        let lrj = lie_derivative_rj(chart, &TriadPoint { coords: p.clone() })?;
        let expect = &lrj * chart.j(&p, &x) * 0.5;
        rep.insert_max("cor_nabla_reeb", (nabla(&x, &reeb) - expect).amax());
    }
    Ok(rep)
}

/// Errors with the first axiom whose residual exceeds `tol`.
pub fn require_axioms(report: &ResidualReport, tol: f64) -> Result<()> {
    match report.first_violation(tol) {
        Some((name, value)) => Err(CoreError::AxiomViolation { name: name.to_string(), value, tol }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    #[test]
    fn axiom_solve_reproduces_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2] {
            // frame data is at most quadratic, so a coarse central step is exact
            let ch = TriadChart::standard(n).unwrap().with_fd_step(1e-2);
            for _ in 0..100 {
                let p = Vector::from_fn(ch.dim(), |_, _| rng.random_range(-2.0..2.0));
                let tp = TriadPoint::new(p).unwrap();
                let solved = christoffel_from_axioms(&ch, &tp).unwrap();
                let closed = christoffel_at(&ch, &tp).unwrap();
                let err = solved
                    .as_slice()
                    .iter()
                    .zip(closed.as_slice())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err < 1e-10, "n={n} err={err:e} p={:?}", tp.coords.as_slice());
            }
        }
    }

    #[test]
    fn corollary_examples() {
        let ch = TriadChart::standard(1).unwrap();
        let p = TriadPoint::from_slice(&[0.5, -1.5, 2.0]).unwrap();
        let c = christoffel_at(&ch, &p).unwrap();
        let e1 = ch.frame(&p.coords).column(0).into_owned();
        let e2 = ch.frame(&p.coords).column(1).into_owned();
        assert!((ch.lambda(&p.coords, &c.torsion(&e1, &e2)) - 1.0).abs() < 1e-15);
        let r = ch.reeb(&p.coords);
        for y in [v(&[1.0, 0.0, 0.0]), v(&[0.3, -2.0, 0.7])] {
            assert!(c.torsion(&r, &y).amax() == 0.0);
            let nr = cov_deriv(&ch, &c, &y, |q| ch.reeb(q));
            assert!(nr.amax() < 1e-12);
        }
    }

    #[test]
    fn torsion_pi_vanishes_and_is_antisymmetric() {
        let ch = TriadChart::standard(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = Vector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let c = StandardConnection::new(&ch).coeffs_at(&p);
            let w = ch.project(&p, &Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)));
            let u = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let s = torsion(&ch, &c, &[(ch.j(&p, &w), w.clone()), (u.clone(), w.clone()), (w.clone(), u.clone())]);
            assert!(s.t_pi[0].amax() < 1e-10);
            assert!((&s.t[1] + &s.t[2]).amax() == 0.0);
        }
    }

    #[test]
    fn cov_deriv_leibniz_and_metric_compatibility_converge() {
        let ch = TriadChart::standard(1).unwrap();
        let p = v(&[0.3, 0.8, -0.4]);
        let x = v(&[0.6, -0.2, 0.9]);
        let f = |q: &Vector| (q[0] * 1.3).sin() + q[1] * q[2];
        let yf = |q: &Vector| v(&[q[1].cos(), q[0] * q[2], 1.0 + q[1] * q[1]]);
        let zf = |q: &Vector| v(&[q[2], (q[0] + q[1]).exp(), q[0]]);
        let errs: Vec<(f64, f64)> = [1e-2, 5e-3]
            .iter()
            .map(|&h| {
                let chh = ch.clone().with_fd_step(h);
                let c = StandardConnection::new(&chh).coeffs_at(&p);
                let fy = |q: &Vector| yf(q) * f(q);
                let xf = (f(&(&p + &x * h)) - f(&(&p - &x * h))) / (2.0 * h);
                let lhs = cov_deriv(&chh, &c, &x, fy);
                let rhs = cov_deriv(&chh, &c, &x, yf) * f(&p) + yf(&p) * xf;
                let leib = (lhs - rhs).amax();
                let gyz = |q: &Vector| chh.inner(q, &yf(q), &zf(q));
                let dg = (gyz(&(&p + &x * h)) - gyz(&(&p - &x * h))) / (2.0 * h);
                let met = dg
                    - chh.inner(&p, &cov_deriv(&chh, &c, &x, yf), &zf(&p))
                    - chh.inner(&p, &yf(&p), &cov_deriv(&chh, &c, &x, zf));
                (leib, met.abs())
            })
            .collect();
        assert!(errs[0].0 < 1e-3 && errs[1].0 < errs[0].0);
        let order = (errs[0].1 / errs[1].1).log2();
        assert!(order > 1.8, "metric compatibility order {order}");
    }

    #[test]
    fn standard_axioms_hold_and_corruption_is_detected() {
        for n in [1, 2] {
            let ch = TriadChart::standard(n).unwrap();
            let rep = verify_triad_axioms(&ch, &StandardConnection::new(&ch), 100, 7).unwrap();
            assert!(rep.max_value() < 1e-6, "{rep:?}");
            require_axioms(&rep, 1e-6).unwrap();
            let bad = PerturbedConnection { inner: StandardConnection::new(&ch), entry: (0, 0, 0), delta: 1e-2 };
            let rep = verify_triad_axioms(&ch, &bad, 100, 7).unwrap();
            assert!(rep.max_value() > 1e-3);
            assert!(matches!(require_axioms(&rep, 1e-6), Err(CoreError::AxiomViolation { .. })));
        }
    }

    #[test]
    fn hermitian_curvature_vanishes_and_is_skew() {
        let ch = TriadChart::standard(2).unwrap();
        let p = v(&[0.1, -0.4, 1.2, 0.7, -0.3]);
        let om = hermitian_curvature(&ch, &StandardConnection::new(&ch), &p);
        assert!(om.iter().all(|m| m.amax() < 1e-8));
        let bad = PerturbedConnection { inner: StandardConnection::new(&ch), entry: (0, 2, 1), delta: 0.3 };
        let w = connection_matrices(&ch, &bad, &p);
        assert!(w.iter().any(|m| m.amax() > 0.1));
    }
}
