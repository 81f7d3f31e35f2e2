//! Contact Hamiltonians `H(t, p)` with their spatial differentials.

use exmex::prelude::*;
use exmex::FlatEx;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::triad::{Matrix, Vector};

/// Serialized form: `{"type":"constant","c":..}`, `{"type":"linear_z"}` or
/// `{"type":"expr","H":..,"dH":[..],"RH":..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianConfig {
    Constant { c: f64 },
    LinearZ,
    Expr {
        #[serde(rename = "H")]
        h: String,
        #[serde(rename = "dH")]
        dh: Vec<String>,
        #[serde(rename = "RH")]
        rh: String,
    },
}

#[derive(Clone, Debug)]
pub enum HamiltonianSpec {
    Constant { c: f64 },
    /// `H = z`.
    LinearZ,
    Expr(Box<ExprHamiltonian>),
}

impl HamiltonianSpec {
    pub fn zero() -> Self {
        Self::Constant { c: 0.0 }
    }

    pub fn from_config(cfg: &HamiltonianConfig, n: usize) -> Result<Self> {
        Ok(match cfg {
            HamiltonianConfig::Constant { c } => {
                if !c.is_finite() {
                    return Err(CoreError::NonFinite);
                }
                Self::Constant { c: *c }
            }
            HamiltonianConfig::LinearZ => Self::LinearZ,
            HamiltonianConfig::Expr { h, dh, rh } => Self::Expr(Box::new(ExprHamiltonian::new(n, h, dh, rh)?)),
        })
    }

    pub fn to_config(&self) -> HamiltonianConfig {
        match self {
            Self::Constant { c } => HamiltonianConfig::Constant { c: *c },
            Self::LinearZ => HamiltonianConfig::LinearZ,
            Self::Expr(e) => HamiltonianConfig::Expr { h: e.h_src.clone(), dh: e.dh_src.clone(), rh: e.rh_src.clone() },
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::LinearZ => "linear_z",
            Self::Expr(_) => "expr",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Constant { c } if *c == 0.0)
    }

    /// `R[H]` when it is constant in `(t, p)`.
    pub fn reeb_constant(&self) -> Option<f64> {
        match self {
            Self::Constant { .. } => Some(0.0),
            Self::LinearZ => Some(1.0),
            Self::Expr(_) => None,
        }
    }

    pub fn value(&self, t: f64, p: &[f64]) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::LinearZ => p[p.len() - 1],
            Self::Expr(e) => e.value(t, p),
        }
    }

    pub fn gradient_into(&self, t: f64, p: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            Self::LinearZ => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[p.len() - 1] = 1.0;
            }
            Self::Expr(e) => e.gradient_into(t, p, out),
        }
    }

    pub fn gradient(&self, t: f64, p: &[f64]) -> Vector {
        let mut g = Vector::zeros(p.len());
        self.gradient_into(t, p, g.as_mut_slice());
        g
    }

    pub fn reeb_derivative(&self, t: f64, p: &[f64]) -> f64 {
        match self {
            Self::Expr(e) => e.reeb(t, p),
            _ => self.reeb_constant().unwrap_or(0.0),
        }
    }

    /// Spatial Hessian; central differences of the gradient for expressions.
    pub fn hessian(&self, t: f64, p: &[f64]) -> Matrix {
        let d = p.len();
        match self {
            Self::Expr(_) => {
                let h = 1e-5;
                let mut m = Matrix::zeros(d, d);
                let mut q = p.to_vec();
                let mut gp = vec![0.0; d];
                let mut gm = vec![0.0; d];
                for b in 0..d {
                    q[b] = p[b] + h;
                    self.gradient_into(t, &q, &mut gp);
                    q[b] = p[b] - h;
                    self.gradient_into(t, &q, &mut gm);
                    q[b] = p[b];
                    for a in 0..d {
                        m[(a, b)] = (gp[a] - gm[a]) / (2.0 * h);
                    }
                }
                (&m + m.transpose()) * 0.5
            }
            _ => Matrix::zeros(d, d),
        }
    }

    /// Gradient of `R[H]`, the last row of the Hessian in the standard chart.
    pub fn reeb_gradient(&self, t: f64, p: &[f64]) -> Vector {
        match self {
            Self::Expr(_) => {
                let hs = self.hessian(t, p);
                hs.row(p.len() - 1).transpose()
            }
            _ => Vector::zeros(p.len()),
        }
    }

    /// Max of `|dH − FD(H)|` and `|R[H] − dH(∂z)|` at `(t, p)`.
    pub fn consistency_residual(&self, t: f64, p: &[f64], h: f64) -> f64 {
        let d = p.len();
        let g = self.gradient(t, p);
        let mut q = p.to_vec();
        let mut worst: f64 = 0.0;
        for b in 0..d {
            q[b] = p[b] + h;
            let fp = self.value(t, &q);
            q[b] = p[b] - h;
            let fm = self.value(t, &q);
            q[b] = p[b];
            worst = worst.max(((fp - fm) / (2.0 * h) - g[b]).abs());
        }
        worst.max((self.reeb_derivative(t, p) - g[d - 1]).abs())
    }
}

/// User expression in the variables `t, x1..xn, y1..yn, z` (and `x, y` when n = 1).
#[derive(Clone, Debug)]
pub struct ExprHamiltonian {
    n: usize,
    h_src: String,
    dh_src: Vec<String>,
    rh_src: String,
    h: Compiled,
    dh: Vec<Compiled>,
    rh: Compiled,
}

#[derive(Clone, Debug)]
struct Compiled {
    ex: FlatEx<f64>,
    /// Slot of each expression variable in `[t, p_0, .., p_2n]`.
    slots: Vec<usize>,
}

impl Compiled {
    fn new(src: &str, n: usize) -> Result<Self> {
        let ex = exmex::parse::<f64>(src).map_err(|e| CoreError::Expression(format!("`{src}`: {e}")))?;
        let mut slots = Vec::new();
        for name in ex.var_names() {
            slots.push(slot_of(name, n).ok_or_else(|| CoreError::Expression(format!("unknown variable `{name}` in `{src}`")))?);
        }
        Ok(Self { ex, slots })
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        let mut vals = [0.0f64; 16];
        let mut heap;
        let args: &mut [f64] = if self.slots.len() <= 16 {
            &mut vals[..self.slots.len()]
        } else {
            heap = vec![0.0; self.slots.len()];
            &mut heap
        };
        for (a, &s) in args.iter_mut().zip(&self.slots) {
            *a = if s == 0 { t } else { p[s - 1] };
        }
        self.ex.eval(args).unwrap_or(f64::NAN)
    }
}

fn slot_of(name: &str, n: usize) -> Option<usize> {
    match name {
        "t" => Some(0),
        "z" => Some(2 * n + 1),
        "x" if n == 1 => Some(1),
        "y" if n == 1 => Some(2),
        _ => {
            let (head, idx) = name.split_at(1);
            let i: usize = idx.parse().ok()?;
            if i == 0 || i > n {
                return None;
            }
            match head {
                "x" => Some(i),
                "y" => Some(n + i),
                _ => None,
            }
        }
    }
}

impl ExprHamiltonian {
    pub fn new(n: usize, h: &str, dh: &[String], rh: &str) -> Result<Self> {
        if dh.len() != 2 * n + 1 {
            return Err(CoreError::DimensionMismatch { expected: 2 * n + 1, got: dh.len() });
        }
        let out = Self {
            n,
            h_src: h.to_string(),
            dh_src: dh.to_vec(),
            rh_src: rh.to_string(),
            h: Compiled::new(h, n)?,
            dh: dh.iter().map(|s| Compiled::new(s, n)).collect::<Result<_>>()?,
            rh: Compiled::new(rh, n)?,
        };
        let probe = vec![0.1; 2 * n + 1];
        if !out.value(0.3, &probe).is_finite() {
            return Err(CoreError::Expression(format!("`{h}` does not evaluate")));
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, t: f64, p: &[f64]) -> f64 {
        self.h.eval(t, p)
    }

    pub fn gradient_into(&self, t: f64, p: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.dh) {
            *o = c.eval(t, p);
        }
    }

    pub fn reeb(&self, t: f64, p: &[f64]) -> f64 {
        self.rh.eval(t, p)
    }
}
