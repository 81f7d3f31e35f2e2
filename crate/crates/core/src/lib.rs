// Negated comparisons are deliberate: a NaN must fail every tolerance check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action;
pub mod connection;
pub mod dynamics;
pub mod error;
pub mod families;
pub mod fields;
pub mod hamiltonian;
pub mod report;
pub mod solver;
pub mod triad;
pub mod validators;

pub use error::{CoreError, Result};
pub use hamiltonian::{HamiltonianConfig, HamiltonianSpec};
pub use report::ResidualReport;
pub use triad::{LegendrianSpec, ManifoldConfig, Matrix, TangentVec, TriadChart, TriadPoint, Vector};
