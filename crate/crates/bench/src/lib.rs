//! Fixtures shared by the kernel benchmarks.

use contacton_core::families;
use contacton_core::fields::{MapField, StripGrid};
use contacton_core::solver::SolveConfig;
use contacton_core::{HamiltonianConfig, LegendrianSpec, TriadChart};

pub fn chart() -> TriadChart {
    TriadChart::standard(1).expect("n = 1 is valid")
}

pub fn grid(m: usize) -> StripGrid {
    StripGrid::new(-1.0, 1.0, m, m / 2).expect("m >= 8")
}

pub fn holomorphic(m: usize) -> MapField {
    let c = chart();
    MapField::from_fn(&c, grid(m), families::holomorphic_lift(&c, 0.3, 1.0, 0.2)).expect("finite family")
}

/// The trivial-chord strip between the horizontal Legendrians at heights 0 and 1.
pub fn trivial_strip(m: usize, c: f64) -> SolveConfig {
    let ch = chart();
    let r0 = LegendrianSpec::horizontal(&ch, 0.0).expect("horizontal");
    let r1 = LegendrianSpec::horizontal(&ch, 1.0).expect("horizontal");
    SolveConfig::new(grid(m), r0, r1, HamiltonianConfig::Constant { c })
}
