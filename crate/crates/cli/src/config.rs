use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use contacton_core::fields::StripGrid;
use contacton_core::validators::{suite_base_grid, Suite};
use contacton_core::{HamiltonianConfig, ManifoldConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bumped whenever a manifest field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SuiteName {
    Triad,
    Flow,
    Action,
    Gauge,
    Fundamental,
    Dulambda,
    Isothermal,
    Weitzenbock,
    Calculus,
    EnergyAction,
}

impl SuiteName {
    pub const ALL: [SuiteName; 10] = [
        SuiteName::Triad,
        SuiteName::Flow,
        SuiteName::Action,
        SuiteName::Gauge,
        SuiteName::Fundamental,
        SuiteName::Dulambda,
        SuiteName::Isothermal,
        SuiteName::Weitzenbock,
        SuiteName::Calculus,
        SuiteName::EnergyAction,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::Triad => "triad",
            SuiteName::Flow => "flow",
            SuiteName::Action => "action",
            SuiteName::Gauge => "gauge",
            SuiteName::Fundamental => "fundamental",
            SuiteName::Dulambda => "dulambda",
            SuiteName::Isothermal => "isothermal",
            SuiteName::Weitzenbock => "weitzenbock",
            SuiteName::Calculus => "calculus",
            SuiteName::EnergyAction => "energy_action",
        }
    }

    /// The on-shell validator behind this name, if it is one.
    pub fn validator(&self) -> Option<Suite> {
        match self {
            SuiteName::Fundamental => Some(Suite::Fundamental),
            SuiteName::Dulambda => Some(Suite::Dulambda),
            SuiteName::Isothermal => Some(Suite::Isothermal),
            SuiteName::Weitzenbock => Some(Suite::Weitzenbock),
            SuiteName::Calculus => Some(Suite::Calculus),
            _ => None,
        }
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub axioms: f64,
    pub exponent: f64,
    pub action: f64,
    pub variation: f64,
    pub lifting: f64,
    /// Gauge residuals must stay below `gauge_scale · Δ²`.
    pub gauge_scale: f64,
    pub order: f64,
    pub residual: f64,
    pub energy_action: f64,
    pub fit: f64,
    pub charge: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            axioms: 1e-6,
            exponent: 1e-8,
            action: 1e-5,
            variation: 5e-3,
            lifting: 1e-5,
            gauge_scale: 10.0,
            order: 1.8,
            residual: 1e-5,
            energy_action: 1e-5,
            fit: 1e-3,
            charge: 1e-4,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 11] {
        [
            ("axioms", self.axioms),
            ("exponent", self.exponent),
            ("action", self.action),
            ("variation", self.variation),
            ("lifting", self.lifting),
            ("gauge_scale", self.gauge_scale),
            ("order", self.order),
            ("residual", self.residual),
            ("energy_action", self.energy_action),
            ("fit", self.fit),
            ("charge", self.charge),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub manifold: ManifoldConfig,
    pub hamiltonian: HamiltonianConfig,
    #[serde(default = "suite_base_grid")]
    pub grid: StripGrid,
    #[serde(default = "all_suites")]
    pub suites: Vec<SuiteName>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Number of grids in each convergence table.
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Run suites concurrently; results are still written in suite order.
    #[serde(default)]
    pub parallel: bool,
}

fn all_suites() -> Vec<SuiteName> {
    SuiteName::ALL.to_vec()
}

fn default_refine() -> usize {
    3
}

/// A config that parsed but does not satisfy the schema; maps to exit code 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SchemaError> {
        let bad = |path: &str, why: String| SchemaError(format!("{path}: {why}"));
        self.manifold.chart().map_err(|e| bad("manifold", e.to_string()))?;
        let n = match self.manifold {
            ManifoldConfig::StandardR2np1 { n } => n,
        };
        contacton_core::HamiltonianSpec::from_config(&self.hamiltonian, n).map_err(|e| bad("hamiltonian", e.to_string()))?;
        self.grid.validate().map_err(|e| bad("grid", e.to_string()))?;
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(&format!("tolerances.{name}"), format!("must be positive and finite, got {v}")));
            }
        }
        if self.suites.is_empty() {
            return Err(bad("suites", "at least one suite is required".into()));
        }
        if self.refine < 2 {
            return Err(bad("refine", format!("need at least 2 grids to measure an order, got {}", self.refine)));
        }
        Ok(())
    }
}

/// Parses JSON into `T`, reporting the failing field path on error.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SchemaError(format!("at `{path}`: {}", e.into_inner()))
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, anyhow::Error> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
    parse_json(&text).map_err(|e| anyhow::Error::new(SchemaError(format!("{}: {e}", path.display()))))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, anyhow::Error> {
    let cfg: RunConfig = load_json(path)?;
    cfg.validate().map_err(|e| anyhow::Error::new(SchemaError(format!("{}: {e}", path.display()))))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: RunConfig = parse_json(r#"{"hamiltonian":{"type":"linear_z"}}"#).unwrap();
        assert_eq!(cfg.suites.len(), 10);
        assert_eq!(cfg.grid, suite_base_grid());
        assert_eq!(cfg.refine, 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_and_unknown_fields_name_the_path() {
        let e = parse_json::<RunConfig>(r#"{"seed":3}"#).unwrap_err();
        assert!(e.0.contains("hamiltonian"), "{e}");
        let e = parse_json::<RunConfig>(r#"{"hamiltonian":{"type":"constant","c":1},"tolerances":{"axiom":1}}"#).unwrap_err();
        assert!(e.0.contains("tolerances") && e.0.contains("axiom"), "{e}");
        let e = parse_json::<RunConfig>(r#"{"hamiltonian":{"type":"constant","c":1},"suites":["triad","nope"]}"#).unwrap_err();
        assert!(e.0.contains("suites[1]"), "{e}");
    }

    #[test]
    fn validation_rejects_nonpositive_tolerances() {
        let mut cfg: RunConfig = parse_json(r#"{"hamiltonian":{"type":"constant","c":0.5}}"#).unwrap();
        cfg.tolerances.fit = 0.0;
        assert!(cfg.validate().unwrap_err().0.contains("tolerances.fit"));
        cfg.tolerances.fit = 1e-3;
        cfg.refine = 1;
        assert!(cfg.validate().is_err());
    }
}
