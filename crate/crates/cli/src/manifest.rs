use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::suites::{run_one, to_json, Artifact, SuiteContext, SuiteResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

/// Everything needed to trace a number back to its suite, grid and seed.
/// Contains no timestamps, so equal configs give byte-identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub suites: BTreeMap<String, f64>,
}

/// Hash of the config as it was run, after defaults and overrides.
pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

pub fn execute(cfg: &RunConfig) -> Result<(RunManifest, Timing, Vec<Artifact>)> {
    let ctx = SuiteContext::new(cfg)?;
    let start = Instant::now();
    let timed = |s| {
        let t0 = Instant::now();
        let (r, a) = run_one(&ctx, s);
        (r, a, t0.elapsed().as_secs_f64())
    };
    let outs: Vec<_> = if cfg.parallel { cfg.suites.par_iter().map(|&s| timed(s)).collect() } else { cfg.suites.iter().map(|&s| timed(s)).collect() };
    let mut timing = Timing { total_seconds: 0.0, suites: BTreeMap::new() };
    let mut suites = Vec::with_capacity(outs.len());
    let mut artifacts = Vec::new();
    for (r, a, secs) in outs {
        timing.suites.insert(r.suite.to_string(), secs);
        suites.push(r);
        artifacts.extend(a);
    }
    timing.total_seconds = start.elapsed().as_secs_f64();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        config: cfg.clone(),
        passed: suites.iter().all(|s| s.passed),
        suites,
    };
    Ok((manifest, timing, artifacts))
}

/// The single writer for a run directory.
pub fn write_run(dir: &Path, manifest: &RunManifest, timing: &Timing, artifacts: &[Artifact]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &a.bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    fs::write(dir.join(TIMING_FILE), to_json(timing)?)?;
    fs::write(dir.join(MANIFEST_FILE), to_json(manifest)?)?;
    Ok(())
}

/// One row of the pass/fail matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    pub manifest: String,
    pub schema_version: u64,
    pub artifact_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub suite: String,
    pub passed: bool,
}

/// One residual at one grid, with the order relative to the next coarser grid
/// seen for the same suite and key.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderRow {
    pub suite: String,
    pub key: String,
    pub m: u64,
    pub n: u64,
    pub h: f64,
    pub value: f64,
    pub order_estimate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub manifests: usize,
    pub skipped: Vec<String>,
    pub matrix: Vec<MatrixRow>,
    pub orders: Vec<OrderRow>,
}

/// `(h, m, n, value)`.
type GridPoint = (f64, u64, u64, f64);

/// `dir/manifest.json` and `dir/*/manifest.json`, sorted.
fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let top = dir.join(MANIFEST_FILE);
    if top.is_file() {
        found.push(top);
    }
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path().join(MANIFEST_FILE);
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    Ok(found)
}

/// Merges the manifests under `dir`. Unreadable manifests are skipped with a
/// warning; manifests of another schema version appear in the matrix but
/// their tables are not merged.
pub fn build_report(dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    // the first manifest to supply a grid for a (suite, key) wins
    let mut points: BTreeMap<(String, String), Vec<GridPoint>> = BTreeMap::new();
    for path in find_manifests(dir)? {
        let name = path.parent().and_then(|p| p.strip_prefix(dir).ok()).map(|p| p.display().to_string()).unwrap_or_default();
        let name = if name.is_empty() { ".".to_string() } else { name };
        let v: Value = match fs::read(&path).map_err(anyhow::Error::from).and_then(|b| Ok(serde_json::from_slice(&b)?)) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                report.skipped.push(name);
                continue;
            }
        };
        let (Some(schema), Some(suites)) = (v["schema_version"].as_u64(), v["suites"].as_array()) else {
            eprintln!("warning: skipping {}: not a run manifest", path.display());
            report.skipped.push(name);
            continue;
        };
        report.manifests += 1;
        let version = v["artifact_version"].as_str().unwrap_or("").to_string();
        for s in suites {
            let suite = s["suite"].as_str().unwrap_or("").to_string();
            report.matrix.push(MatrixRow {
                manifest: name.clone(),
                schema_version: schema,
                artifact_version: version.clone(),
                config_sha256: v["config_sha256"].as_str().unwrap_or("").to_string(),
                seed: v["seed"].as_u64().unwrap_or(0),
                suite: suite.clone(),
                passed: s["passed"].as_bool().unwrap_or(false),
            });
            if schema != SCHEMA_VERSION as u64 {
                continue;
            }
            for row in s["table"]["rows"].as_array().into_iter().flatten() {
                let (Some(m), Some(n), Some(h)) = (row["m"].as_u64(), row["n"].as_u64(), row["h"].as_f64()) else { continue };
                for (key, val) in row["report"].as_object().into_iter().flatten() {
                    let Some(val) = val.as_f64() else { continue };
                    if key == "order_estimate" {
                        continue;
                    }
                    let e = points.entry((suite.clone(), key.clone())).or_default();
                    if !e.iter().any(|p| p.0 == h) {
                        e.push((h, m, n, val));
                    }
                }
            }
        }
    }
    if report.manifests == 0 {
        eprintln!("warning: no manifests under {}", dir.display());
    }
    for ((suite, key), mut pts) in points {
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (k, &(h, m, n, value)) in pts.iter().enumerate() {
            let order_estimate = (k > 0).then(|| (pts[k - 1].3 / value).log2()).filter(|o| o.is_finite());
            report.orders.push(OrderRow { suite: suite.clone(), key: key.clone(), m, n, h, value, order_estimate });
        }
    }
    Ok(report)
}

pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), to_json(report)?)?;
    let mut w = csv::Writer::from_path(out.join("matrix.csv"))?;
    w.write_record(["manifest", "schema_version", "artifact_version", "config_sha256", "seed", "suite", "passed"])?;
    for r in &report.matrix {
        w.write_record([r.manifest.clone(), r.schema_version.to_string(), r.artifact_version.clone(), r.config_sha256.clone(), r.seed.to_string(), r.suite.clone(), r.passed.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("orders.csv"))?;
    w.write_record(["suite", "key", "m", "n", "h", "value", "order_estimate"])?;
    for r in &report.orders {
        w.write_record([
            r.suite.clone(),
            r.key.clone(),
            r.m.to_string(),
            r.n.to_string(),
            format!("{:e}", r.h),
            format!("{:e}", r.value),
            r.order_estimate.map(|o| format!("{o:.4}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
