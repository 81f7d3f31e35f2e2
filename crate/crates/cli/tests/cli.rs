use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contacton"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const CONSTANT: &str = r#"{"hamiltonian":{"type":"constant","c":0.5}}"#;

#[test]
fn triad_check_lists_the_axioms() {
    let o = run(&["triad", "check", "--n", "2", "--samples", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().filter(|k| k.starts_with("axiom")).collect();
    assert_eq!(keys.len(), 6, "{keys:?}");
}

#[test]
fn schema_violations_exit_2_with_the_field_path() {
    let d = TempDir::new().unwrap();
    let missing = write(d.path(), "m.json", r#"{"seed":4,"suites":["triad"]}"#);
    let o = run(&["run", "--config", &missing, "--out", d.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hamiltonian"), "{}", stderr(&o));

    let typo = write(d.path(), "t.json", r#"{"hamiltonian":{"type":"constant","c":1},"suites":["triad","gauge_x"]}"#);
    let o = run(&["run", "--config", &typo]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("suites[1]"), "{}", stderr(&o));

    let neg = write(d.path(), "n.json", r#"{"hamiltonian":{"type":"constant","c":1},"tolerances":{"fit":-1}}"#);
    let o = run(&["run", "--config", &neg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tolerances.fit"), "{}", stderr(&o));

    let o = bin().args(["triad", "check"]).env("CONTACTON_THREADS", "zero").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn energy_action_run_passes_and_records_the_defect() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.json", CONSTANT);
    let out = d.path().join("run");
    let o = run(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--suite", "energy_action", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    let s = &m["suites"][0];
    assert_eq!(s["suite"], "energy_action");
    assert_eq!(s["seed"], 7);
    assert!(s["metrics"]["energy_action_defect"].as_f64().unwrap() < 1e-5);
    assert!(s["grid"]["m"].as_u64().is_some());
    for f in ["field.csv", "iterations.csv", "report.json"] {
        assert!(out.join("energy_action").join(f).is_file(), "{f}");
    }
    assert!(out.join("timing.json").is_file());
}

#[test]
fn manifests_are_byte_identical_across_runs_and_thread_counts() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.json", r#"{"hamiltonian":{"type":"linear_z"},"suites":["flow","action","gauge","calculus"],"seed":11}"#);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(code(&run(&["run", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    let o = bin().args(["run", "--config", &cfg, "--out", b.to_str().unwrap()]).env("CONTACTON_THREADS", "1").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("calculus.csv")).unwrap(), fs::read(b.join("calculus.csv")).unwrap());
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m.get("timing").is_none());
}

#[test]
fn failing_suite_exits_1() {
    let d = TempDir::new().unwrap();
    // an axiom tolerance below roundoff cannot be met
    let cfg = write(d.path(), "c.json", r#"{"hamiltonian":{"type":"constant","c":0.5},"suites":["triad"],"tolerances":{"axioms":1e-30}}"#);
    let o = run(&["run", "--config", &cfg, "--out", d.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let m = json(&d.path().join("o/manifest.json"));
    assert_eq!(m["passed"], false);
    assert!(!m["suites"][0]["failures"].as_array().unwrap().is_empty());
}

#[test]
fn report_merges_refinement_runs_into_orders() {
    let d = TempDir::new().unwrap();
    let root = d.path().join("runs");
    let coarse = write(d.path(), "c1.json", r#"{"hamiltonian":{"type":"constant","c":0},"suites":["dulambda"],"refine":2,"grid":{"tau0":-1,"tau1":1,"m":64,"n":32}}"#);
    let fine = write(d.path(), "c2.json", r#"{"hamiltonian":{"type":"constant","c":0},"suites":["dulambda"],"refine":2,"grid":{"tau0":-1,"tau1":1,"m":128,"n":64}}"#);
    assert_eq!(code(&run(&["run", "--config", &coarse, "--out", root.join("r1").to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["run", "--config", &fine, "--out", root.join("r2").to_str().unwrap()])), 0);
    let o = run(&["report", root.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = json(&root.join("report.json"));
    let rows: Vec<&serde_json::Value> = rep["orders"].as_array().unwrap().iter().filter(|r| r["key"] == "holomorphic.dulambda_l2").collect();
    // 64, 128 from the first run; 128 again and 256 from the second, where the repeat is dropped
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        let expect = (w[0]["value"].as_f64().unwrap() / w[1]["value"].as_f64().unwrap()).log2();
        assert!((w[1]["order_estimate"].as_f64().unwrap() - expect).abs() < 1e-12);
    }
    assert!(rows[0]["order_estimate"].is_null());
    let csv = fs::read_to_string(root.join("orders.csv")).unwrap();
    assert!(csv.starts_with("suite,key,m,n,h,value,order_estimate"));
}

#[test]
fn report_on_empty_dir_warns_and_succeeds() {
    let d = TempDir::new().unwrap();
    let o = run(&["report", d.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    let rep = json(&d.path().join("report.json"));
    assert_eq!(rep["manifests"], 0);
    assert!(rep["orders"].as_array().unwrap().is_empty());
}

#[test]
fn report_keeps_foreign_versions_apart_and_skips_corrupt_files() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "c.json", r#"{"hamiltonian":{"type":"constant","c":0},"suites":["calculus"],"refine":2}"#);
    let root = d.path().join("runs");
    assert_eq!(code(&run(&["run", "--config", &cfg, "--out", root.join("ok").to_str().unwrap()])), 0);
    let mut foreign = json(&root.join("ok/manifest.json"));
    foreign["schema_version"] = 99.into();
    foreign["artifact_version"] = "9.9.9".into();
    fs::create_dir_all(root.join("old")).unwrap();
    fs::write(root.join("old/manifest.json"), serde_json::to_vec(&foreign).unwrap()).unwrap();
    fs::create_dir_all(root.join("broken")).unwrap();
    fs::write(root.join("broken/manifest.json"), b"{ not json").unwrap();

    let o = run(&["report", root.to_str().unwrap(), "--out", d.path().join("rep").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("broken"), "{}", stderr(&o));
    let rep = json(&d.path().join("rep/report.json"));
    assert_eq!(rep["manifests"], 2);
    assert_eq!(rep["skipped"], serde_json::json!(["broken"]));
    let versions: Vec<&str> = rep["matrix"].as_array().unwrap().iter().map(|r| r["artifact_version"].as_str().unwrap()).collect();
    assert!(versions.contains(&"9.9.9") && versions.contains(&"0.1.0"));
    // each grid appears once: the foreign manifest contributed nothing
    let n = rep["orders"].as_array().unwrap().iter().filter(|r| r["key"] == "calculus.ibp0_pointwise_l2").count();
    assert_eq!(n, 2);
}

#[test]
fn validate_emits_a_convergence_table() {
    let d = TempDir::new().unwrap();
    let o = run(&["instanton", "validate", "--suite", "calculus", "--refine", "2", "--out", d.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 2);
    assert!(d.path().join("calculus.csv").is_file());
    assert_eq!(code(&run(&["validate", "--suite", "nope"])), 2);
}

#[test]
fn solve_writes_dumps_and_reports() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "s.json",
        r#"{"grid":{"tau0":-1,"tau1":1,"m":16,"n":8},
            "r0":{"point":[0,0,0],"tangents":[[1,0,0]]},
            "r1":{"point":[0,0,1],"tangents":[[1,0,0]]},
            "hamiltonian":{"type":"constant","c":0.5}}"#,
    );
    let out = d.path().join("out");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["field.csv", "field.bin", "iterations.csv", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let r = json(&out.join("report.json"));
    assert_eq!(r["status"], "converged");
    let log = fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert!(log.starts_with("iter,objective,cr_l2,closed_l2"));

    let skew = write(
        d.path(),
        "k.json",
        r#"{"grid":{"tau0":-1,"tau1":1,"m":16,"n":8},
            "r0":{"point":[0,0,0],"tangents":[[1,0,0]]},
            "r1":{"point":[0,1,0],"tangents":[[1,0,1]]},
            "hamiltonian":{"type":"constant","c":0}}"#,
    );
    let o = run(&["solve", "--config", &skew, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));

    let unknown = write(d.path(), "u.json", r#"{"grid":{"tau0":-1,"tau1":1,"m":16,"n":8},"bogus":1}"#);
    assert_eq!(code(&run(&["solve", "--config", &unknown, "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn flow_and_action_commands() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "z.json", r#"{"hamiltonian":{"type":"linear_z"}}"#);
    let o = run(&["flow", "--config", &cfg, "--point", "1,2,3", "--t", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p: Vec<f64> = v["point"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let e = (-1.0f64).exp();
    assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 2.0 * e).abs() < 1e-9 && (p[2] - 3.0 * e).abs() < 1e-9);
    assert_eq!(code(&run(&["flow", "--config", &cfg, "--point", "1,2", "--t", "1"])), 2);

    // a Reeb chord is critical for H = 0
    let zero = write(d.path(), "0.json", r#"{"hamiltonian":{"type":"constant","c":0}}"#);
    let mut csv = String::from("t,x,y,z\n");
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        csv += &format!("{t},0.3,-0.2,{}\n", 2.0 * t);
    }
    let path = write(d.path(), "p.csv", &csv);
    let o = run(&["action", "crit", "--config", &zero, "--path", &path]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["critical_residual"].as_f64().unwrap() < 1e-9);
    assert!(v["lift_residual"].as_f64().unwrap() < 1e-5);
    let o = run(&["action", "eval", "--config", &zero, "--path", &path]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // 𝒜(γ) = ∫ γ*λ = 2 for this chord
    assert!((v["action"].as_f64().unwrap() - 2.0).abs() < 1e-9, "{v}");
    let o = run(&["action", "vary", "--config", &zero, "--path", &path, "--eta", &path]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let d = TempDir::new().unwrap();
    let run_cfg = configs.join("run_default.json");
    let out = d.path().join("run");
    let o = run(&["run", "--config", run_cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--suite", "triad", "--suite", "action"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let solve_cfg = configs.join("solve_trivial_chord.json");
    let out = d.path().join("solve");
    let o = run(&["solve", "--config", solve_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
