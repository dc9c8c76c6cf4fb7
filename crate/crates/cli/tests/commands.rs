use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairplan"))
        .args(args)
        .env_remove("FAIRPLAN_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fairplan(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn export(dir: &Path) -> [String; 4] {
    ok(&["scenario", "export", "--out", dir.to_str().unwrap()]);
    ["city", "population", "config", "constraints"].map(|n| dir.join(format!("{n}.json")).display().to_string())
}

#[test]
fn evaluate_is_deterministic_json() {
    let dir = tempfile::tempdir().unwrap();
    let [city, pop, config, _] = export(dir.path());
    let args = [
        "evaluate",
        "--city",
        &city,
        "--population",
        &pop,
        "--config",
        &config,
        "--seed",
        "4",
    ];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let v: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["seed"], 4);
    for key in [
        "total_inequality",
        "between",
        "within",
        "mean_benefit",
        "group_means",
        "group_sd",
    ] {
        assert!(!v[key].is_null(), "{key}");
    }
    let total = v["total_inequality"].as_f64().unwrap();
    let parts = v["between"].as_f64().unwrap() + v["within"].as_f64().unwrap();
    assert!((total - parts).abs() < 1e-8);
}

#[test]
fn evaluate_table_and_config_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let [city, pop, config, _] = export(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_fairplan"))
        .args(["evaluate", "--city", &city, "--population", &pop, "--format", "table"])
        .env("FAIRPLAN_CONFIG", &config)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("inequality total"));
    assert!(text.contains("outdoor"));

    let out = Command::new(env!("CARGO_BIN_EXE_fairplan"))
        .args(["evaluate", "--city", &city, "--population", &pop])
        .env("FAIRPLAN_CONFIG", dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn allocate_respects_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let [city, pop, _, _] = export(dir.path());
    let out = dir.path().join("alloc.json");
    ok(&[
        "allocate",
        "--city",
        &city,
        "--population",
        &pop,
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let alloc = read(&out);
    assert_eq!(alloc["seed"], 9);
    let design = read(Path::new(&city));
    let mut occupancy = std::collections::BTreeMap::<String, u64>::new();
    for (_, target) in alloc["assignments"].as_object().unwrap() {
        if let Some(id) = target.as_str() {
            *occupancy.entry(id.to_string()).or_default() += 1;
        }
    }
    for f in design["features"].as_array().unwrap() {
        let id = f["id"].as_str().unwrap();
        let res = f["properties"]["floor_areas"]["Residential"].as_f64().unwrap_or(0.0);
        let cap = (res / 30.0).floor() as u64;
        assert!(occupancy.get(id).copied().unwrap_or(0) <= cap, "{id}");
    }
}

#[test]
fn zero_budget_recommendation_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let [city, pop, _, _] = export(dir.path());
    let constraints = dir.path().join("zero.json");
    std::fs::write(&constraints, r#"{"schema_version": 1, "budget": 0}"#).unwrap();
    let plan = dir.path().join("plan.json");
    ok(&[
        "recommend",
        "--city",
        &city,
        "--population",
        &pop,
        "--constraints",
        constraints.to_str().unwrap(),
        "--out",
        plan.to_str().unwrap(),
    ]);
    let plan_json = read(&plan);
    assert!(plan_json["plan"]["deltas"].as_object().unwrap().is_empty());

    let applied = dir.path().join("applied.json");
    ok(&[
        "apply",
        "--city",
        &city,
        "--plan",
        plan.to_str().unwrap(),
        "--strategy",
        "uniform",
        "--out",
        applied.to_str().unwrap(),
    ]);
    assert_eq!(read(&applied), read(Path::new(&city)));
}

#[test]
fn recommend_then_apply_changes_design() {
    let dir = tempfile::tempdir().unwrap();
    let [city, pop, config, constraints] = export(dir.path());
    let plan = dir.path().join("plan.json");
    let args = [
        "recommend",
        "--city",
        &city,
        "--population",
        &pop,
        "--config",
        &config,
        "--constraints",
        &constraints,
        "--seed",
        "1",
        "--out",
        plan.to_str().unwrap(),
    ];
    ok(&args);
    let first = std::fs::read(&plan).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(&plan).unwrap());

    let p = read(&plan);
    assert!(!p["plan"]["deltas"].as_object().unwrap().is_empty());
    assert!(!p["attribution"]["per_block"].as_object().unwrap().is_empty());

    let after = dir.path().join("after.json");
    ok(&[
        "apply",
        "--city",
        &city,
        "--plan",
        plan.to_str().unwrap(),
        "--out",
        after.to_str().unwrap(),
    ]);
    let before_eval = ok(&["evaluate", "--city", &city, "--population", &pop, "--config", &config]);
    let after_eval = ok(&[
        "evaluate",
        "--city",
        after.to_str().unwrap(),
        "--population",
        &pop,
        "--config",
        &config,
    ]);
    let b: Value = serde_json::from_str(&before_eval).unwrap();
    let a: Value = serde_json::from_str(&after_eval).unwrap();
    assert!(a["total_inequality"].as_f64().unwrap() < b["total_inequality"].as_f64().unwrap());
    assert_eq!(read(&after)["revision"], 1);
}

#[test]
fn synth_pop_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path());
    let spec = dir.path().join("population-spec.json");
    let (a, b, c) = (
        dir.path().join("a.json"),
        dir.path().join("b.json"),
        dir.path().join("c.json"),
    );
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&[
            "synth-pop",
            "--spec",
            spec.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let pop = read(&a);
    assert_eq!(pop["residents"].as_array().unwrap().len(), 600);
}

#[test]
fn scenario_run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&[
        "scenario",
        "run",
        "--name",
        "bundled-bronx-mini",
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert!(summary["after"].as_f64().unwrap() < summary["before"].as_f64().unwrap());
    for f in ["report.json", "plan.json", "city-before.json", "city-after.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = read(&out.join("report.json"));
    assert_eq!(report["name"], "bundled-bronx-mini");
    assert!(report["relative_reduction"].as_f64().unwrap() > 0.0);
}

#[test]
fn failures_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let [city, _, _, _] = export(dir.path());

    let out = fairplan(&["evaluate", "--city", &city, "--population", "/no/such/file.json"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["code"].is_string());
    assert!(err["message"].as_str().unwrap().contains("/no/such/file.json"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"schema_version\": 1, \"features\": [").unwrap();
    let out = fairplan(&["evaluate", "--city", broken.to_str().unwrap(), "--population", &city]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "parse_error");

    let out = fairplan(&[
        "scenario",
        "run",
        "--name",
        "atlantis",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "not_found");
}
