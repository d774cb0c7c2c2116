use std::path::Path;
use std::process::{Command, Output};

use lieode::srules::builtin_source;
use serde_json::Value;

fn lieode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieode"))
        .args(args)
        .env_remove("LIEODE_CATALOG")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("not a report ({e}): {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn closure_of_ks2_is_three_dimensional() {
    let out = lieode(&["closure", "--entry", "ks2"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    for key in ["entry", "command", "verdict", "trials", "tolerances", "seed", "version", "provenance"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["result"]["status"]["dimension"], 3);
    // [X2, X3] = X3 with 0-based storage c[gamma][alpha][beta]
    let c = &r["result"]["status"]["structure_constants"]["values"];
    assert!((c[2][1][2].as_f64().unwrap() - 1.0).abs() < 1e-7);
}

#[test]
fn dissipative_pinney_has_no_evidence() {
    let out = lieode(&["lie-check", "--entry", "dmp"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["verdict"], "fail");
    assert_eq!(r["result"]["is_lie_system_evidence"], "no-evidence");
}

#[test]
fn verify_sr_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = ["a.json", "b.json"]
        .iter()
        .map(|n| dir.path().join(n).display().to_string())
        .collect();
    for p in &paths {
        let out = lieode(&["verify-sr", "--entry", "mp", "--trials", "4", "--seed", "7", "--out", p]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    let r: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(r["seed"], 7);
    assert_eq!(r["trials"].as_array().unwrap().len(), 4);
    assert_eq!(r["trials"][0]["rule"], "pinney");
}

#[test]
fn configuration_errors_exit_with_two_and_distinct_messages() {
    let unknown = lieode(&["closure", "--entry", "nope"]);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\norder = 2\npositions = [\"x\"]\nrhs = [\"0 +\"]\n").unwrap();
    let unparsable = lieode(&["closure", "--file", bad.to_str().unwrap()]);
    let tolerance = lieode(&["verify-sr", "--entry", "free", "--tol", "-1"]);
    let csv = lieode(&["closure", "--entry", "ks2", "--format", "csv"]);
    let messages: Vec<String> = [&unknown, &unparsable, &tolerance, &csv]
        .iter()
        .map(|o| {
            assert_eq!(o.status.code(), Some(2));
            stderr(o)
        })
        .collect();
    assert!(messages[0].contains("unknown entry"));
    assert!(messages[1].contains("cannot load entry"));
    assert!(messages[2].contains("tolerance misuse"));
    assert!(messages[3].contains("invalid configuration"));
}

#[test]
fn emit_plot_writes_the_four_columns() {
    let out = lieode(&["emit-plot", "--entry", "tsq", "--rule", "general", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,reference,reconstructed,abs_error"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 201);
    assert!(rows.iter().all(|r| r.len() == 4 && r[3] < 1e-6));
}

#[test]
fn catalog_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = builtin_source("free").unwrap().replacen("name = \"free\"", "name = \"mine\"", 1);
    std::fs::write(dir.path().join("mine.toml"), text).unwrap();
    let run = |args: &[&str], dir: &Path| {
        Command::new(env!("CARGO_BIN_EXE_lieode"))
            .args(args)
            .env("LIEODE_CATALOG", dir)
            .output()
            .unwrap()
    };
    let out = run(&["verify-sr", "--entry", "mine", "--trials", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(report(&out)["entry"], "mine");
    let listed = report(&run(&["catalog"], dir.path()));
    let names: Vec<&str> = listed["result"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"mine") && names.contains(&"ks3"));
}
