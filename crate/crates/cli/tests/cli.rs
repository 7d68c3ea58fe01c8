//! End-to-end checks of the `overmix` binary: exit codes, file outputs, and
//! determinism, all through the real process boundary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn overmix(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overmix"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Three agents on a fully linked triangle with one-megabit links.
fn write_triangle_scenario(dir: &Path) -> PathBuf {
    let mut links = Vec::new();
    for (a, b) in [("x", "y"), ("x", "z"), ("y", "z")] {
        for (src, dst) in [(a, b), (b, a)] {
            links.push(serde_json::json!({
                "src": src, "dst": dst, "capacity_bps": 1e6, "delay_s": 0.0
            }));
        }
    }
    let scenario = serde_json::json!({
        "name": "triangle",
        "nodes": ["x", "y", "z"],
        "links": links,
        "agents": [
            {"id": "a0", "node": "x"},
            {"id": "a1", "node": "y"},
            {"id": "a2", "node": "z"}
        ]
    });
    let path = dir.join("triangle.json");
    fs::write(&path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
    path
}

fn write_config(dir: &Path, scenario: &Path, algorithms: &[&str], out_dir: &str) -> PathBuf {
    let config = serde_json::json!({
        "scenario": scenario,
        "algorithms": algorithms,
        "out_dir": dir.join(out_dir),
        "seed": 11,
        "training": {
            "problem": "quadratic",
            "dim": 6,
            "heterogeneity": 1.0,
            "learning_rate": 0.2,
            "batch": 1,
            "max_iterations": 2000,
            "target_grad_norm": 0.1
        }
    });
    let path = dir.join(format!("config_{out_dir}.json"));
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn a_full_run_produces_report_traces_and_exit_zero() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_triangle_scenario(tmp.path());
    let config = write_config(tmp.path(), &scenario, &["clique", "prim"], "out");

    let out = overmix(&["run", "--config", config.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report_path = tmp.path().join("out/report.json");
    assert!(report_path.exists());
    assert!(tmp.path().join("out/trace_clique.csv").exists());
    assert!(tmp.path().join("out/trace_prim.csv").exists());

    let text = stdout(&out);
    assert!(text.contains("clique"), "summary lists each algorithm: {text}");
    assert!(text.contains("report:"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["scenario"], "triangle");
    assert_eq!(report["entries"].as_array().unwrap().len(), 2);
}

#[test]
fn cli_overrides_redirect_output_and_reseed() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_triangle_scenario(tmp.path());
    let config = write_config(tmp.path(), &scenario, &["clique"], "ignored");

    let out = overmix(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            tmp.path().join("elsewhere").to_str().unwrap(),
            "--seed",
            "99",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(!tmp.path().join("ignored").exists());
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("elsewhere/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["seed"], 99);
}

#[test]
fn a_failing_algorithm_flips_the_exit_code() {
    let tmp = TempDir::new().unwrap();
    // Only one underlay link pair, so agents 0 and 2 cannot talk directly:
    // a ring over three agents needs a candidate set the overlay lacks.
    let scenario = serde_json::json!({
        "name": "path",
        "nodes": ["x", "y", "z"],
        "links": [
            {"src": "x", "dst": "y", "capacity_bps": 1e6, "delay_s": 0.0},
            {"src": "y", "dst": "x", "capacity_bps": 1e6, "delay_s": 0.0},
            {"src": "y", "dst": "z", "capacity_bps": 1e6, "delay_s": 0.0},
            {"src": "z", "dst": "y", "capacity_bps": 1e6, "delay_s": 0.0}
        ],
        "agents": [
            {"id": "a0", "node": "x"},
            {"id": "a1", "node": "y"},
            {"id": "a2", "node": "z"}
        ],
        "base_topology": [["a0", "a1"], ["a1", "a2"]]
    });
    let scenario_path = tmp.path().join("path.json");
    fs::write(&scenario_path, serde_json::to_string(&scenario).unwrap()).unwrap();
    // `ring` demands a cycle through all three agents; the candidate overlay
    // is a bare path, so that baseline must fail while `prim` still runs.
    let config = write_config(tmp.path(), &scenario_path, &["prim", "ring"], "out");

    let out = overmix(&["run", "--config", config.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1), "stdout: {}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("failed"), "failure surfaced in the summary: {text}");
    // The completed algorithm still has its artifacts.
    assert!(tmp.path().join("out/trace_prim.csv").exists());
}

#[test]
fn comparison_tables_merge_runs_of_the_same_scenario() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_triangle_scenario(tmp.path());
    let first = write_config(tmp.path(), &scenario, &["clique"], "a");
    let second = write_config(tmp.path(), &scenario, &["prim"], "b");
    assert!(overmix(&["run", "--config", first.to_str().unwrap()], tmp.path())
        .status
        .success());
    assert!(overmix(&["run", "--config", second.to_str().unwrap()], tmp.path())
        .status
        .success());

    let out = overmix(
        &[
            "compare",
            tmp.path().join("a/report.json").to_str().unwrap(),
            tmp.path().join("b/report.json").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("rank,algorithm,"));
    assert_eq!(lines.count(), 2, "one row per algorithm:\n{table}");
    assert!(table.contains("clique"));
    assert!(table.contains("prim"));
}

#[test]
fn mismatched_scenarios_refuse_to_compare() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_triangle_scenario(tmp.path());
    let config = write_config(tmp.path(), &scenario, &["clique"], "a");
    assert!(overmix(&["run", "--config", config.to_str().unwrap()], tmp.path())
        .status
        .success());

    // Same report twice is fine; a doctored scenario name is not.
    let original = fs::read_to_string(tmp.path().join("a/report.json")).unwrap();
    fs::create_dir(tmp.path().join("b")).unwrap();
    fs::write(
        tmp.path().join("b/report.json"),
        original.replace("\"scenario\": \"triangle\"", "\"scenario\": \"other\""),
    )
    .unwrap();

    let out = overmix(
        &[
            "compare",
            tmp.path().join("a/report.json").to_str().unwrap(),
            tmp.path().join("b/report.json").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn generated_scenarios_are_deterministic_and_runnable() {
    let tmp = TempDir::new().unwrap();
    let a = overmix(&["gen-scenario", "--generator", "roofnet-like", "--seed", "5"], tmp.path());
    let b = overmix(&["gen-scenario", "--generator", "roofnet-like", "--seed", "5"], tmp.path());
    let c = overmix(&["gen-scenario", "--generator", "iab-like", "--seed", "5"], tmp.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same seed, same bytes");
    assert_ne!(a.stdout, c.stdout);

    // The emitted file loads straight back into a run.
    let path = tmp.path().join("gen.json");
    let out = overmix(
        &[
            "gen-scenario",
            "--generator",
            "iab-like",
            "--seed",
            "3",
            "--out",
            path.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let config = write_config(tmp.path(), &path, &["prim"], "gen_out");
    let run = overmix(&["run", "--config", config.to_str().unwrap()], tmp.path());
    assert!(run.status.success(), "stdout: {}", stdout(&run));
}

#[test]
fn bad_invocations_exit_nonzero_without_artifacts() {
    let tmp = TempDir::new().unwrap();
    let missing = overmix(&["run", "--config", "nope.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));

    let unknown = overmix(&["gen-scenario", "--generator", "mystery"], tmp.path());
    assert!(!unknown.status.success());

    assert!(!tmp.path().join("report.json").exists());
    assert!(!tmp.path().join("comparison.csv").exists());
}
