//! End-to-end tests of the `alexkit` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn alexkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alexkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn dodecagon_boundary_is_one_dimensional() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["gen", "polygon", "--n", "12", "--h", "0.02", "--out", "sq.json"];
    assert_eq!(code(&alexkit(dir.path(), &gen)), 0);
    let first = fs::read(dir.path().join("sq.json")).unwrap();
    assert_eq!(code(&alexkit(dir.path(), &gen)), 0);
    assert_eq!(fs::read(dir.path().join("sq.json")).unwrap(), first, "generation is byte-identical");

    let dim = ["dim", "--space", "sq.json", "--subset", "boundary", "--delta", "0.1", "--out", "dim.json"];
    let out = alexkit(dir.path(), &dim);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("dim.json"));
    assert_eq!(report["result"]["strainer_number"], 1);
    let packing = report["result"]["packing_dim"].as_f64().unwrap();
    assert!((packing - 1.0).abs() <= 0.15, "{packing}");
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["op"], "dim");
    assert_eq!(report["config"]["command"], "dim");
    assert_eq!(report["config"]["space_path"], "sq.json");
    assert_eq!(report["config"]["params"]["delta"], 0.1);
    assert_eq!(report["config"]["params"]["subset"], "boundary");

    let again = ["dim", "--space", "sq.json", "--subset", "boundary", "--delta", "0.1", "--out", "dim2.json", "--threads", "1"];
    assert_eq!(code(&alexkit(dir.path(), &again)), 0);
    let rerun = json(&dir.path().join("dim2.json"));
    assert_eq!(
        serde_json::to_string(&report["result"]).unwrap(),
        serde_json::to_string(&rerun["result"]).unwrap(),
        "results are identical across runs and thread counts"
    );
}

#[test]
fn run_config_matches_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&alexkit(dir.path(), &["gen", "segment", "--h", "0.01", "--out", "seg.json"])), 0);
    let direct = ["vol", "--space", "seg.json", "--subset", "all", "--m", "1", "--eps", "0.05", "--out", "a.json"];
    assert_eq!(code(&alexkit(dir.path(), &direct)), 0);
    let config = r#"{"command": "vol", "space_path": "seg.json", "out_path": "b.json",
                     "params": {"subset": "all", "m": 1, "eps": 0.05}}"#;
    fs::write(dir.path().join("vol.json"), config).unwrap();
    assert_eq!(code(&alexkit(dir.path(), &["run", "--config", "vol.json"])), 0);
    let a = json(&dir.path().join("a.json"));
    let b = json(&dir.path().join("b.json"));
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["config"]["params"], b["config"]["params"]);
    let estimate = a["result"]["extrinsic"]["value"].as_f64().unwrap();
    assert!((estimate - 1.0).abs() <= 0.1, "{estimate}");
    assert_eq!(a["result"]["exact"], 1.0);
}

#[test]
fn missing_key_is_a_refusal_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&alexkit(dir.path(), &["gen", "segment", "--h", "0.05", "--out", "seg.json"])), 0);
    let config = r#"{"command": "strain", "space_path": "seg.json", "params": {"subset": "all", "k": 1, "ell": 0.1}}"#;
    fs::write(dir.path().join("missing-key.json"), config).unwrap();
    let out = alexkit(dir.path(), &["run", "--config", "missing-key.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
}

#[test]
fn parameter_rules_are_refusals() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&alexkit(dir.path(), &["gen", "segment", "--h", "0.05", "--out", "seg.json"])), 0);
    let strain = |delta: &str, ell: &str| {
        code(&alexkit(
            dir.path(),
            &["strain", "--space", "seg.json", "--subset", "all", "--k", "1", "--delta", delta, "--ell", ell],
        ))
    };
    assert_eq!(strain("0.1", "0.2"), 0);
    assert_eq!(strain("0.5", "0.2"), 2);
    assert_eq!(strain("0.1", "1.5"), 2);
    assert_eq!(strain("-0.1", "0.2"), 2);
    let out = alexkit(dir.path(), &["gen", "polygon", "--n", "12", "--h", "-0.02"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exit_codes_distinguish_refusals_from_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = r#"{"schema_version": 1, "name": "bad", "kappa": 0.0, "resolution": null,
        "points": [{"id": 0}, {"id": 1}, {"id": 2}],
        "metric": {"type": "matrix", "data": [1.0, 1.0, 3.0]},
        "subsets": [{"name": "all", "indices": [0, 1, 2], "extremal": false}]}"#;
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = alexkit(dir.path(), &["validate", "--space", "bad.json", "--out", "v.json"]);
    assert_eq!(code(&out), 2);
    let report = json(&dir.path().join("v.json"));
    assert_eq!(report["result"]["passed"], false);
    let strain = ["strain", "--space", "bad.json", "--subset", "all", "--k", "1", "--delta", "0.1", "--ell", "0.2"];
    assert_eq!(code(&alexkit(dir.path(), &strain)), 2, "commands refuse spaces that fail validation");
    assert_eq!(code(&alexkit(dir.path(), &["validate", "--space", "absent.json"])), 1);
    fs::write(dir.path().join("garbage.json"), "{").unwrap();
    assert_eq!(code(&alexkit(dir.path(), &["validate", "--space", "garbage.json"])), 1);
    assert_eq!(code(&alexkit(dir.path(), &["gen", "polygon", "--bogus"])), 2);
}

#[test]
fn converge_writes_a_csv_table() {
    let dir = tempfile::tempdir().unwrap();
    let family = r#"[{"kind": "regular-polygon", "n": 8, "h": 0.005, "mode": "none"},
                     {"kind": "regular-polygon", "n": 16, "h": 0.005, "mode": "none"}]"#;
    fs::write(dir.path().join("family.json"), family).unwrap();
    let args = ["converge", "--family", "family.json", "--m", "1", "--eps", "0.05", "--limit", "6.283185307179586", "--out", "conv.json"];
    let out = alexkit(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("conv.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let report = json(&dir.path().join("conv.json"));
    assert_eq!(report["result"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn flow_and_chart_commands_report() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["gen", "square", "--h", "0.02", "--out", "sq.json"];
    assert_eq!(code(&alexkit(dir.path(), &gen)), 0);
    let space = json(&dir.path().join("sq.json"));
    assert_eq!(space["points"][25]["coords"], serde_json::json!([0.5, 0.0]));
    let start = "25".to_string();
    let last = (space["points"].as_array().unwrap().len() - 1).to_string();
    let flow = ["flow", "--space", "sq.json", "--from", &start, "--toward-dist", &last, "--subset", "boundary", "--invariance", "--out", "flow.json"];
    let out = alexkit(dir.path(), &flow);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("flow.json"));
    assert!(report["result"]["invariance"]["max_deviation"].as_f64().unwrap() <= 0.06);
    let chart = ["chart", "--space", "sq.json", "--subset", "boundary", "--base", &start, "--k", "1", "--delta", "0.1", "--ell", "0.3", "--out", "chart.json"];
    let out = alexkit(dir.path(), &chart);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("chart.json"));
    assert!(report["result"]["stats"]["lip"].as_f64().unwrap() <= 1.0 + 1e-12);
}
