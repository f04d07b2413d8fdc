mod common;

use std::path::Path;
use std::process::{Command, Output};

use carve::pipeline::read_report;

use common::*;

fn carve(verb: &str, project: &str, component: &str, file: &str, out: &Path) -> Output {
    let dir = fixture_dir(project);
    Command::new(env!("CARGO_BIN_EXE_carve"))
        .arg(verb)
        .arg("--root")
        .arg(&dir)
        .args(["--prod-dir", "src", "--test-dir", "tests"])
        .args(["--component", component, "--component-file", file])
        .arg("--out")
        .arg(out)
        .arg("--from-trace")
        .arg(dir.join("suite.trace"))
        .output()
        .unwrap()
}

#[test]
fn generate_succeeds_and_prints_metrics() {
    let out = tempfile::tempdir().unwrap();
    let o = carve(
        "generate",
        "rectangle",
        "Rectangle.stretchLongestEdge",
        "src/rectangle.sl",
        out.path(),
    );
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    assert!(stderr.contains("Augmentation ratio (%)"), "{stderr}");
    let report = read_report(out.path()).unwrap();
    assert_eq!(report.integration_tests, 1);
    assert_eq!(report.generated, 7);
    assert!(out.path().join("canonical").is_dir());

    let shown = Command::new(env!("CARGO_BIN_EXE_carve"))
        .arg("report")
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(shown.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&shown.stdout).contains("700.0%"));
}

#[test]
fn resolve_prints_call_sites() {
    let out = tempfile::tempdir().unwrap();
    let o = carve(
        "resolve",
        "rectangle",
        "Rectangle.stretchLongestEdge",
        "src/rectangle.sl",
        out.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = json.to_string();
    assert!(
        text.contains("Point.moveAlong") && text.contains("Point.distanceFrom"),
        "{text}"
    );
}

#[test]
fn component_without_reaching_tests_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let o = carve("generate", "account", "Ledger.record", "src/ledger.sl", out.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to augment"));
}

#[test]
fn unknown_component_exits_3() {
    let out = tempfile::tempdir().unwrap();
    let o = carve(
        "generate",
        "rectangle",
        "Rectangle.noSuchMethod",
        "src/rectangle.sl",
        out.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn component_outside_production_dir_exits_3() {
    let out = tempfile::tempdir().unwrap();
    let o = carve(
        "resolve",
        "rectangle",
        "Rectangle.stretchLongestEdge",
        "tests/rectangle_test.sl",
        out.path(),
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_report_exits_3() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_carve"))
        .arg("report")
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
