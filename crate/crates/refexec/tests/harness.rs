use std::fs;
use std::path::{Path, PathBuf};

use carve::pipeline::{run_pipeline, RunConfig, Step};
use carve::resolve::TargetSpec;
use refexec::{build_fixture, dump_ast, run_rendered, trace_suite, TARGET_FILE};

const PROJECTS: &[&str] = &["account", "loop", "matrix", "rectangle", "stats"];

fn fixture_dir(project: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(project)
}

fn spec(root: &Path) -> TargetSpec {
    serde_json::from_str(&fs::read_to_string(root.join(TARGET_FILE)).unwrap()).unwrap()
}

/// Runs the whole pipeline through the harness binary; returns the rendered test files.
fn harness_run(root: &Path, out: &Path) -> Vec<(String, String)> {
    let config = RunConfig {
        root: root.to_path_buf(),
        spec: spec(root),
        output_dir: out.to_path_buf(),
        harness_cmd: Some(env!("CARGO_BIN_EXE_carve-refexec").to_string()),
        from_trace: None,
        ast: None,
        keep_intermediates: false,
        stop_after: Some(Step::Render),
    };
    let outcome = run_pipeline(&config).unwrap();
    assert!(outcome.report.generated > 0, "{}: nothing generated", root.display());
    let mut files: Vec<(String, String)> = fs::read_dir(out.join("tests"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (format!("__rendered__/{name}"), fs::read_to_string(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_tree(&p, &dest);
        } else {
            fs::copy(&p, &dest).unwrap();
        }
    }
}

#[test]
fn recorded_fixtures_are_fresh() {
    for project in PROJECTS {
        let root = fixture_dir(project);
        for (name, text) in build_fixture(&root).unwrap() {
            let on_disk = fs::read_to_string(root.join(&name)).unwrap_or_default();
            assert!(
                on_disk == text,
                "{project}/{name} is stale; regenerate with `carve-refexec fixture --root {}`",
                root.display()
            );
        }
    }
}

#[test]
fn corpus_suites_pass() {
    for project in PROJECTS {
        let root = fixture_dir(project);
        let spec = spec(&root);
        let forest = dump_ast(&root, &spec.production_dir, &spec.test_dir).unwrap();
        let run = trace_suite(&forest, "");
        assert!(run.passed(), "{project}: original suite fails");
    }
}

#[test]
fn generated_tests_pass_on_the_original_code() {
    for project in PROJECTS {
        let root = fixture_dir(project);
        let out = tempfile::tempdir().unwrap();
        let rendered = harness_run(&root, out.path());
        let run = run_rendered(&root, &spec(&root).production_dir, &rendered).unwrap();
        let failed: Vec<_> = run.outcomes.iter().filter(|o| o.fault.is_some()).collect();
        assert!(failed.is_empty(), "{project}: {} generated tests fail", failed.len());
        assert!(!run.outcomes.is_empty(), "{project}: no generated tests ran");
    }
}

#[test]
fn generated_tests_catch_a_mutant_the_integration_test_misses() {
    let original = fixture_dir("rectangle");
    let out = tempfile::tempdir().unwrap();
    let rendered = harness_run(&original, out.path());

    let work = tempfile::tempdir().unwrap();
    let mutant = work.path().join("rectangle");
    copy_tree(&original, &mutant);
    let point = mutant.join("src/point.sl");
    let source = fs::read_to_string(&point).unwrap();
    let mutated = source.replace("this.x = this.x + direction.x", "this.x = this.x - direction.x");
    assert_ne!(mutated, source, "mutation did not apply");
    fs::write(&point, mutated).unwrap();

    let spec = spec(&mutant);
    let forest = dump_ast(&mutant, &spec.production_dir, &spec.test_dir).unwrap();
    assert!(
        trace_suite(&forest, "").passed(),
        "integration test should miss the mutant"
    );

    let run = run_rendered(&mutant, &spec.production_dir, &rendered).unwrap();
    let killed: Vec<&str> = run
        .outcomes
        .iter()
        .filter(|o| o.fault.is_some())
        .map(|o| o.title.as_str())
        .collect();
    assert!(!killed.is_empty(), "no generated test detects the mutant");
    assert!(killed.iter().any(|t| t.starts_with("moveAlong")), "{killed:?}");
}
