//! Reference harness: parses `.sl` projects, runs suites under tracing, renders plans.

pub mod interp;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use serde::{Deserialize, Serialize};

use carve::ast::{AstDocument, AstFile, AstForest, AstLocation, Iid};
use carve::resolve::TargetSpec;
use carve::syntax::{build_forest, SourceError};
use carve::testgen::{plans_by_dependency, render_plans, TestPlan};
use carve::trace::{write_trace, TraceEvent};

pub use interp::{Fault, Interp, TestOutcome};

pub const SOURCE_EXT: &str = "sl";
pub const TARGET_FILE: &str = "target.json";
pub const AST_FILE: &str = "ast.json";
pub const SUITE_TRACE: &str = "suite.trace";
pub const TRACE_INDEX: &str = "traces/index.json";

/// One per-test trace of a fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceIndexEntry {
    pub test: AstLocation,
    pub trace: String,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid document {path}: {message}")]
    Document { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Relative paths (with `/` separators) of every source file under `root/dir`.
pub fn source_files(root: &Path, dir: &str) -> Result<Vec<String>, HarnessError> {
    let mut out = Vec::new();
    let mut stack = vec![root.join(dir)];
    while let Some(d) = stack.pop() {
        if !d.exists() {
            continue;
        }
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == SOURCE_EXT) {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                out.push(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Parses the production and test sources of a project into one forest.
pub fn dump_ast(root: &Path, prod_dir: &str, test_dir: &str) -> Result<AstForest, HarnessError> {
    let mut files = source_files(root, prod_dir)?;
    files.extend(source_files(root, test_dir)?);
    files.sort();
    files.dedup();
    let mut sources = Vec::with_capacity(files.len());
    for f in files {
        let path = root.join(&f);
        sources.push((f, fs::read_to_string(&path).map_err(io_err(&path))?));
    }
    Ok(build_forest(sources)?)
}

/// Files of the forest that declare at least one test.
pub fn test_files(forest: &AstForest) -> Vec<String> {
    forest
        .files()
        .iter()
        .filter(|f| f.root.children.iter().any(|n| n.is_test()))
        .map(|f| f.path.clone())
        .collect()
}

/// Result of one traced suite run.
pub struct SuiteRun {
    pub events: Vec<TraceEvent>,
    pub outcomes: Vec<TestOutcome>,
}

impl SuiteRun {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.fault.is_none())
    }
}

/// Runs the tests of `files` in order; `only` restricts to the given test decls.
pub fn run_suite(forest: &AstForest, ast_dump: &str, files: &[String], only: Option<&HashSet<Iid>>) -> SuiteRun {
    let mut interp = Interp::new(forest, ast_dump);
    let mut outcomes = Vec::new();
    for f in files {
        outcomes.extend(interp.run_test_file(f, only));
    }
    SuiteRun {
        events: interp.into_events(),
        outcomes,
    }
}

/// Full-suite trace over every test file of the forest.
pub fn trace_suite(forest: &AstForest, ast_dump: &str) -> SuiteRun {
    run_suite(forest, ast_dump, &test_files(forest), None)
}

/// Trace of the merged filtered-test module, resolved against the original forest.
pub fn trace_merged(forest: &AstForest, merged: &AstDocument, ast_dump: &str) -> Result<SuiteRun, HarnessError> {
    let mut files: Vec<AstFile> = forest.files().to_vec();
    let merged_file = merged.files.first().ok_or_else(|| HarnessError::Document {
        path: "merged module".into(),
        message: "no file".into(),
    })?;
    // merged tests reuse original iids; drop them from their source files for this run
    let moved: HashSet<Iid> = merged_file.root.children.iter().map(|n| n.iid).collect();
    for f in &mut files {
        f.root.children.retain(|n| !moved.contains(&n.iid));
    }
    files.push(merged_file.clone());
    let combined = AstForest::new(files).map_err(|e| HarnessError::Document {
        path: merged_file.path.clone(),
        message: e.to_string(),
    })?;
    Ok(run_suite(
        &combined,
        ast_dump,
        std::slice::from_ref(&merged_file.path),
        None,
    ))
}

/// Writes one test file per dependency; returns the written relative names.
pub fn render_plan_files(plans: &[TestPlan], out: &Path) -> Result<Vec<String>, HarnessError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    for (dep, group) in plans_by_dependency(plans) {
        let name = format!("{}_test.{SOURCE_EXT}", carve::pipeline::artifact_stem(&dep));
        let path = out.join(&name);
        fs::write(&path, render_plans(&group)).map_err(io_err(&path))?;
        written.push(name);
    }
    Ok(written)
}

/// Loads every plan document of a directory, ordered by file name.
pub fn read_plans(dir: &Path) -> Result<Vec<TestPlan>, HarnessError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut plans = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        plans.push(serde_json::from_str(&text).map_err(|e| HarnessError::Document {
            path: p.display().to_string(),
            message: e.to_string(),
        })?);
    }
    Ok(plans)
}

/// Runs rendered test files (outside the project tree) against the project sources.
pub fn run_rendered(root: &Path, prod_dir: &str, rendered: &[(String, String)]) -> Result<SuiteRun, HarnessError> {
    let mut sources = Vec::new();
    for f in source_files(root, prod_dir)? {
        let path = root.join(&f);
        sources.push((f, fs::read_to_string(&path).map_err(io_err(&path))?));
    }
    let names: Vec<String> = rendered.iter().map(|(n, _)| n.clone()).collect();
    sources.extend(rendered.iter().cloned());
    let forest = build_forest(sources)?;
    Ok(run_suite(&forest, "", &names, None))
}

/// Recorded artifacts of a corpus project, as `(relative path, contents)` pairs.
pub fn build_fixture(root: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let target_path = root.join(TARGET_FILE);
    let text = fs::read_to_string(&target_path).map_err(io_err(&target_path))?;
    let spec: TargetSpec = serde_json::from_str(&text).map_err(|e| HarnessError::Document {
        path: target_path.display().to_string(),
        message: e.to_string(),
    })?;
    let forest = dump_ast(root, &spec.production_dir, &spec.test_dir)?;
    let mut out = vec![(AST_FILE.to_string(), forest.to_json_string())];
    let suite = trace_suite(&forest, AST_FILE);
    out.push((SUITE_TRACE.to_string(), trace_text(&suite.events)));
    let mut index = Vec::new();
    for file in test_files(&forest) {
        let tests = forest
            .file(&file)
            .expect("listed file")
            .root
            .children
            .iter()
            .filter(|n| n.is_test());
        for decl in tests {
            let k = index.len();
            let only: HashSet<Iid> = [decl.iid].into();
            let run = run_suite(&forest, AST_FILE, std::slice::from_ref(&file), Some(&only));
            let name = format!("traces/test-{k}.trace");
            out.push((name.clone(), trace_text(&run.events)));
            index.push(TraceIndexEntry {
                test: forest.iid_to_location(decl.iid).expect("decl in forest"),
                trace: name,
            });
        }
    }
    let mut index_text = serde_json::to_string_pretty(&index).expect("index serializes");
    index_text.push('\n');
    out.push((TRACE_INDEX.to_string(), index_text));
    Ok(out)
}

pub fn trace_text(events: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write_trace(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("traces are utf-8")
}
