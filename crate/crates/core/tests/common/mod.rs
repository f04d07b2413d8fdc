#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use carve::ast::{load_ast, AstForest, AstLocation, Iid};
use carve::pipeline::{run_pipeline, Outcome, RunConfig, Step};
use carve::resolve::{resolve, CallSiteSet, TargetSpec};
use carve::trace::{read_trace_file, TraceEvent};

pub const PROJECTS: &[&str] = &["account", "loop", "matrix", "rectangle", "stats"];

#[derive(Debug, Deserialize)]
pub struct IndexEntry {
    pub test: AstLocation,
    pub trace: String,
}

pub fn fixture_dir(project: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(project)
}

pub fn spec(project: &str) -> TargetSpec {
    let text = fs::read_to_string(fixture_dir(project).join("target.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn forest(project: &str) -> AstForest {
    load_ast(&fixture_dir(project).join("ast.json")).unwrap()
}

pub fn suite_trace(project: &str) -> Vec<TraceEvent> {
    read_trace_file(&fixture_dir(project).join("suite.trace")).unwrap()
}

pub fn sites(project: &str) -> (AstForest, CallSiteSet) {
    let f = forest(project);
    let s = resolve(&f, &spec(project)).unwrap();
    (f, s)
}

pub fn per_test_traces(project: &str) -> Vec<(AstLocation, Vec<TraceEvent>)> {
    let dir = fixture_dir(project);
    let text = fs::read_to_string(dir.join("traces/index.json")).unwrap();
    let index: Vec<IndexEntry> = serde_json::from_str(&text).unwrap();
    index
        .into_iter()
        .map(|e| (e.test, read_trace_file(&dir.join(&e.trace)).unwrap()))
        .collect()
}

/// Pipeline configuration over recorded fixtures (no subject code runs).
pub fn recorded_config(project: &str, out: &Path) -> RunConfig {
    let dir = fixture_dir(project);
    RunConfig {
        root: dir.clone(),
        spec: spec(project),
        output_dir: out.to_path_buf(),
        harness_cmd: None,
        from_trace: Some(dir.join("suite.trace")),
        ast: None,
        keep_intermediates: false,
        stop_after: Some(Step::Generate),
    }
}

pub fn run_recorded(project: &str, out: &Path) -> Outcome {
    run_pipeline(&recorded_config(project, out)).unwrap()
}

/// Independent reachability check: a call site invoked while the innermost
/// activation is the component itself or a declaration nested inside it.
pub fn oracle_reaches(events: &[TraceEvent], forest: &AstForest, sites: &CallSiteSet) -> bool {
    let site_iids: BTreeSet<Iid> = sites.site_iids().collect();
    let target = forest.node(sites.target_decl).unwrap();
    let mut inside: BTreeSet<Iid> = BTreeSet::new();
    target.walk(&mut |n| {
        inside.insert(n.iid);
    });
    let mut frames: Vec<Iid> = Vec::new();
    for ev in events {
        match ev {
            TraceEvent::FunctionEnter { iid, .. } => frames.push(*iid),
            TraceEvent::FunctionExit { .. } => {
                frames.pop();
            }
            TraceEvent::InvokeFun { iid, .. }
                if site_iids.contains(iid) && frames.last().is_some_and(|d| inside.contains(d)) =>
            {
                return true;
            }
            _ => {}
        }
    }
    false
}

/// Every file under `dir`, relative path and bytes, sorted.
pub fn snapshot_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
