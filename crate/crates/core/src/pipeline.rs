//! End-to-end orchestration, artifacts on disk, and augmentation metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ast::{load_ast, AstForest};
use crate::error::PipelineError;
use crate::filter::{filter_tests, merge_filtered_tests, Classifier, FilterResult};
use crate::resolve::{resolve, CallSiteSet, TargetSpec};
use crate::seed::{build_seed_paths, Analysis};
use crate::testgen::{generate_all, plans_by_dependency, render_plans, Generation, PlanFailure};
use crate::trace::{read_trace_file, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Resolve,
    Filter,
    Analyze,
    Generate,
    Render,
}

impl Step {
    pub fn as_str(self) -> &'static str {
        match self {
            Step::Resolve => "resolve",
            Step::Filter => "filter",
            Step::Analyze => "analyze",
            Step::Generate => "generate",
            Step::Render => "render",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Project root; spec paths are relative to it.
    pub root: PathBuf,
    pub spec: TargetSpec,
    pub output_dir: PathBuf,
    /// External harness command line; extra arguments are appended per verb.
    pub harness_cmd: Option<String>,
    /// Recorded full-suite trace; skips every harness invocation.
    pub from_trace: Option<PathBuf>,
    /// AST dump to pair with `from_trace`; defaults to the trace header's.
    pub ast: Option<PathBuf>,
    pub keep_intermediates: bool,
    pub stop_after: Option<Step>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub component: String,
    pub total_tests: usize,
    pub integration_tests: usize,
    pub generated: usize,
    pub duplicates: usize,
    pub augmentation_ratio: Option<String>,
    pub plans: Vec<String>,
    pub failures: Vec<PlanFailure>,
    pub diagnostics: Vec<String>,
    /// Wall time per step; kept out of the report file so reruns compare equal.
    #[serde(skip)]
    pub timings: Vec<(Step, Duration)>,
}

impl RunReport {
    pub fn nothing_to_augment(&self) -> bool {
        self.integration_tests == 0
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Every intermediate result the run produced, up to where it stopped.
#[derive(Debug, Default)]
pub struct Outcome {
    pub report: RunReport,
    pub sites: Option<CallSiteSet>,
    pub filter: Option<FilterResult>,
    pub analysis: Option<Analysis>,
    pub generation: Option<Generation>,
}

/// `part / whole` as a percentage truncated to two decimals, e.g. "431.25" or "100.0".
pub fn format_ratio(part: usize, whole: usize) -> Option<String> {
    if whole == 0 {
        return None;
    }
    let hundredths = (part as u128 * 10_000) / whole as u128;
    let (int, frac) = (hundredths / 100, hundredths % 100);
    Some(if frac % 10 == 0 {
        format!("{int}.{}", frac / 10)
    } else {
        format!("{int}.{frac:02}")
    })
}

/// Summary table in the column layout of the evaluation tables.
pub fn report_metrics(report: &RunReport) -> String {
    let integration = match format_ratio(report.integration_tests, report.total_tests) {
        Some(p) => format!("{} ({p}%)", report.integration_tests),
        None => report.integration_tests.to_string(),
    };
    let ratio = match format_ratio(report.generated, report.integration_tests) {
        Some(r) => format!("{r}%"),
        None => "n/a".to_string(),
    };
    let headers = [
        "#Tests",
        "#Integration Tests (%)",
        "#Generated Unit Tests",
        "Augmentation ratio (%)",
    ];
    let values = [
        report.total_tests.to_string(),
        integration,
        report.generated.to_string(),
        ratio,
    ];
    let widths: Vec<usize> = headers.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
    let mut out = String::new();
    for row in [headers.map(str::to_string), values] {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn reset_dir(dir: &Path) -> Result<(), PipelineError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// File-safe name for per-dependency artifacts.
pub fn artifact_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Harness<'a> {
    argv: Vec<String>,
    root: &'a Path,
}

impl Harness<'_> {
    fn run(&self, verb: &str, args: &[(&str, &Path)]) -> Result<(), PipelineError> {
        let (program, fixed) = self.argv.split_first().expect("non-empty command");
        let mut cmd = Command::new(program);
        cmd.args(fixed).arg(verb).arg("--root").arg(self.root);
        for (flag, path) in args {
            cmd.arg(flag).arg(path);
        }
        log::info!("harness: {cmd:?}");
        let output = cmd.output().map_err(|e| PipelineError::Harness {
            status: "spawn failed".into(),
            output: e.to_string(),
        })?;
        if !output.status.success() {
            return Err(PipelineError::Harness {
                status: output.status.to_string(),
                output: format!(
                    "{}{}",
                    String::from_utf8_lossy(&output.stdout),
                    String::from_utf8_lossy(&output.stderr)
                ),
            });
        }
        Ok(())
    }
}

fn check_coherence(events: &[TraceEvent], forest: &AstForest, step: Step) -> Result<(), PipelineError> {
    for ev in events {
        if let Some(iid) = ev.iid() {
            if !forest.contains_iid(iid) {
                return Err(PipelineError::step(
                    step.as_str(),
                    format!("trace event {} names iid {iid} missing from the AST dump", ev.kind()),
                ));
            }
        }
    }
    Ok(())
}

fn load_trace(path: &Path, step: Step) -> Result<Vec<TraceEvent>, PipelineError> {
    read_trace_file(path).map_err(|e| PipelineError::step(step.as_str(), format!("{}: {e}", path.display())))
}

fn header_ast(events: &[TraceEvent], trace: &Path) -> Option<PathBuf> {
    events.first().and_then(|ev| match ev {
        TraceEvent::TraceHeader { ast_dump, .. } if !ast_dump.is_empty() => {
            Some(trace.parent().unwrap_or(Path::new(".")).join(ast_dump))
        }
        _ => None,
    })
}

/// Runs the pipeline up to `config.stop_after` (default: everything).
pub fn run_pipeline(config: &RunConfig) -> Result<Outcome, PipelineError> {
    let last = config.stop_after.unwrap_or(Step::Render);
    let work = config.output_dir.join("work");
    let mut outcome = Outcome::default();
    let report = &mut outcome.report;
    report.component = config.spec.component_name.clone();
    let harness = match (&config.from_trace, &config.harness_cmd) {
        (Some(_), _) => None,
        (None, Some(cmd)) => {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(PipelineError::step("resolve", "empty harness command"));
            }
            Some(Harness {
                argv,
                root: &config.root,
            })
        }
        (None, None) => {
            return Err(PipelineError::step(
                "resolve",
                "either a recorded trace or a harness command is required",
            ))
        }
    };
    reset_dir(&work)?;

    let clock = Instant::now();
    let (forest, recorded) = match (&config.from_trace, &harness) {
        (Some(trace), _) => {
            let events = load_trace(trace, Step::Resolve)?;
            let ast = config
                .ast
                .clone()
                .or_else(|| header_ast(&events, trace))
                .ok_or_else(|| {
                    PipelineError::step("resolve", "no AST dump given and none named by the trace header")
                })?;
            let forest = load_ast(&ast).map_err(|e| PipelineError::step("resolve", e))?;
            (forest, Some(events))
        }
        (None, Some(h)) => {
            let ast = work.join("ast.json");
            h.run(
                "dump-ast",
                &[
                    ("--prod-dir", Path::new(&config.spec.production_dir)),
                    ("--test-dir", Path::new(&config.spec.test_dir)),
                    ("--out", &ast),
                ],
            )?;
            (load_ast(&ast).map_err(|e| PipelineError::step("resolve", e))?, None)
        }
        (None, None) => unreachable!(),
    };
    let sites = resolve(&forest, &config.spec).map_err(|e| PipelineError::step("resolve", e))?;
    report.total_tests = sites.test_locs.len();
    report.diagnostics.extend(sites.diagnostics.iter().cloned());
    write_file(&work.join("sites.json"), &sites.to_json_string())?;
    report.timings.push((Step::Resolve, clock.elapsed()));
    outcome.sites = Some(sites);
    if last == Step::Resolve {
        return finish(config, outcome, &work);
    }
    let sites = outcome.sites.as_ref().unwrap();

    let clock = Instant::now();
    let suite_events = match (recorded, &harness) {
        (Some(events), _) => events,
        (None, Some(h)) => {
            let trace = work.join("suite.trace");
            h.run("trace", &[("--ast", &work.join("ast.json")), ("--out", &trace)])?;
            load_trace(&trace, Step::Filter)?
        }
        (None, None) => unreachable!(),
    };
    check_coherence(&suite_events, &forest, Step::Filter)?;
    let filtered = filter_tests(&suite_events, &forest, sites).map_err(|e| PipelineError::step("filter", e))?;
    report.integration_tests = filtered.tests.len();
    report.diagnostics.extend(filtered.diagnostics.iter().cloned());
    write_file(&work.join("filter.json"), &filtered.to_json_string())?;
    report.timings.push((Step::Filter, clock.elapsed()));
    let empty = filtered.tests.is_empty();
    outcome.filter = Some(filtered);
    if last == Step::Filter || empty {
        report.augmentation_ratio = None;
        return finish(config, outcome, &work);
    }
    let filtered = outcome.filter.as_ref().unwrap();

    let clock = Instant::now();
    let merged = merge_filtered_tests(filtered, &forest, &config.spec.test_dir)
        .map_err(|e| PipelineError::step("analyze", e))?;
    let merged_path = work.join("merged.ast.json");
    write_file(
        &merged_path,
        &(serde_json::to_string_pretty(&merged).expect("document serializes") + "\n"),
    )?;
    let seed_events = match &harness {
        None => suite_events,
        Some(h) => {
            let trace = work.join("merged.trace");
            h.run(
                "trace-merged",
                &[
                    ("--ast", &work.join("ast.json")),
                    ("--module", &merged_path),
                    ("--out", &trace),
                ],
            )?;
            let events = load_trace(&trace, Step::Analyze)?;
            check_coherence(&events, &forest, Step::Analyze)?;
            events
        }
    };
    let classifier = Classifier::with_tests(&forest, sites, filtered.tests.iter().cloned());
    let analysis = build_seed_paths(&seed_events, classifier).map_err(|e| PipelineError::step("analyze", e))?;
    write_file(&work.join("analysis.json"), &analysis.to_json_string())?;
    report.timings.push((Step::Analyze, clock.elapsed()));
    outcome.analysis = Some(analysis);
    if last == Step::Analyze {
        return finish(config, outcome, &work);
    }
    let analysis = outcome.analysis.as_ref().unwrap();
    report.diagnostics.extend(analysis.diagnostics.iter().cloned());

    let clock = Instant::now();
    let generation = generate_all(&forest, sites, analysis);
    report.generated = generation.plans.len();
    report.duplicates = generation.duplicates;
    report.plans = generation.plans.iter().map(|p| p.name.clone()).collect();
    report.failures = generation.failures.clone();
    report.augmentation_ratio = format_ratio(report.generated, report.integration_tests);
    let plan_dir = config.output_dir.join("plans");
    let canon_dir = config.output_dir.join("canonical");
    reset_dir(&plan_dir)?;
    reset_dir(&canon_dir)?;
    for plan in &generation.plans {
        let text = serde_json::to_string_pretty(plan).expect("plan serializes") + "\n";
        write_file(&plan_dir.join(format!("{}.json", artifact_stem(&plan.name))), &text)?;
    }
    for (dep, plans) in plans_by_dependency(&generation.plans) {
        write_file(
            &canon_dir.join(format!("{}.txt", artifact_stem(&dep))),
            &render_plans(&plans),
        )?;
    }
    report.timings.push((Step::Generate, clock.elapsed()));
    outcome.generation = Some(generation);
    if last == Step::Generate {
        return finish(config, outcome, &work);
    }

    if let Some(h) = &harness {
        let clock = Instant::now();
        let tests_dir = config.output_dir.join("tests");
        reset_dir(&tests_dir)?;
        h.run("render", &[("--plans", &plan_dir), ("--out", &tests_dir)])?;
        outcome.report.timings.push((Step::Render, clock.elapsed()));
    }
    finish(config, outcome, &work)
}

fn finish(config: &RunConfig, outcome: Outcome, work: &Path) -> Result<Outcome, PipelineError> {
    write_file(&config.output_dir.join("report.json"), &outcome.report.to_json_string())?;
    if !config.keep_intermediates {
        fs::remove_dir_all(work).map_err(io_err(work))?;
    }
    Ok(outcome)
}

/// Reads a report previously written by [`run_pipeline`].
pub fn read_report(output_dir: &Path) -> Result<RunReport, PipelineError> {
    let path = output_dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::step("report", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_truncates_to_hundredths() {
        assert_eq!(format_ratio(14, 14).as_deref(), Some("100.0"));
        assert_eq!(format_ratio(51, 3).as_deref(), Some("1700.0"));
        assert_eq!(format_ratio(69, 16).as_deref(), Some("431.25"));
        assert_eq!(format_ratio(0, 5).as_deref(), Some("0.0"));
        assert_eq!(format_ratio(2, 3).as_deref(), Some("66.66"));
        assert_eq!(format_ratio(1, 0), None);
    }

    #[test]
    fn metrics_table_has_all_columns() {
        let report = RunReport {
            total_tests: 4,
            integration_tests: 1,
            generated: 7,
            ..RunReport::default()
        };
        let table = report_metrics(&report);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("#Tests  #Integration Tests (%)"));
        assert!(lines[1].contains("1 (25.0%)"));
        assert!(lines[1].ends_with("700.0%"));
    }

    #[test]
    fn artifact_stems_are_file_safe() {
        assert_eq!(artifact_stem("Point.moveAlong-T1"), "Point.moveAlong-T1");
        assert_eq!(artifact_stem("a/b c"), "a_b_c");
    }
}
