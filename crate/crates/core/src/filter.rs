//! Test-case filtering: which tests reach a dependency call site from inside the component.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::ast::{AstDocument, AstFile, AstForest, AstKind, AstLocation, AstNode, Iid, Span, INTERCHANGE_VERSION};
use crate::error::AnalysisError;
use crate::resolve::CallSiteSet;
use crate::syntax::render_stmt;
use crate::trace::TraceEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ContextType {
    Root,
    Test,
    Cmp,
    Dep,
    Other,
}

impl ContextType {
    /// DEP and OTHER activations contribute no statements to seed paths.
    pub fn is_skipped(self) -> bool {
        matches!(self, ContextType::Dep | ContextType::Other)
    }
}

/// Assigns context types from the invocation and declaration iids.
pub struct Classifier<'a> {
    forest: &'a AstForest,
    target_loc: AstLocation,
    test_locs: HashSet<AstLocation>,
    site_locs: HashSet<AstLocation>,
}

impl<'a> Classifier<'a> {
    pub fn new(forest: &'a AstForest, sites: &CallSiteSet) -> Self {
        Self::with_tests(forest, sites, sites.test_locs.iter().cloned())
    }

    /// Classifier whose TEST set is restricted to `tests`.
    pub fn with_tests(
        forest: &'a AstForest,
        sites: &CallSiteSet,
        tests: impl IntoIterator<Item = AstLocation>,
    ) -> Self {
        Classifier {
            forest,
            target_loc: sites.target_loc.clone(),
            test_locs: tests.into_iter().collect(),
            site_locs: sites.site_locs.iter().cloned().collect(),
        }
    }

    pub fn forest(&self) -> &'a AstForest {
        self.forest
    }

    pub fn location(&self, iid: Iid) -> Option<AstLocation> {
        self.forest.iid_to_location(iid).ok()
    }

    pub fn is_site(&self, iid: Iid) -> bool {
        self.location(iid).is_some_and(|l| self.site_locs.contains(&l))
    }

    pub fn classify(&self, decl_iid: Iid, inv_id: Option<Iid>) -> ContextType {
        let inv_loc = inv_id.and_then(|i| self.location(i));
        if let Some(loc) = &inv_loc {
            if self.test_locs.contains(loc) {
                return ContextType::Test;
            }
            if self.site_locs.contains(loc) {
                return ContextType::Dep;
            }
        }
        match self.forest.belongs_to_ast(&self.target_loc, decl_iid) {
            Ok(true) => ContextType::Cmp,
            _ => ContextType::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInfo {
    pub invocation_iid: Iid,
    pub decl_iid: Iid,
    pub ctx_type: ContextType,
}

/// The context stack, never empty, ROOT at the bottom.
#[derive(Debug, Clone)]
pub struct ContextStack {
    frames: Vec<FrameInfo>,
}

impl Default for ContextStack {
    fn default() -> Self {
        ContextStack {
            frames: vec![FrameInfo {
                invocation_iid: 1,
                decl_iid: 0,
                ctx_type: ContextType::Root,
            }],
        }
    }
}

impl ContextStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn activate(&mut self, classifier: &Classifier, decl_iid: Iid, inv_id: Option<Iid>) -> FrameInfo {
        let frame = FrameInfo {
            invocation_iid: inv_id.unwrap_or(0),
            decl_iid,
            ctx_type: classifier.classify(decl_iid, inv_id),
        };
        self.frames.push(frame);
        frame
    }

    pub fn pop(&mut self) -> Option<FrameInfo> {
        if self.frames.len() == 1 {
            None
        } else {
            self.frames.pop()
        }
    }

    pub fn top(&self) -> &FrameInfo {
        self.frames.last().expect("stack holds ROOT")
    }

    /// Innermost TEST frame, scanning from the top down.
    pub fn find_test_context(&self) -> Option<&FrameInfo> {
        self.frames.iter().rev().find(|f| f.ctx_type == ContextType::Test)
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReach {
    pub test: AstLocation,
    pub sites: BTreeSet<Iid>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FilterResult {
    #[serde(rename = "T_C")]
    pub tests: Vec<AstLocation>,
    pub reached_sites: Vec<TestReach>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl FilterResult {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("filter result serializes");
        s.push('\n');
        s
    }
}

/// Replays a full-suite trace and collects tests whose CMP frames invoke a call site.
pub fn filter_tests<'e>(
    events: impl IntoIterator<Item = &'e TraceEvent>,
    forest: &AstForest,
    sites: &CallSiteSet,
) -> Result<FilterResult, AnalysisError> {
    let classifier = Classifier::new(forest, sites);
    let mut stack = ContextStack::new();
    let mut inv_id: Option<Iid> = None;
    let mut reached: BTreeMap<AstLocation, BTreeSet<Iid>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for ev in events {
        match ev {
            TraceEvent::InvokeFunPre { iid, .. } => inv_id = Some(*iid),
            TraceEvent::FunctionEnter { iid, .. } => {
                stack.activate(&classifier, *iid, inv_id);
            }
            TraceEvent::FunctionExit { iid, .. } => {
                if stack.pop().is_none() {
                    return Err(AnalysisError::Structure(format!(
                        "functionExit {iid} would pop the ROOT context"
                    )));
                }
            }
            TraceEvent::InvokeFun { iid, .. }
                if stack.top().ctx_type == ContextType::Cmp && classifier.is_site(*iid) =>
            {
                match stack.find_test_context() {
                    Some(test) => {
                        let loc = classifier
                            .location(test.invocation_iid)
                            .expect("TEST frames have a location");
                        reached.entry(loc).or_default().insert(*iid);
                    }
                    None => diagnostics.push(format!(
                        "call site {iid} reached from the component outside any test; ignored"
                    )),
                }
            }
            _ => {}
        }
    }
    if stack.depth() != 1 {
        return Err(AnalysisError::Structure(format!(
            "{} context(s) still open at end of trace",
            stack.depth() - 1
        )));
    }
    let order: BTreeMap<&AstLocation, usize> = sites.test_locs.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut tests: Vec<AstLocation> = reached.keys().cloned().collect();
    tests.sort_by_key(|l| (order.get(l).copied().unwrap_or(usize::MAX), l.clone()));
    let reached_sites = tests
        .iter()
        .map(|t| TestReach {
            test: t.clone(),
            sites: reached[t].clone(),
        })
        .collect();
    Ok(FilterResult {
        tests,
        reached_sites,
        diagnostics,
    })
}

pub const MERGED_STEM: &str = "__merged_tests__";

fn extension_of(path: &str) -> &str {
    let name = path.rsplit('/').next().unwrap_or(path);
    name.rfind('.').map(|i| &name[i..]).unwrap_or("")
}

/// Concatenates the filtered tests and their imports into one module document.
///
/// Tests keep their original iids so traces of the merged module stay
/// interpretable against the original forest.
pub fn merge_filtered_tests(
    filtered: &FilterResult,
    forest: &AstForest,
    test_dir: &str,
) -> Result<AstDocument, AnalysisError> {
    if filtered.tests.is_empty() {
        return Err(AnalysisError::Usage("no filtered tests to merge".into()));
    }
    let wanted: HashSet<&AstLocation> = filtered.tests.iter().collect();
    let mut imports: Vec<AstNode> = Vec::new();
    let mut seen_imports: HashSet<String> = HashSet::new();
    let mut tests: Vec<AstNode> = Vec::new();
    let mut ext = "";
    for file in forest.files() {
        let file_tests: Vec<&AstNode> = file
            .root
            .children
            .iter()
            .filter(|n| {
                n.kind == AstKind::FunctionDecl
                    && n.is_test()
                    && wanted.contains(&AstLocation {
                        file: file.path.clone(),
                        span: n.span,
                    })
            })
            .collect();
        if file_tests.is_empty() {
            continue;
        }
        if ext.is_empty() {
            ext = extension_of(&file.path);
        }
        for import in file.root.children.iter().filter(|n| n.is_import()) {
            if seen_imports.insert(render_stmt(import)) {
                imports.push(import.clone());
            }
        }
        tests.extend(file_tests.into_iter().cloned());
    }
    if tests.len() != filtered.tests.len() {
        return Err(AnalysisError::Usage(format!(
            "{} of {} filtered tests are not top-level test declarations",
            filtered.tests.len() - tests.len(),
            filtered.tests.len()
        )));
    }
    let children: Vec<AstNode> = imports.into_iter().chain(tests).collect();
    let span = children
        .iter()
        .map(|c| c.span)
        .reduce(|a, b| a.cover(&b))
        .unwrap_or(Span::new(1, 0, 1, 0));
    let mut root = AstNode::new(AstKind::Module).with_children(children);
    root.iid = forest.max_iid() + 1;
    root.span = span;
    let dir = test_dir.trim_end_matches('/');
    let path = if dir.is_empty() || dir == "." {
        format!("{MERGED_STEM}{ext}")
    } else {
        format!("{dir}/{MERGED_STEM}{ext}")
    };
    Ok(AstDocument {
        version: INTERCHANGE_VERSION,
        files: vec![AstFile { path, root }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolve::{resolve, TargetSpec};
    use crate::syntax::build_forest;

    fn setup() -> (AstForest, CallSiteSet) {
        let forest = build_forest(vec![
            (
                "src/a.sl".into(),
                "function dep(x) { return x; }\nfunction comp(y) { return dep(y); }".into(),
            ),
            (
                "tests/a_test.sl".into(),
                "require(\"src/a\");\ntest \"t1\" { comp(1); }\ntest \"t2\" { dep(2); }".into(),
            ),
            (
                "tests/b_test.sl".into(),
                "require(\"src/a\");\nrequire(\"src/b\");\ntest \"t3\" { comp(3); }".into(),
            ),
        ])
        .unwrap();
        let spec = TargetSpec {
            component_name: "comp".into(),
            component_file: "src/a.sl".into(),
            production_dir: "src".into(),
            test_dir: "tests".into(),
        };
        let sites = resolve(&forest, &spec).unwrap();
        (forest, sites)
    }

    fn decl(forest: &AstForest, name: &str) -> Iid {
        forest
            .iter_nodes()
            .find(|(_, n)| n.kind == AstKind::FunctionDecl && n.name() == Some(name))
            .unwrap()
            .1
            .iid
    }

    fn call(test: Iid, inner: Vec<TraceEvent>) -> Vec<TraceEvent> {
        let mut evs = vec![
            TraceEvent::InvokeFunPre {
                iid: test,
                func_id: None,
                base: None,
                args: vec![],
            },
            TraceEvent::FunctionEnter {
                iid: test,
                func_id: "t".into(),
                receiver: None,
                args: vec![],
            },
        ];
        evs.extend(inner);
        evs.push(TraceEvent::FunctionExit {
            iid: test,
            result: crate::trace::TraceValue::undefined(),
        });
        evs.push(TraceEvent::InvokeFun {
            iid: test,
            func_id: None,
            base: None,
            args: vec![],
            result: crate::trace::TraceValue::undefined(),
        });
        evs
    }

    #[test]
    fn classifies_in_priority_order() {
        let (forest, sites) = setup();
        let c = Classifier::new(&forest, &sites);
        let t1 = decl(&forest, "t1");
        let comp = decl(&forest, "comp");
        let dep = decl(&forest, "dep");
        let site = sites.deps[0].sites[0];
        assert_eq!(c.classify(t1, Some(t1)), ContextType::Test);
        assert_eq!(c.classify(dep, Some(site)), ContextType::Dep);
        assert_eq!(c.classify(comp, Some(t1 + 3)), ContextType::Cmp);
        assert_eq!(c.classify(dep, Some(t1 + 3)), ContextType::Other);
    }

    #[test]
    fn filters_only_component_reached_sites() {
        let (forest, sites) = setup();
        let site = sites.deps[0].sites[0];
        let comp = decl(&forest, "comp");
        let dep = decl(&forest, "dep");
        let via_comp = |test| {
            call(
                test,
                call(comp, call(dep, vec![]))
                    .into_iter()
                    .map(|e| match e {
                        TraceEvent::InvokeFunPre {
                            iid,
                            func_id,
                            base,
                            args,
                        } if iid == dep => TraceEvent::InvokeFunPre {
                            iid: site,
                            func_id,
                            base,
                            args,
                        },
                        TraceEvent::InvokeFun {
                            iid,
                            func_id,
                            base,
                            args,
                            result,
                        } if iid == dep => TraceEvent::InvokeFun {
                            iid: site,
                            func_id,
                            base,
                            args,
                            result,
                        },
                        other => other,
                    })
                    .collect(),
            )
        };
        let t1 = decl(&forest, "t1");
        let t2 = decl(&forest, "t2");
        let t3 = decl(&forest, "t3");
        let mut events = via_comp(t3);
        events.extend(call(t2, call(dep, vec![])));
        events.extend(via_comp(t1));
        let result = filter_tests(&events, &forest, &sites).unwrap();
        let names: Vec<Iid> = result.tests.iter().map(|l| decl_at_loc(&forest, l)).collect();
        assert_eq!(names, vec![t1, t3]);
        assert!(result.reached_sites.iter().all(|r| r.sites.contains(&site)));

        let merged = merge_filtered_tests(&result, &forest, "tests").unwrap();
        let root = &merged.files[0].root;
        assert_eq!(merged.files[0].path, "tests/__merged_tests__.sl");
        assert_eq!(root.iid, forest.max_iid() + 1);
        let rendered: Vec<String> = root.children.iter().map(render_stmt).collect();
        assert_eq!(rendered[0], "require(\"src/a\");\n");
        assert_eq!(rendered[1], "require(\"src/b\");\n");
        assert_eq!(root.children.len(), 4);
        assert_eq!(root.children[2].iid, t1);
        assert_eq!(root.children[3].iid, t3);
        assert!(AstForest::from_document(merged).is_ok());
    }

    fn decl_at_loc(forest: &AstForest, loc: &AstLocation) -> Iid {
        crate::resolve::decl_at(forest, loc).unwrap()
    }

    #[test]
    fn empty_filter_cannot_merge() {
        let (forest, _) = setup();
        assert!(merge_filtered_tests(&FilterResult::default(), &forest, "tests").is_err());
    }

    #[test]
    fn unbalanced_exit_is_rejected() {
        let (forest, sites) = setup();
        let events = vec![TraceEvent::FunctionExit {
            iid: 3,
            result: crate::trace::TraceValue::undefined(),
        }];
        assert!(filter_tests(&events, &forest, &sites).is_err());
    }
}
