//! Seed execution path construction from a trace of the filtered tests.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use indexmap::IndexMap;
use serde::Serialize;

use crate::ast::{AstLocation, Iid};
use crate::error::AnalysisError;
use crate::filter::{Classifier, ContextType};
use crate::trace::{ObjRef, ObjRegistry, RefId, TraceEvent, TraceValue};

pub type CtxId = usize;
pub type StmtId = usize;

/// Depth bound when snapshotting objects reachable from a DEP activation.
pub const SNAPSHOT_DEPTH: usize = 3;

pub type Props = IndexMap<String, TraceValue>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionContext {
    pub id: CtxId,
    pub invocation_iid: Iid,
    pub func_id: String,
    pub decl_iid: Iid,
    pub ctx_type: ContextType,
    pub parent: Option<CtxId>,
    pub statements: Vec<StmtId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receiver: Option<TraceValue>,
    pub args: Vec<TraceValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TraceValue>,
    /// Objects whose captured props were written inside this activation.
    pub mutated_refs: BTreeSet<RefId>,
    /// Captured props of objects reachable from receiver, args and result at exit.
    pub snapshot: BTreeMap<RefId, Props>,
    #[serde(skip)]
    entered_at: u64,
}

/// One recorded invocation made directly by a statement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub iid: Iid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<TraceValue>,
    pub args: Vec<TraceValue>,
    pub result: TraceValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StatementNode {
    pub id: StmtId,
    pub iid: Iid,
    pub ctx: CtxId,
    /// V: names written with primitive values.
    pub defined: IndexMap<String, TraceValue>,
    /// Names written with references.
    pub ref_bindings: IndexMap<String, RefId>,
    pub used_refs: BTreeSet<RefId>,
    pub mutated_refs: BTreeSet<RefId>,
    pub spawned: Vec<CtxId>,
    pub calls: Vec<CallRecord>,
    #[serde(skip)]
    started_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedPath {
    pub test: AstLocation,
    pub statements: Vec<StmtId>,
}

/// Everything recovered from one trace replay.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Analysis {
    pub contexts: Vec<ExecutionContext>,
    pub statements: Vec<StatementNode>,
    pub paths: Vec<SeedPath>,
    #[serde(serialize_with = "serialize_registry")]
    pub objects: ObjRegistry,
    pub diagnostics: Vec<String>,
}

fn serialize_registry<S: serde::Serializer>(reg: &ObjRegistry, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(reg.iter())
}

impl Analysis {
    pub fn ctx(&self, id: CtxId) -> &ExecutionContext {
        &self.contexts[id]
    }

    pub fn stmt(&self, id: StmtId) -> &StatementNode {
        &self.statements[id]
    }

    pub fn path_statements(&self, path: &SeedPath) -> Vec<&StatementNode> {
        path.statements.iter().map(|&s| &self.statements[s]).collect()
    }

    /// DEP contexts spawned directly by a statement.
    pub fn dep_contexts(&self, stmt: StmtId) -> impl Iterator<Item = &ExecutionContext> {
        self.statements[stmt]
            .spawned
            .iter()
            .map(|&c| &self.contexts[c])
            .filter(|c| c.ctx_type == ContextType::Dep)
    }

    pub fn has_dep(&self, stmt: StmtId) -> bool {
        self.dep_contexts(stmt).next().is_some()
    }

    pub fn object(&self, id: RefId) -> Option<&ObjRef> {
        self.objects.get(id)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("analysis serializes");
        s.push('\n');
        s
    }
}

struct Builder<'a> {
    classifier: Classifier<'a>,
    contexts: Vec<ExecutionContext>,
    statements: Vec<StatementNode>,
    stack_c: Vec<CtxId>,
    /// One entry per open stmtStart; `None` for skipped statements.
    stack_s: Vec<Option<StmtId>>,
    inv_id: Option<Iid>,
    paths: Vec<SeedPath>,
    current: Option<SeedPath>,
    objects: ObjRegistry,
    diagnostics: Vec<String>,
}

impl<'a> Builder<'a> {
    fn new(classifier: Classifier<'a>) -> Self {
        let root = ExecutionContext {
            id: 0,
            invocation_iid: 1,
            func_id: "<root>".into(),
            decl_iid: 0,
            ctx_type: ContextType::Root,
            parent: None,
            statements: Vec::new(),
            receiver: None,
            args: Vec::new(),
            result: None,
            mutated_refs: BTreeSet::new(),
            snapshot: BTreeMap::new(),
            entered_at: 0,
        };
        Builder {
            classifier,
            contexts: vec![root],
            statements: Vec::new(),
            stack_c: vec![0],
            stack_s: Vec::new(),
            inv_id: None,
            paths: Vec::new(),
            current: None,
            objects: ObjRegistry::new(),
            diagnostics: Vec::new(),
        }
    }

    fn top_ctx(&self) -> CtxId {
        *self.stack_c.last().expect("ROOT is never popped")
    }

    /// Innermost admitted statement, if the active context is admitted.
    fn current_stmt(&self) -> Option<StmtId> {
        if self.contexts[self.top_ctx()].ctx_type.is_skipped() {
            return None;
        }
        self.last_stmt()
    }

    fn last_stmt(&self) -> Option<StmtId> {
        self.stack_s.iter().rev().find_map(|s| *s)
    }

    fn has_dep_ancestor(&self, mut ctx: CtxId) -> bool {
        loop {
            let c = &self.contexts[ctx];
            if c.ctx_type == ContextType::Dep {
                return true;
            }
            match c.parent {
                Some(p) => ctx = p,
                None => return false,
            }
        }
    }

    /// Clock at entry of the outermost skipped context in the current chain.
    fn skipped_since(&self) -> u64 {
        let mut ctx = self.top_ctx();
        let mut since = self.contexts[ctx].entered_at;
        while let Some(p) = self.contexts[ctx].parent {
            if !self.contexts[p].ctx_type.is_skipped() {
                break;
            }
            ctx = p;
            since = self.contexts[ctx].entered_at;
        }
        since
    }

    fn born_at(&self, id: RefId) -> u64 {
        self.objects.get(id).map(|o| o.born).unwrap_or(0)
    }

    fn use_ref(&mut self, stmt: StmtId, v: &TraceValue) {
        if let Some(id) = v.ref_id() {
            self.statements[stmt].used_refs.insert(id);
        }
    }

    fn handle(&mut self, ev: &TraceEvent) -> Result<(), AnalysisError> {
        self.objects.tick();
        for v in ev.values() {
            self.objects.get_obj_ref(v);
        }
        match ev {
            TraceEvent::TraceHeader { .. } => {}
            TraceEvent::InvokeFunPre { iid, .. } => self.inv_id = Some(*iid),
            TraceEvent::FunctionEnter {
                iid,
                func_id,
                receiver,
                args,
            } => self.function_enter(*iid, func_id, receiver.clone(), args.clone()),
            TraceEvent::FunctionExit { iid, result } => self.function_exit(*iid, result)?,
            TraceEvent::StmtStart { iid } => self.start_statement(*iid),
            TraceEvent::StmtEnd { iid } => self.end_statement(*iid)?,
            other => self.instruction(other),
        }
        Ok(())
    }

    fn function_enter(&mut self, decl: Iid, func_id: &str, receiver: Option<TraceValue>, args: Vec<TraceValue>) {
        let parent = self.top_ctx();
        let id = self.contexts.len();
        let ctx_type = self.classifier.classify(decl, self.inv_id);
        self.contexts.push(ExecutionContext {
            id,
            invocation_iid: self.inv_id.unwrap_or(0),
            func_id: func_id.to_string(),
            decl_iid: decl,
            ctx_type,
            parent: Some(parent),
            statements: Vec::new(),
            receiver,
            args,
            result: None,
            mutated_refs: BTreeSet::new(),
            snapshot: BTreeMap::new(),
            entered_at: self.objects.clock(),
        });
        self.stack_c.push(id);
        if ctx_type == ContextType::Test {
            self.flush();
            let test = self
                .classifier
                .location(self.inv_id.unwrap_or(decl))
                .or_else(|| self.classifier.location(decl))
                .expect("TEST contexts have a location");
            self.current = Some(SeedPath {
                test,
                statements: Vec::new(),
            });
        }
        if let Some(stmt) = self.last_stmt() {
            if self.statements[stmt].ctx == parent {
                self.statements[stmt].spawned.push(id);
            }
        }
    }

    fn function_exit(&mut self, iid: Iid, result: &TraceValue) -> Result<(), AnalysisError> {
        if self.stack_c.len() == 1 {
            return Err(AnalysisError::Structure(format!(
                "functionExit {iid} would pop the ROOT context"
            )));
        }
        let id = self.stack_c.pop().expect("checked above");
        self.contexts[id].result = Some(result.clone());
        if self.contexts[id].ctx_type == ContextType::Dep {
            let ctx = &self.contexts[id];
            let roots: Vec<RefId> = ctx
                .receiver
                .iter()
                .chain(ctx.args.iter())
                .chain(std::iter::once(result))
                .filter_map(TraceValue::ref_id)
                .collect();
            let snapshot = self.snapshot(&roots);
            self.contexts[id].snapshot = snapshot;
        }
        Ok(())
    }

    fn snapshot(&self, roots: &[RefId]) -> BTreeMap<RefId, Props> {
        let mut out = BTreeMap::new();
        let mut queue: VecDeque<(RefId, usize)> = roots.iter().map(|&r| (r, 0)).collect();
        while let Some((id, depth)) = queue.pop_front() {
            if out.contains_key(&id) || depth > SNAPSHOT_DEPTH {
                continue;
            }
            let Some(obj) = self.objects.get(id) else { continue };
            for v in obj.props.values() {
                if let Some(child) = v.ref_id() {
                    queue.push_back((child, depth + 1));
                }
            }
            out.insert(id, obj.props.clone());
        }
        out
    }

    fn start_statement(&mut self, iid: Iid) {
        let ctx = self.top_ctx();
        let ctx_type = self.contexts[ctx].ctx_type;
        if ctx_type.is_skipped() {
            self.stack_s.push(None);
            return;
        }
        let id = self.statements.len();
        self.statements.push(StatementNode {
            id,
            iid,
            ctx,
            defined: IndexMap::new(),
            ref_bindings: IndexMap::new(),
            used_refs: BTreeSet::new(),
            mutated_refs: BTreeSet::new(),
            spawned: Vec::new(),
            calls: Vec::new(),
            started_at: self.objects.clock(),
        });
        self.contexts[ctx].statements.push(id);
        if matches!(ctx_type, ContextType::Test | ContextType::Cmp) {
            match &mut self.current {
                Some(path) => path.statements.push(id),
                None => self
                    .diagnostics
                    .push(format!("statement {iid} executed outside any test; not on a path")),
            }
        }
        self.stack_s.push(Some(id));
    }

    fn end_statement(&mut self, iid: Iid) -> Result<(), AnalysisError> {
        match self.stack_s.pop() {
            Some(Some(id)) if self.statements[id].iid != iid => Err(AnalysisError::Structure(format!(
                "stmtEnd {iid} closes statement {}",
                self.statements[id].iid
            ))),
            Some(_) => Ok(()),
            None => Err(AnalysisError::Structure(format!(
                "stmtEnd {iid} with empty statement stack"
            ))),
        }
    }

    fn instruction(&mut self, ev: &TraceEvent) {
        if let TraceEvent::PutField {
            base, offset, value, ..
        } = ev
        {
            self.capture_put_field(base, offset, value);
        }
        let Some(stmt) = self.current_stmt() else {
            self.skipped_instruction(ev);
            return;
        };
        match ev {
            TraceEvent::Read { value, .. } => self.use_ref(stmt, value),
            TraceEvent::Write { name, value, .. } => match value.ref_id() {
                Some(id) => {
                    let n = &mut self.statements[stmt];
                    n.ref_bindings.insert(name.clone(), id);
                    if self.born_at(id) >= self.statements[stmt].started_at {
                        self.statements[stmt].mutated_refs.insert(id);
                    } else {
                        self.statements[stmt].used_refs.insert(id);
                    }
                }
                None => {
                    self.statements[stmt].defined.insert(name.clone(), value.clone());
                }
            },
            TraceEvent::GetField { base, value, .. } => {
                self.use_ref(stmt, base);
                self.use_ref(stmt, value);
            }
            TraceEvent::PutField { base, value, .. } => {
                self.use_ref(stmt, value);
                if let Some(id) = base.ref_id() {
                    self.statements[stmt].mutated_refs.insert(id);
                }
            }
            TraceEvent::InvokeFun {
                iid,
                base,
                args,
                result,
                ..
            } => {
                for v in base.iter().chain(args.iter()).chain(std::iter::once(result)) {
                    self.use_ref(stmt, v);
                }
                self.statements[stmt].calls.push(CallRecord {
                    iid: *iid,
                    base: base.clone(),
                    args: args.clone(),
                    result: result.clone(),
                });
            }
            TraceEvent::Literal { value, .. } => {
                if let Some(id) = value.ref_id() {
                    self.statements[stmt].mutated_refs.insert(id);
                }
            }
            _ => {}
        }
    }

    /// Inside skipped activations only mutation of pre-existing objects is visible,
    /// charged to the statement that spawned the activation chain.
    fn skipped_instruction(&mut self, ev: &TraceEvent) {
        let TraceEvent::PutField { base, .. } = ev else { return };
        let Some(id) = base.ref_id() else { return };
        let Some(stmt) = self.last_stmt() else { return };
        if self.born_at(id) < self.skipped_since() {
            self.statements[stmt].mutated_refs.insert(id);
        }
    }

    fn capture_put_field(&mut self, base: &TraceValue, offset: &str, value: &TraceValue) {
        let Some(id) = base.ref_id() else { return };
        let top = self.top_ctx();
        let under_dep = self.has_dep_ancestor(top);
        let obj = self.objects.get_obj_ref(base).expect("reference registered");
        if under_dep {
            obj.props.insert(offset.to_string(), value.clone());
            let mut ctx = Some(top);
            while let Some(c) = ctx {
                if self.contexts[c].ctx_type == ContextType::Dep {
                    self.contexts[c].mutated_refs.insert(id);
                }
                ctx = self.contexts[c].parent;
            }
        } else if value.ref_id().is_some() {
            // object links are kept so captured state stays reachable
            obj.props.insert(offset.to_string(), value.clone());
        } else {
            // a later uncaptured primitive write makes the captured value stale
            obj.props.shift_remove(offset);
        }
    }

    fn flush(&mut self) {
        if let Some(path) = self.current.take() {
            if path.statements.is_empty() {
                return;
            }
            let has_dep = path.statements.iter().any(|&s| {
                self.statements[s]
                    .spawned
                    .iter()
                    .any(|&c| self.contexts[c].ctx_type == ContextType::Dep)
            });
            if has_dep {
                self.paths.push(path);
            } else {
                self.diagnostics
                    .push(format!("path of test {} reaches no dependency; discarded", path.test));
            }
        }
    }

    fn finish(mut self) -> Result<Analysis, AnalysisError> {
        if self.stack_c.len() != 1 || !self.stack_s.is_empty() {
            return Err(AnalysisError::Structure("trace ended inside an activation".into()));
        }
        self.flush();
        Ok(Analysis {
            contexts: self.contexts,
            statements: self.statements,
            paths: self.paths,
            objects: self.objects,
            diagnostics: self.diagnostics,
        })
    }
}

/// Replays a trace into seed paths. `classifier` decides context types.
pub fn build_seed_paths<'e>(
    events: impl IntoIterator<Item = &'e TraceEvent>,
    classifier: Classifier,
) -> Result<Analysis, AnalysisError> {
    let mut builder = Builder::new(classifier);
    for ev in events {
        builder.handle(ev)?;
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{AstForest, AstKind};
    use crate::resolve::{resolve, CallSiteSet, TargetSpec};
    use crate::syntax::build_forest;
    use crate::trace::Primitive;

    struct Fixture {
        forest: AstForest,
        sites: CallSiteSet,
    }

    fn fixture() -> Fixture {
        let forest = build_forest(vec![
            (
                "src/a.sl".into(),
                "function Box.set(v) { this.v = v; }\nfunction comp(b) { b.set(7); return 1; }".into(),
            ),
            ("tests/t.sl".into(), "test \"t\" { let b = mk(); comp(b); }".into()),
        ])
        .unwrap();
        let sites = resolve(
            &forest,
            &TargetSpec {
                component_name: "comp".into(),
                component_file: "src/a.sl".into(),
                production_dir: "src".into(),
                test_dir: "tests".into(),
            },
        )
        .unwrap();
        Fixture { forest, sites }
    }

    fn iid_of(f: &AstForest, pred: impl Fn(&crate::ast::AstNode) -> bool) -> Iid {
        f.iter_nodes().find(|(_, n)| pred(n)).unwrap().1.iid
    }

    fn undef() -> TraceValue {
        TraceValue::undefined()
    }

    /// Hand-written trace of the fixture test.
    fn trace(f: &Fixture) -> Vec<TraceEvent> {
        let fo = &f.forest;
        let test = iid_of(fo, |n| n.is_test());
        let test_body = fo.node(test).unwrap().children[0].clone();
        let s1 = test_body.children[0].iid;
        let s2 = test_body.children[1].iid;
        let comp = iid_of(fo, |n| n.kind == AstKind::FunctionDecl && n.name() == Some("comp"));
        let comp_node = fo.node(comp).unwrap().clone();
        let comp_body = comp_node.children.last().unwrap();
        let c1 = comp_body.children[0].iid;
        let c2 = comp_body.children[1].iid;
        let site = f.sites.deps[0].sites[0];
        let set = f.sites.deps[0].decl;
        let set_stmt = fo.node(set).unwrap().children.last().unwrap().children[0].iid;
        let comp_call = s2 + 2;
        let b = TraceValue::Ref(1);
        use TraceEvent::*;
        vec![
            InvokeFunPre {
                iid: test,
                func_id: None,
                base: None,
                args: vec![],
            },
            FunctionEnter {
                iid: test,
                func_id: "t".into(),
                receiver: None,
                args: vec![],
            },
            StmtStart { iid: s1 },
            InvokeFunPre {
                iid: s1 + 3,
                func_id: Some("mk".into()),
                base: None,
                args: vec![],
            },
            InvokeFun {
                iid: s1 + 3,
                func_id: Some("mk".into()),
                base: None,
                args: vec![],
                result: b.clone(),
            },
            Write {
                iid: s1,
                name: "b".into(),
                value: b.clone(),
            },
            StmtEnd { iid: s1 },
            StmtStart { iid: s2 },
            Read {
                iid: s2 + 4,
                name: "b".into(),
                value: b.clone(),
            },
            InvokeFunPre {
                iid: comp_call,
                func_id: None,
                base: None,
                args: vec![b.clone()],
            },
            FunctionEnter {
                iid: comp,
                func_id: "comp".into(),
                receiver: None,
                args: vec![b.clone()],
            },
            StmtStart { iid: c1 },
            Read {
                iid: c1 + 1,
                name: "b".into(),
                value: b.clone(),
            },
            InvokeFunPre {
                iid: site,
                func_id: None,
                base: Some(b.clone()),
                args: vec![TraceValue::int(7)],
            },
            FunctionEnter {
                iid: set,
                func_id: "Box.set".into(),
                receiver: Some(b.clone()),
                args: vec![TraceValue::int(7)],
            },
            StmtStart { iid: set_stmt },
            PutField {
                iid: set_stmt,
                base: b.clone(),
                offset: "v".into(),
                value: TraceValue::int(7),
            },
            StmtEnd { iid: set_stmt },
            FunctionExit {
                iid: set,
                result: undef(),
            },
            InvokeFun {
                iid: site,
                func_id: None,
                base: Some(b.clone()),
                args: vec![TraceValue::int(7)],
                result: undef(),
            },
            StmtEnd { iid: c1 },
            StmtStart { iid: c2 },
            StmtEnd { iid: c2 },
            FunctionExit {
                iid: comp,
                result: TraceValue::int(1),
            },
            InvokeFun {
                iid: comp_call,
                func_id: None,
                base: None,
                args: vec![b.clone()],
                result: TraceValue::int(1),
            },
            StmtEnd { iid: s2 },
            FunctionExit {
                iid: test,
                result: undef(),
            },
            InvokeFun {
                iid: test,
                func_id: None,
                base: None,
                args: vec![],
                result: undef(),
            },
        ]
    }

    #[test]
    fn builds_one_path_with_dep_context_and_props() {
        let f = fixture();
        let events = trace(&f);
        let analysis = build_seed_paths(&events, Classifier::new(&f.forest, &f.sites)).unwrap();
        assert_eq!(analysis.paths.len(), 1);
        let path = &analysis.paths[0];
        // two test statements, two component statements; the DEP body is skipped
        assert_eq!(path.statements.len(), 4);
        let stmts = analysis.path_statements(path);
        assert!(stmts[0].mutated_refs.contains(&1));
        assert_eq!(stmts[0].ref_bindings["b"], 1);
        let call_stmt = stmts[2];
        assert!(analysis.has_dep(call_stmt.id));
        assert!(call_stmt.mutated_refs.contains(&1));
        assert!(call_stmt.used_refs.contains(&1));
        let dep = analysis.dep_contexts(call_stmt.id).next().unwrap();
        assert_eq!(dep.receiver, Some(TraceValue::Ref(1)));
        assert_eq!(dep.args, vec![TraceValue::int(7)]);
        assert_eq!(dep.result, Some(undef()));
        assert!(dep.mutated_refs.contains(&1));
        assert_eq!(dep.snapshot[&1]["v"], TraceValue::Prim(Primitive::Int(7)));
        assert_eq!(analysis.object(1).unwrap().props["v"], TraceValue::int(7));
        assert_eq!(stmts[2].calls.len(), 1);
        // the test statement spawned the CMP context, the CMP statement the DEP one
        assert_eq!(analysis.ctx(stmts[1].spawned[0]).ctx_type, ContextType::Cmp);
        assert!(analysis.to_json_string().contains("\"ctxType\": \"DEP\""));
    }

    #[test]
    fn path_without_dependency_is_discarded() {
        let f = fixture();
        let events: Vec<TraceEvent> = trace(&f)
            .into_iter()
            .map(|e| match e {
                // turn the DEP invocation into an unrelated one
                TraceEvent::InvokeFunPre {
                    iid,
                    func_id,
                    base,
                    args,
                } if iid == f.sites.deps[0].sites[0] => TraceEvent::InvokeFunPre {
                    iid: iid + 1,
                    func_id,
                    base,
                    args,
                },
                other => other,
            })
            .collect();
        let analysis = build_seed_paths(&events, Classifier::new(&f.forest, &f.sites)).unwrap();
        assert!(analysis.paths.is_empty());
        assert!(analysis.diagnostics.iter().any(|d| d.contains("discarded")));
    }

    #[test]
    fn exit_on_root_is_structure_error() {
        let f = fixture();
        let events = vec![TraceEvent::FunctionExit {
            iid: 1,
            result: undef(),
        }];
        assert!(build_seed_paths(&events, Classifier::new(&f.forest, &f.sites)).is_err());
    }
}
