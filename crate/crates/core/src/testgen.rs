//! Arrange/Act/Assert test plan synthesis from seed paths and slices.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ast::{AstForest, AstKind, AstLocation, AstNode, Iid, Span};
use crate::error::PlanError;
use crate::flow::slice_indices;
use crate::resolve::{CallSiteSet, Dependency};
use crate::seed::{Analysis, CtxId, ExecutionContext, Props, SeedPath, StatementNode};
use crate::syntax::{is_plain_ident, render_expr, render_stmt, render_stmt_indented};
use crate::trace::{Primitive, RefId, TraceValue};

pub const RESULT_BINDING: &str = "actualResult";
pub const ASSERT_FN: &str = "assertEq";
/// Levels of object properties followed when asserting on references.
pub const ASSERT_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub target: AstNode,
    pub expected: TraceValue,
}

impl Assertion {
    pub fn to_statement(&self) -> AstNode {
        let expected = match &self.expected {
            TraceValue::Prim(p) => p.to_literal(),
            TraceValue::Ref(_) => unreachable!("assertions hold primitives"),
        };
        let call =
            AstNode::new(AstKind::CallExpr).with_children(vec![name_expr(ASSERT_FN), self.target.clone(), expected]);
        AstNode::new(AstKind::ExprStmt).with_children(vec![call])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub test: AstLocation,
    pub statement: Iid,
    pub call_site: Iid,
    pub context: CtxId,
    pub path_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub name: String,
    pub dependency: String,
    pub imports: Vec<AstNode>,
    pub arrange: Vec<AstNode>,
    pub act: AstNode,
    pub asserts: Vec<Assertion>,
    pub provenance: Provenance,
}

impl TestPlan {
    /// Canonical body: arrange, act, and assertion statements.
    pub fn body(&self) -> Vec<AstNode> {
        let mut out = self.arrange.clone();
        out.push(self.act.clone());
        out.extend(self.asserts.iter().map(Assertion::to_statement));
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "test {} {{\n",
            serde_json::to_string(&self.name).expect("string serializes")
        );
        for stmt in self.body() {
            out.push_str(&render_stmt_indented(&stmt, 1));
        }
        out.push_str("}\n");
        out
    }

    fn body_key(&self) -> String {
        self.body().iter().map(render_stmt).collect()
    }
}

/// Renders plans as one module: de-duplicated imports, then the tests.
pub fn render_plans(plans: &[&TestPlan]) -> String {
    let mut seen = HashSet::new();
    let mut out = String::new();
    for import in plans.iter().flat_map(|p| &p.imports) {
        let text = render_stmt(import);
        if seen.insert(text.clone()) {
            out.push_str(&text);
        }
    }
    for plan in plans {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&plan.render());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanFailure {
    pub dependency: String,
    pub test: AstLocation,
    pub statement: Iid,
    pub call_site: Iid,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Generation {
    pub plans: Vec<TestPlan>,
    pub failures: Vec<PlanFailure>,
    pub duplicates: usize,
}

fn name_expr(name: &str) -> AstNode {
    AstNode::new(AstKind::NameExpr).with_attr("name", name)
}

/// Drops iids and spans so plans only carry structure.
fn strip(node: &AstNode) -> AstNode {
    let mut out = node.clone();
    fn go(n: &mut AstNode) {
        n.iid = 0;
        n.span = Span::default();
        n.children.iter_mut().for_each(go);
    }
    go(&mut out);
    out
}

fn member(base: AstNode, key: &str) -> AstNode {
    if is_plain_ident(key) {
        AstNode::new(AstKind::AttributeExpr)
            .with_attr("name", key)
            .with_children(vec![base])
    } else {
        AstNode::new(AstKind::SubscriptExpr).with_children(vec![base, Primitive::Str(key.to_string()).to_literal()])
    }
}

fn has_call(node: &AstNode) -> bool {
    let mut found = false;
    node.walk(&mut |n| found |= matches!(n.kind, AstKind::CallExpr | AstKind::NewExpr));
    found
}

/// Identifier uses in a (possibly amended) node.
#[derive(Default)]
struct Uses {
    values: Vec<String>,
    callees: Vec<String>,
}

fn collect_uses(node: &AstNode, uses: &mut Uses) {
    match node.kind {
        AstKind::NameExpr => uses.values.push(node.name().unwrap_or("").to_string()),
        AstKind::AssignStmt => {
            let target = &node.children[0];
            if target.kind != AstKind::NameExpr {
                collect_uses(target, uses);
            }
            collect_uses(&node.children[1], uses);
        }
        AstKind::CallExpr | AstKind::NewExpr => {
            let callee = &node.children[0];
            if callee.kind == AstKind::NameExpr {
                uses.callees.push(callee.name().unwrap_or("").to_string());
            } else {
                collect_uses(callee, uses);
            }
            node.children[1..].iter().for_each(|c| collect_uses(c, uses));
        }
        AstKind::FunctionDecl => {}
        _ => node.children.iter().for_each(|c| collect_uses(c, uses)),
    }
}

fn rename_uses(node: &mut AstNode, from: &str, to: &str) {
    match node.kind {
        AstKind::NameExpr => {
            if node.name() == Some(from) {
                node.attrs.insert("name".into(), to.into());
            }
        }
        AstKind::AssignStmt => {
            if node.children[0].kind != AstKind::NameExpr {
                rename_uses(&mut node.children[0], from, to);
            }
            rename_uses(&mut node.children[1], from, to);
        }
        AstKind::CallExpr | AstKind::NewExpr => {
            if node.children[0].kind != AstKind::NameExpr {
                rename_uses(&mut node.children[0], from, to);
            }
            node.children[1..].iter_mut().for_each(|c| rename_uses(c, from, to));
        }
        AstKind::FunctionDecl => {}
        _ => node.children.iter_mut().for_each(|c| rename_uses(c, from, to)),
    }
}

fn assigned_name(stmt: &AstNode) -> Option<&str> {
    (stmt.kind == AstKind::AssignStmt && stmt.children[0].kind == AstKind::NameExpr)
        .then(|| stmt.children[0].name())
        .flatten()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum BindingKey {
    Stmt(usize),
    Value(Primitive),
    Decl(Iid),
}

enum Resolved {
    Ref(usize),
    Prim(usize, Primitive),
    PrimParam(usize, Primitive),
    RenamedRef(String, usize),
    Global,
}

/// Shared, plan-independent lookup state.
pub struct Generator<'a> {
    forest: &'a AstForest,
    sites: &'a CallSiteSet,
    analysis: &'a Analysis,
    globals: BTreeSet<String>,
    dep_names: HashMap<Iid, String>,
}

impl<'a> Generator<'a> {
    pub fn new(forest: &'a AstForest, sites: &'a CallSiteSet, analysis: &'a Analysis) -> Self {
        let mut globals = BTreeSet::new();
        for file in forest.files() {
            for item in &file.root.children {
                if item.kind != AstKind::FunctionDecl || item.is_test() {
                    continue;
                }
                if let Some(owner) = item.attr_str("owner") {
                    globals.insert(owner.split('.').next().unwrap_or(owner).to_string());
                } else if let Some(name) = item.name() {
                    globals.insert(name.to_string());
                }
            }
        }
        let mut short_count: HashMap<&str, usize> = HashMap::new();
        for d in &sites.deps {
            *short_count.entry(d.name.as_str()).or_default() += 1;
        }
        let dep_names = sites
            .deps
            .iter()
            .map(|d| {
                let label = if short_count[d.name.as_str()] > 1 {
                    d.qualified_name.clone()
                } else {
                    d.name.clone()
                };
                (d.decl, label)
            })
            .collect();
        Generator {
            forest,
            sites,
            analysis,
            globals,
            dep_names,
        }
    }

    fn imports_for(&self, test: &AstLocation, dep: &Dependency) -> Vec<AstNode> {
        let mut out: Vec<AstNode> = Vec::new();
        let mut seen = HashSet::new();
        if let Some(file) = self.forest.file(&test.file) {
            for item in file.root.children.iter().filter(|n| n.is_import()) {
                if seen.insert(render_stmt(item)) {
                    out.push(strip(item));
                }
            }
        }
        for path in [self.sites.target_loc.file.as_str(), dep.file.as_str()] {
            let module = path.rsplit_once('.').map(|(m, _)| m).unwrap_or(path);
            let quoted = serde_json::to_string(module).expect("string serializes");
            if seen.iter().any(|t: &String| t.contains(&quoted)) {
                continue;
            }
            let call = AstNode::new(AstKind::CallExpr)
                .with_children(vec![name_expr("require"), Primitive::Str(module.into()).to_literal()]);
            let stmt = AstNode::new(AstKind::ExprStmt)
                .with_attr("isImport", true)
                .with_children(vec![call]);
            seen.insert(render_stmt(&stmt));
            out.push(stmt);
        }
        out
    }

    /// One plan per (path, DEP-bearing statement occurrence, DEP context), de-duplicated.
    pub fn generate_all(&self) -> Generation {
        let mut gen = Generation::default();
        let mut seen_bodies: HashSet<(String, String)> = HashSet::new();
        let mut seq: HashMap<String, usize> = HashMap::new();
        for path in &self.analysis.paths {
            for (k, &stmt_id) in path.statements.iter().enumerate() {
                for ctx in self.analysis.dep_contexts(stmt_id) {
                    let stmt = self.analysis.stmt(stmt_id);
                    let Some(dep) = self.sites.dependency_of_site(ctx.invocation_iid) else {
                        continue;
                    };
                    let label = self.dep_names[&dep.decl].clone();
                    match self.generate_plan(path, k, ctx, dep) {
                        Ok(mut plan) => {
                            if !seen_bodies.insert((label.clone(), plan.body_key())) {
                                gen.duplicates += 1;
                                continue;
                            }
                            let n = seq.entry(label.clone()).or_default();
                            *n += 1;
                            plan.name = format!("{label}-T{n}");
                            gen.plans.push(plan);
                        }
                        Err(e) => gen.failures.push(PlanFailure {
                            dependency: dep.qualified_name.clone(),
                            test: path.test.clone(),
                            statement: stmt.iid,
                            call_site: ctx.invocation_iid,
                            reason: e.to_string(),
                        }),
                    }
                }
            }
        }
        gen
    }

    pub fn generate_plan(
        &self,
        path: &SeedPath,
        k: usize,
        ctx: &ExecutionContext,
        dep: &Dependency,
    ) -> Result<TestPlan, PlanError> {
        let mut plan = PlanBuilder::new(self, path);
        let stmt = plan.stmts[k];
        let stmt_ast = self.forest.node(stmt.iid)?;
        let call_ast = stmt_ast
            .find(ctx.invocation_iid)
            .ok_or(PlanError::MissingCallSite(ctx.invocation_iid))?;
        let (act_call, arg_roots) = plan.generate_act(k, call_ast, ctx)?;
        for l in slice_indices(&plan.stmts, k).deps {
            plan.include(l)?;
        }
        plan.drain()?;
        let result = ctx.result.clone().unwrap_or_else(TraceValue::undefined);
        let act = if result.is_undefined() {
            AstNode::new(AstKind::ExprStmt).with_children(vec![act_call.clone()])
        } else {
            AstNode::new(AstKind::AssignStmt)
                .with_attr("decl", "const")
                .with_children(vec![name_expr(RESULT_BINDING), act_call.clone()])
        };
        let asserts = self.generate_assert(ctx, &result, &act_call, &arg_roots)?;
        let arrange = plan.finish()?;
        let plan = TestPlan {
            name: String::new(),
            dependency: dep.qualified_name.clone(),
            imports: self.imports_for(&path.test, dep),
            arrange: arrange.iter().map(strip).collect(),
            act: strip(&act),
            asserts: asserts
                .into_iter()
                .map(|a| Assertion {
                    target: strip(&a.target),
                    expected: a.expected,
                })
                .collect(),
            provenance: Provenance {
                test: path.test.clone(),
                statement: stmt.iid,
                call_site: ctx.invocation_iid,
                context: ctx.id,
                path_index: k,
            },
        };
        check_closed(&plan, &self.globals)?;
        Ok(plan)
    }

    fn props_of<'p>(&'p self, ctx: &'p ExecutionContext, id: RefId) -> Option<&'p Props> {
        ctx.snapshot
            .get(&id)
            .or_else(|| self.analysis.object(id).map(|o| &o.props))
    }

    #[allow(clippy::too_many_arguments)]
    fn assert_object(
        &self,
        ctx: &ExecutionContext,
        id: RefId,
        target: &AstNode,
        level: usize,
        only_mutated: bool,
        visiting: &mut Vec<RefId>,
        out: &mut Vec<Assertion>,
    ) {
        if level >= ASSERT_DEPTH || visiting.contains(&id) {
            return;
        }
        let Some(props) = self.props_of(ctx, id) else { return };
        visiting.push(id);
        let assert_here = !only_mutated || ctx.mutated_refs.contains(&id);
        for (key, value) in props {
            let path = member(target.clone(), key);
            match value {
                TraceValue::Prim(_) if assert_here => out.push(Assertion {
                    target: path,
                    expected: value.clone(),
                }),
                TraceValue::Prim(_) => {}
                TraceValue::Ref(child) => {
                    self.assert_object(ctx, *child, &path, level + 1, only_mutated, visiting, out)
                }
            }
        }
        visiting.pop();
    }

    fn generate_assert(
        &self,
        ctx: &ExecutionContext,
        result: &TraceValue,
        act_call: &AstNode,
        arg_roots: &[(RefId, AstNode)],
    ) -> Result<Vec<Assertion>, PlanError> {
        let mut out = Vec::new();
        match result {
            TraceValue::Prim(Primitive::Undefined) => {
                let mut seen = HashSet::new();
                let mut roots: Vec<(RefId, AstNode)> = Vec::new();
                if act_call.kind == AstKind::CallExpr && act_call.children[0].kind == AstKind::AttributeExpr {
                    if let Some(TraceValue::Ref(rcv)) = &ctx.receiver {
                        roots.push((*rcv, act_call.children[0].children[0].clone()));
                    }
                }
                roots.extend(arg_roots.iter().cloned());
                for (id, expr) in roots {
                    if has_call(&expr) || !seen.insert(id) {
                        continue;
                    }
                    self.assert_object(ctx, id, &expr, 0, true, &mut Vec::new(), &mut out);
                }
            }
            TraceValue::Prim(_) => out.push(Assertion {
                target: name_expr(RESULT_BINDING),
                expected: result.clone(),
            }),
            TraceValue::Ref(id) => {
                self.assert_object(
                    ctx,
                    *id,
                    &name_expr(RESULT_BINDING),
                    0,
                    false,
                    &mut Vec::new(),
                    &mut out,
                );
            }
        }
        if out.is_empty() {
            return Err(PlanError::NothingToAssert);
        }
        Ok(out)
    }
}

/// Free identifiers in value position must be bound earlier or be project globals.
fn check_closed(plan: &TestPlan, globals: &BTreeSet<String>) -> Result<(), PlanError> {
    let mut bound: HashSet<String> = HashSet::new();
    for stmt in plan.body() {
        if stmt.kind == AstKind::FunctionDecl {
            if let Some(name) = stmt.name() {
                bound.insert(name.to_string());
            }
            continue;
        }
        let mut uses = Uses::default();
        collect_uses(&stmt, &mut uses);
        for name in uses.values {
            if !bound.contains(&name) && !globals.contains(&name) {
                return Err(PlanError::NotClosed(name));
            }
        }
        if let Some(name) = assigned_name(&stmt) {
            bound.insert(name.to_string());
        }
    }
    Ok(())
}

/// Per-plan arrange construction state.
struct PlanBuilder<'g, 'a> {
    gen: &'g Generator<'a>,
    stmts: Vec<&'a StatementNode>,
    included: BTreeSet<usize>,
    amended: BTreeMap<usize, AstNode>,
    queue: Vec<usize>,
    /// Synthesized primitive definitions: name -> (position, statement).
    synth: BTreeMap<String, (usize, AstNode)>,
    nested: BTreeMap<Iid, AstNode>,
    bound: HashMap<String, BindingKey>,
}

impl<'g, 'a> PlanBuilder<'g, 'a> {
    fn new(gen: &'g Generator<'a>, path: &SeedPath) -> Self {
        PlanBuilder {
            gen,
            stmts: gen.analysis.path_statements(path),
            included: BTreeSet::new(),
            amended: BTreeMap::new(),
            queue: Vec::new(),
            synth: BTreeMap::new(),
            nested: BTreeMap::new(),
            bound: HashMap::new(),
        }
    }

    fn ctx_of(&self, at: usize) -> &'a ExecutionContext {
        self.gen.analysis.ctx(self.stmts[at].ctx)
    }

    fn bind(&mut self, name: &str, key: BindingKey) -> Result<bool, PlanError> {
        match self.bound.get(name) {
            Some(existing) if *existing == key => Ok(false),
            Some(_) => Err(PlanError::ConflictingBinding(name.to_string())),
            None => {
                self.bound.insert(name.to_string(), key);
                Ok(true)
            }
        }
    }

    fn include(&mut self, l: usize) -> Result<(), PlanError> {
        if self.included.insert(l) {
            let stmt = self.stmts[l];
            for (name, _) in &stmt.ref_bindings {
                self.bind(name, BindingKey::Stmt(l))?;
            }
            for (name, value) in &stmt.defined {
                if let TraceValue::Prim(p) = value {
                    self.bind(name, BindingKey::Value(p.clone()))?;
                }
            }
            self.queue.push(l);
        }
        Ok(())
    }

    /// Nearest preceding statement that bound `id` to a name, then `at` itself.
    fn resolve_id_for_ref(&self, id: RefId, at: usize) -> Result<(String, usize), PlanError> {
        (0..at)
            .rev()
            .chain(std::iter::once(at))
            .find_map(|l| {
                self.stmts[l]
                    .ref_bindings
                    .iter()
                    .find(|(_, r)| **r == id)
                    .map(|(name, _)| (name.clone(), l))
            })
            .ok_or(PlanError::UnresolvedRef(id))
    }

    fn lookup_write(&self, name: &str, at: usize, ctx: Option<CtxId>) -> Option<Resolved> {
        (0..at).rev().find_map(|l| {
            let s = self.stmts[l];
            if ctx.is_some_and(|c| c != s.ctx) {
                return None;
            }
            if s.ref_bindings.contains_key(name) {
                return Some(Resolved::Ref(l));
            }
            match s.defined.get(name) {
                Some(TraceValue::Prim(p)) => Some(Resolved::Prim(l, p.clone())),
                _ => None,
            }
        })
    }

    fn params_of(&self, ctx: &ExecutionContext) -> Vec<String> {
        match self.gen.forest.node(ctx.decl_iid) {
            Ok(decl) if decl.kind == AstKind::FunctionDecl => decl
                .children
                .iter()
                .filter(|c| c.kind == AstKind::Param)
                .filter_map(|c| c.name().map(str::to_string))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn resolve_name(&self, name: &str, at: usize) -> Result<Resolved, PlanError> {
        let ctx = self.ctx_of(at);
        if let Some(r) = self.lookup_write(name, at, Some(ctx.id)) {
            return Ok(r);
        }
        if let Some(i) = self.params_of(ctx).iter().position(|p| p == name) {
            let value = ctx.args.get(i).cloned().unwrap_or_else(TraceValue::undefined);
            let first = (0..=at).find(|&l| self.stmts[l].ctx == ctx.id).unwrap_or(at);
            return match value {
                TraceValue::Prim(p) => Ok(Resolved::PrimParam(first, p)),
                TraceValue::Ref(id) => {
                    let (renamed, l) = self.resolve_id_for_ref(id, at)?;
                    Ok(Resolved::RenamedRef(renamed, l))
                }
            };
        }
        if let Some(r) = self.lookup_write(name, at, None) {
            return Ok(r);
        }
        if self.gen.globals.contains(name) {
            return Ok(Resolved::Global);
        }
        Err(PlanError::UnresolvedIdentifier(name.to_string()))
    }

    /// Nested declaration named `name` inside the function running at `at`.
    fn nested_decl(&self, name: &str, at: usize) -> Option<&'a AstNode> {
        let decl = self.gen.forest.node(self.ctx_of(at).decl_iid).ok()?;
        let mut found = None;
        decl.walk(&mut |n| {
            if found.is_none()
                && n.kind == AstKind::FunctionDecl
                && n.iid != decl.iid
                && n.qualified_name() == Some(name)
            {
                found = Some(n);
            }
        });
        found
    }

    fn synthesize(&mut self, name: &str, pos: usize, value: &Primitive, from_stmt: bool) {
        let literal = value.to_literal();
        let node = match self.gen.forest.node(self.stmts[pos].iid) {
            Ok(orig) if from_stmt && assigned_name(orig) == Some(name) => {
                let mut n = orig.clone();
                n.children[1] = literal;
                n
            }
            _ => AstNode::new(AstKind::AssignStmt)
                .with_attr("decl", "let")
                .with_children(vec![name_expr(name), literal]),
        };
        match self.synth.get(name) {
            Some((existing, _)) if *existing <= pos => {}
            _ => {
                self.synth.insert(name.to_string(), (pos, node));
            }
        }
    }

    /// Resolves identifier uses of an amended node at path index `at`.
    fn resolve_uses(&mut self, node: &mut AstNode, at: usize) -> Result<(), PlanError> {
        let mut uses = Uses::default();
        collect_uses(node, &mut uses);
        let mut done = HashSet::new();
        for name in uses.values {
            if !done.insert(name.clone()) {
                continue;
            }
            match self.resolve_name(&name, at)? {
                Resolved::Ref(l) => {
                    self.bind(&name, BindingKey::Stmt(l))?;
                    self.include(l)?;
                }
                Resolved::Prim(l, v) => {
                    self.bind(&name, BindingKey::Value(v.clone()))?;
                    self.synthesize(&name, l, &v, true);
                }
                Resolved::PrimParam(l, v) => {
                    self.bind(&name, BindingKey::Value(v.clone()))?;
                    self.synthesize(&name, l, &v, false);
                }
                Resolved::RenamedRef(to, l) => {
                    self.bind(&to, BindingKey::Stmt(l))?;
                    self.include(l)?;
                    rename_uses(node, &name, &to);
                }
                Resolved::Global => {}
            }
        }
        for callee in uses.callees {
            if self.lookup_write(&callee, at, Some(self.ctx_of(at).id)).is_some() {
                continue;
            }
            if let Some(decl) = self.nested_decl(&callee, at) {
                self.bind(&callee, BindingKey::Decl(decl.iid))?;
                self.nested.insert(decl.iid, decl.clone());
            }
        }
        Ok(())
    }

    /// Replaces primitive arguments with recorded literals and `this` with the receiver's name.
    fn amend(&mut self, node: &AstNode, at: usize, seed: Option<(Iid, &[TraceValue])>) -> Result<AstNode, PlanError> {
        match node.kind {
            AstKind::SelfExpr => {
                let ctx = self.ctx_of(at);
                let Some(TraceValue::Ref(id)) = ctx.receiver else {
                    return Err(PlanError::UnresolvedIdentifier("this".into()));
                };
                let (name, l) = self.resolve_id_for_ref(id, at)?;
                self.bind(&name, BindingKey::Stmt(l))?;
                self.include(l)?;
                Ok(name_expr(&name))
            }
            AstKind::CallExpr | AstKind::NewExpr => {
                let args: Option<Vec<TraceValue>> = match seed {
                    Some((iid, args)) if iid == node.iid => Some(args.to_vec()),
                    _ => self.stmts[at]
                        .calls
                        .iter()
                        .find(|c| c.iid == node.iid)
                        .map(|c| c.args.clone()),
                };
                let mut out = node.clone();
                out.children[0] = self.amend(&node.children[0], at, seed)?;
                for (i, child) in node.children.iter().enumerate().skip(1) {
                    out.children[i] = match args.as_ref().and_then(|a| a.get(i - 1)) {
                        Some(TraceValue::Prim(p)) => p.to_literal(),
                        _ => self.amend(child, at, seed)?,
                    };
                }
                Ok(out)
            }
            _ => {
                let mut out = node.clone();
                for (i, child) in node.children.iter().enumerate() {
                    out.children[i] = self.amend(child, at, seed)?;
                }
                Ok(out)
            }
        }
    }

    fn generate_act(
        &mut self,
        k: usize,
        call: &AstNode,
        ctx: &ExecutionContext,
    ) -> Result<(AstNode, Vec<(RefId, AstNode)>), PlanError> {
        let mut act = self.amend(call, k, Some((call.iid, &ctx.args)))?;
        self.resolve_uses(&mut act, k)?;
        let arg_roots = ctx
            .args
            .iter()
            .zip(act.children.iter().skip(1))
            .filter_map(|(v, expr)| v.ref_id().map(|id| (id, expr.clone())))
            .collect();
        Ok((act, arg_roots))
    }

    fn drain(&mut self) -> Result<(), PlanError> {
        while let Some(l) = self.queue.pop() {
            let original = self.gen.forest.node(self.stmts[l].iid)?;
            if !matches!(original.kind, AstKind::AssignStmt | AstKind::ExprStmt) {
                return Err(PlanError::CompoundStatement(original.iid));
            }
            let mut amended = self.amend(original, l, None)?;
            self.resolve_uses(&mut amended, l)?;
            self.amended.insert(l, amended);
            for dep in slice_indices(&self.stmts, l).deps {
                self.include(dep)?;
            }
        }
        Ok(())
    }

    /// Ordered arrange list with declarations normalized.
    fn finish(self) -> Result<Vec<AstNode>, PlanError> {
        let mut items: BTreeMap<(usize, u8, String), AstNode> = BTreeMap::new();
        for (name, (pos, node)) in self.synth {
            let superseded = self
                .amended
                .get(&pos)
                .is_some_and(|s| assigned_name(s) == Some(name.as_str()));
            if !superseded {
                items.insert((pos, 0, name), node);
            }
        }
        for (pos, node) in self.amended {
            items.insert((pos, 1, String::new()), node);
        }
        let mut out: Vec<AstNode> = self.nested.into_values().collect();
        let mut declared: HashSet<String> = out.iter().filter_map(|d| d.name().map(str::to_string)).collect();
        for (_, mut node) in items {
            if let Some(name) = assigned_name(&node).map(str::to_string) {
                if node.attr_str("decl").is_some() {
                    if !declared.insert(name.clone()) {
                        return Err(PlanError::ConflictingBinding(name));
                    }
                } else if declared.insert(name) {
                    node.attrs.insert("decl".into(), "let".into());
                }
            }
            out.push(node);
        }
        Ok(out)
    }
}

/// Generates all plans for an analysed trace.
pub fn generate_all(forest: &AstForest, sites: &CallSiteSet, analysis: &Analysis) -> Generation {
    Generator::new(forest, sites, analysis).generate_all()
}

/// Groups plans per dependency for rendering, in first-appearance order.
pub fn plans_by_dependency(plans: &[TestPlan]) -> Vec<(String, Vec<&TestPlan>)> {
    let mut out: Vec<(String, Vec<&TestPlan>)> = Vec::new();
    for plan in plans {
        match out.iter_mut().find(|(d, _)| *d == plan.dependency) {
            Some((_, v)) => v.push(plan),
            None => out.push((plan.dependency.clone(), vec![plan])),
        }
    }
    out
}

/// Path expression text of an assertion target.
pub fn assertion_text(a: &Assertion) -> String {
    render_expr(&a.target)
}
