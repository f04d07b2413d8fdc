//! Tracing tree-walking interpreter over interchange ASTs.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use carve::ast::{AstForest, AstKind, AstNode, Iid};
use carve::trace::{Primitive, RefId, TraceEvent, TraceValue, TRACE_VERSION};

const MAX_DEPTH: usize = 200;
const MAX_LOOP: usize = 1_000_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Fault {
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

fn rt<T>(msg: impl Into<String>) -> Result<T, Fault> {
    Err(Fault::Runtime(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Prim(Primitive),
    Ref(RefId),
}

impl Val {
    fn undefined() -> Val {
        Val::Prim(Primitive::Undefined)
    }

    fn to_trace(&self) -> TraceValue {
        match self {
            Val::Prim(p) => TraceValue::Prim(p.clone()),
            Val::Ref(id) => TraceValue::Ref(*id),
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            Val::Prim(Primitive::Int(i)) => Some(*i as f64),
            Val::Prim(Primitive::Float(f)) => Some(*f),
            _ => None,
        }
    }

    fn truthy(&self) -> bool {
        match self {
            Val::Prim(Primitive::Bool(b)) => *b,
            Val::Prim(Primitive::Int(i)) => *i != 0,
            Val::Prim(Primitive::Float(f)) => *f != 0.0 && !f.is_nan(),
            Val::Prim(Primitive::Str(s)) => !s.is_empty(),
            Val::Prim(Primitive::Null | Primitive::Undefined) => false,
            Val::Ref(_) => true,
        }
    }
}

/// Integral finite numbers are ints, as a number-only runtime would print them.
fn num(f: f64) -> Val {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15 {
        Val::Prim(Primitive::Int(f as i64))
    } else {
        Val::Prim(Primitive::Float(f))
    }
}

fn loose_eq(a: &Val, b: &Val) -> bool {
    match (a.number(), b.number()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Equality used by assertions: numeric, with NaN equal to itself.
pub fn assert_eq_values(a: &Val, b: &Val) -> bool {
    match (a.number(), b.number()) {
        (Some(x), Some(y)) => x == y || (x.is_nan() && y.is_nan()),
        _ => a == b,
    }
}

#[derive(Debug, Clone)]
pub enum HeapObj {
    Instance {
        class: String,
        props: IndexMap<String, Val>,
    },
    List(Vec<Val>),
    Map(IndexMap<String, Val>),
}

enum Flow {
    Normal,
    Return(Val),
}

struct Frame {
    locals: HashMap<String, Val>,
    this: Option<Val>,
    nested: HashMap<String, Iid>,
    global: bool,
}

impl Frame {
    fn global() -> Frame {
        Frame {
            locals: HashMap::new(),
            this: None,
            nested: HashMap::new(),
            global: true,
        }
    }
}

enum Callee {
    User {
        decl: Iid,
        name: String,
        receiver: Option<Val>,
    },
    Builtin {
        name: String,
        receiver: Option<Val>,
    },
}

const BUILTINS: &[&str] = &[
    "hypot", "sqrt", "abs", "floor", "min", "max", "len", "assertEq", "assert", "require",
];

/// Outcome of one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub file: String,
    pub title: String,
    pub decl: Iid,
    pub fault: Option<Fault>,
}

pub struct Interp<'f> {
    forest: &'f AstForest,
    heap: Vec<HeapObj>,
    functions: HashMap<String, Iid>,
    loaded: HashSet<String>,
    globals: HashMap<String, Val>,
    events: Vec<TraceEvent>,
    depth: usize,
}

impl<'f> Interp<'f> {
    pub fn new(forest: &'f AstForest, ast_dump: &str) -> Self {
        Interp {
            forest,
            heap: Vec::new(),
            functions: HashMap::new(),
            loaded: HashSet::new(),
            globals: HashMap::new(),
            events: vec![TraceEvent::TraceHeader {
                version: TRACE_VERSION,
                ast_dump: ast_dump.to_string(),
            }],
            depth: 0,
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn heap_obj(&self, id: RefId) -> Option<&HeapObj> {
        self.heap.get(id as usize - 1)
    }

    fn emit(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    fn alloc(&mut self, obj: HeapObj) -> Val {
        self.heap.push(obj);
        Val::Ref(self.heap.len() as RefId)
    }

    fn obj_mut(&mut self, id: RefId) -> &mut HeapObj {
        &mut self.heap[id as usize - 1]
    }

    fn module_file(&self, module: &str) -> Option<String> {
        self.forest
            .files()
            .iter()
            .map(|f| f.path.as_str())
            .find(|p| p.rsplit_once('.').map(|(stem, _)| stem).unwrap_or(p) == module || *p == module)
            .map(str::to_string)
    }

    /// Registers a file's functions and runs its top-level statements once.
    pub fn load_file(&mut self, path: &str) -> Result<(), Fault> {
        if !self.loaded.insert(path.to_string()) {
            return Ok(());
        }
        let forest = self.forest;
        let Some(file) = forest.file(path) else {
            return rt(format!("no module {path}"));
        };
        for item in &file.root.children {
            if item.kind == AstKind::FunctionDecl && !item.is_test() {
                let q = item.qualified_name().unwrap_or("").to_string();
                self.functions.insert(q, item.iid);
            }
        }
        let mut frame = Frame::global();
        for item in &file.root.children {
            if item.kind != AstKind::FunctionDecl {
                self.exec_stmt(&mut frame, item)?;
            }
        }
        Ok(())
    }

    /// Runs one test declaration as a traced invocation.
    pub fn run_test(&mut self, decl: &AstNode) -> Option<Fault> {
        let title = decl.name().unwrap_or("").to_string();
        self.emit(TraceEvent::InvokeFunPre {
            iid: decl.iid,
            func_id: Some(title.clone()),
            base: None,
            args: vec![],
        });
        let result = self.invoke(decl.iid, &title, None, vec![]);
        match result {
            Ok(v) => {
                self.emit(TraceEvent::InvokeFun {
                    iid: decl.iid,
                    func_id: Some(title),
                    base: None,
                    args: vec![],
                    result: v.to_trace(),
                });
                None
            }
            Err(f) => Some(f),
        }
    }

    /// Loads a test file and runs the selected tests (all when `only` is `None`).
    pub fn run_test_file(&mut self, path: &str, only: Option<&HashSet<Iid>>) -> Vec<TestOutcome> {
        let forest = self.forest;
        let Some(file) = forest.file(path) else { return vec![] };
        if let Err(fault) = self.load_file(path) {
            return vec![TestOutcome {
                file: path.to_string(),
                title: "<module>".into(),
                decl: file.root.iid,
                fault: Some(fault),
            }];
        }
        let mut out = Vec::new();
        for item in &file.root.children {
            if !item.is_test() || only.is_some_and(|o| !o.contains(&item.iid)) {
                continue;
            }
            let fault = self.run_test(item);
            out.push(TestOutcome {
                file: path.to_string(),
                title: item.name().unwrap_or("").to_string(),
                decl: item.iid,
                fault,
            });
        }
        out
    }

    fn invoke(&mut self, decl: Iid, name: &str, receiver: Option<Val>, args: Vec<Val>) -> Result<Val, Fault> {
        let forest = self.forest;
        let node = forest.node(decl).map_err(|e| Fault::Runtime(e.to_string()))?;
        self.emit(TraceEvent::FunctionEnter {
            iid: decl,
            func_id: name.to_string(),
            receiver: receiver.as_ref().map(Val::to_trace),
            args: args.iter().map(Val::to_trace).collect(),
        });
        let mut frame = Frame {
            locals: HashMap::new(),
            this: receiver,
            nested: HashMap::new(),
            global: false,
        };
        let params = node.children.iter().filter(|c| c.kind == AstKind::Param);
        let mut args = args.into_iter();
        for p in params {
            let v = args.next().unwrap_or_else(Val::undefined);
            frame.locals.insert(p.name().unwrap_or("").to_string(), v);
        }
        let body = node.children.last().expect("functions have a body");
        self.depth += 1;
        let flow = if self.depth > MAX_DEPTH {
            rt("maximum call depth exceeded")
        } else {
            self.exec_block(&mut frame, body)
        };
        self.depth -= 1;
        let (result, err) = match flow {
            Ok(Flow::Return(v)) => (v, None),
            Ok(Flow::Normal) => (Val::undefined(), None),
            Err(e) => (Val::undefined(), Some(e)),
        };
        self.emit(TraceEvent::FunctionExit {
            iid: decl,
            result: result.to_trace(),
        });
        match err {
            Some(e) => Err(e),
            None => Ok(result),
        }
    }

    fn exec_block(&mut self, frame: &mut Frame, block: &AstNode) -> Result<Flow, Fault> {
        for stmt in &block.children {
            if let Flow::Return(v) = self.exec_stmt(frame, stmt)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_stmt(&mut self, frame: &mut Frame, stmt: &AstNode) -> Result<Flow, Fault> {
        if stmt.kind == AstKind::FunctionDecl {
            frame.nested.insert(stmt.name().unwrap_or("").to_string(), stmt.iid);
            return Ok(Flow::Normal);
        }
        self.emit(TraceEvent::StmtStart { iid: stmt.iid });
        let result = self.exec_inner(frame, stmt);
        self.emit(TraceEvent::StmtEnd { iid: stmt.iid });
        result
    }

    fn exec_inner(&mut self, frame: &mut Frame, stmt: &AstNode) -> Result<Flow, Fault> {
        let c = &stmt.children;
        match stmt.kind {
            AstKind::ExprStmt => {
                self.eval(frame, &c[0])?;
            }
            AstKind::AssignStmt => {
                let v = self.eval(frame, &c[1])?;
                self.assign(frame, &c[0], v)?;
            }
            AstKind::ReturnStmt => {
                let v = match c.first() {
                    Some(e) => self.eval(frame, e)?,
                    None => Val::undefined(),
                };
                return Ok(Flow::Return(v));
            }
            AstKind::IfStmt => {
                if self.eval(frame, &c[0])?.truthy() {
                    return self.exec_block(frame, &c[1]);
                }
                match c.get(2) {
                    Some(alt) if alt.kind == AstKind::IfStmt => return self.exec_stmt(frame, alt),
                    Some(alt) => return self.exec_block(frame, alt),
                    None => {}
                }
            }
            AstKind::WhileStmt => {
                let mut n = 0;
                while self.eval(frame, &c[0])?.truthy() {
                    n += 1;
                    if n > MAX_LOOP {
                        return rt("loop iteration limit exceeded");
                    }
                    if let Flow::Return(v) = self.exec_block(frame, &c[1])? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            AstKind::ForStmt => {
                self.exec_stmt(frame, &c[0])?;
                let mut n = 0;
                while self.eval(frame, &c[1])?.truthy() {
                    n += 1;
                    if n > MAX_LOOP {
                        return rt("loop iteration limit exceeded");
                    }
                    if let Flow::Return(v) = self.exec_block(frame, &c[3])? {
                        return Ok(Flow::Return(v));
                    }
                    self.exec_stmt(frame, &c[2])?;
                }
            }
            AstKind::Block => return self.exec_block(frame, stmt),
            other => return rt(format!("{other} is not a statement")),
        }
        Ok(Flow::Normal)
    }

    fn lookup(&self, frame: &Frame, name: &str) -> Option<Val> {
        if !frame.global {
            if let Some(v) = frame.locals.get(name) {
                return Some(v.clone());
            }
        }
        self.globals.get(name).cloned()
    }

    fn assign(&mut self, frame: &mut Frame, target: &AstNode, v: Val) -> Result<(), Fault> {
        match target.kind {
            AstKind::NameExpr => {
                let name = target.name().unwrap_or("").to_string();
                self.emit(TraceEvent::Write {
                    iid: target.iid,
                    name: name.clone(),
                    value: v.to_trace(),
                });
                if frame.global || (!frame.locals.contains_key(&name) && self.globals.contains_key(&name)) {
                    self.globals.insert(name, v);
                } else {
                    frame.locals.insert(name, v);
                }
            }
            AstKind::AttributeExpr => {
                let base = self.eval(frame, &target.children[0])?;
                let key = target.name().unwrap_or("").to_string();
                self.put_field(target.iid, base, key, v)?;
            }
            AstKind::SubscriptExpr => {
                let base = self.eval(frame, &target.children[0])?;
                let index = self.eval(frame, &target.children[1])?;
                let key = offset_of(&index)?;
                self.put_field(target.iid, base, key, v)?;
            }
            other => return rt(format!("cannot assign to {other}")),
        }
        Ok(())
    }

    fn put_field(&mut self, iid: Iid, base: Val, key: String, v: Val) -> Result<(), Fault> {
        let Val::Ref(id) = base else {
            return rt(format!("cannot set property '{key}' of a primitive"));
        };
        match self.obj_mut(id) {
            HeapObj::Instance { props, .. } | HeapObj::Map(props) => {
                props.insert(key.clone(), v.clone());
            }
            HeapObj::List(items) => {
                let Ok(i) = key.parse::<usize>() else {
                    return rt(format!("bad list index '{key}'"));
                };
                if i >= items.len() {
                    items.resize(i + 1, Val::undefined());
                }
                items[i] = v.clone();
            }
        }
        self.emit(TraceEvent::PutField {
            iid,
            base: Val::Ref(id).to_trace(),
            offset: key,
            value: v.to_trace(),
        });
        Ok(())
    }

    fn get_field(&mut self, iid: Iid, base: Val, key: String) -> Result<Val, Fault> {
        let Val::Ref(id) = base else {
            return rt(format!("cannot read property '{key}' of a primitive"));
        };
        let v = match &self.heap[id as usize - 1] {
            HeapObj::Instance { props, .. } | HeapObj::Map(props) => props.get(&key).cloned(),
            HeapObj::List(items) => key.parse::<usize>().ok().and_then(|i| items.get(i).cloned()),
        }
        .unwrap_or_else(Val::undefined);
        self.emit(TraceEvent::GetField {
            iid,
            base: Val::Ref(id).to_trace(),
            offset: key,
            value: v.to_trace(),
        });
        Ok(v)
    }

    fn eval(&mut self, frame: &mut Frame, node: &AstNode) -> Result<Val, Fault> {
        let c = &node.children;
        match node.kind {
            AstKind::Literal => literal_value(node),
            AstKind::NameExpr => {
                let name = node.name().unwrap_or("");
                let Some(v) = self.lookup(frame, name) else {
                    return rt(format!("'{name}' is not defined"));
                };
                self.emit(TraceEvent::Read {
                    iid: node.iid,
                    name: name.to_string(),
                    value: v.to_trace(),
                });
                Ok(v)
            }
            AstKind::SelfExpr => {
                let Some(v) = frame.this.clone() else {
                    return rt("'this' outside a method");
                };
                self.emit(TraceEvent::Read {
                    iid: node.iid,
                    name: "this".into(),
                    value: v.to_trace(),
                });
                Ok(v)
            }
            AstKind::AttributeExpr => {
                let base = self.eval(frame, &c[0])?;
                self.get_field(node.iid, base, node.name().unwrap_or("").to_string())
            }
            AstKind::SubscriptExpr => {
                let base = self.eval(frame, &c[0])?;
                let index = self.eval(frame, &c[1])?;
                let key = offset_of(&index)?;
                self.get_field(node.iid, base, key)
            }
            AstKind::CallExpr => self.call(frame, node),
            AstKind::NewExpr => self.construct(frame, node),
            AstKind::UnaryExpr => {
                let v = self.eval(frame, &c[0])?;
                match node.attr_str("op") {
                    Some("-") => match v {
                        Val::Prim(Primitive::Int(i)) => Ok(i
                            .checked_neg()
                            .map(|n| Val::Prim(Primitive::Int(n)))
                            .unwrap_or_else(|| num(-(i as f64)))),
                        Val::Prim(Primitive::Float(f)) => Ok(Val::Prim(Primitive::Float(-f))),
                        _ => rt("unary '-' on a non-number"),
                    },
                    Some("!") => Ok(Val::Prim(Primitive::Bool(!v.truthy()))),
                    op => rt(format!("unknown unary operator {op:?}")),
                }
            }
            AstKind::BinaryExpr => {
                let op = node.attr_str("op").unwrap_or("");
                let left = self.eval(frame, &c[0])?;
                match op {
                    "&&" if !left.truthy() => return Ok(left),
                    "||" if left.truthy() => return Ok(left),
                    "&&" | "||" => return self.eval(frame, &c[1]),
                    _ => {}
                }
                let right = self.eval(frame, &c[1])?;
                binary(op, &left, &right)
            }
            AstKind::ListExpr => {
                let mut items = Vec::with_capacity(c.len());
                for e in c {
                    items.push(self.eval(frame, e)?);
                }
                let list = self.alloc(HeapObj::List(Vec::new()));
                self.emit(TraceEvent::Literal {
                    iid: node.iid,
                    value: list.to_trace(),
                });
                for (i, v) in items.into_iter().enumerate() {
                    self.put_field(node.iid, list.clone(), i.to_string(), v)?;
                }
                Ok(list)
            }
            AstKind::MapExpr => {
                let keys: Vec<String> = match node.attrs.get("keys") {
                    Some(Value::Array(ks)) => ks.iter().filter_map(|k| k.as_str().map(str::to_string)).collect(),
                    _ => Vec::new(),
                };
                let mut values = Vec::with_capacity(c.len());
                for e in c {
                    values.push(self.eval(frame, e)?);
                }
                let map = self.alloc(HeapObj::Map(IndexMap::new()));
                self.emit(TraceEvent::Literal {
                    iid: node.iid,
                    value: map.to_trace(),
                });
                for (k, v) in keys.into_iter().zip(values) {
                    self.put_field(node.iid, map.clone(), k, v)?;
                }
                Ok(map)
            }
            other => rt(format!("{other} is not an expression")),
        }
    }

    fn find_callee(&mut self, frame: &mut Frame, callee: &AstNode) -> Result<Callee, Fault> {
        match callee.kind {
            AstKind::NameExpr => {
                let name = callee.name().unwrap_or("").to_string();
                if self.lookup(frame, &name).is_some() {
                    return rt(format!("'{name}' is not a function"));
                }
                if let Some(&decl) = frame.nested.get(&name).or_else(|| self.functions.get(&name)) {
                    return Ok(Callee::User {
                        decl,
                        name,
                        receiver: None,
                    });
                }
                if BUILTINS.contains(&name.as_str()) {
                    return Ok(Callee::Builtin { name, receiver: None });
                }
                rt(format!("'{name}' is not defined"))
            }
            AstKind::AttributeExpr => {
                let method = callee.name().unwrap_or("");
                let object = &callee.children[0];
                if object.kind == AstKind::NameExpr {
                    let owner = object.name().unwrap_or("");
                    let q = format!("{owner}.{method}");
                    if self.lookup(frame, owner).is_none() {
                        if let Some(&decl) = self.functions.get(&q) {
                            return Ok(Callee::User {
                                decl,
                                name: q,
                                receiver: None,
                            });
                        }
                    }
                }
                let base = self.eval(frame, object)?;
                let Val::Ref(id) = base else {
                    return rt(format!("cannot call '{method}' on a primitive"));
                };
                match &self.heap[id as usize - 1] {
                    HeapObj::Instance { class, .. } => {
                        let q = format!("{class}.{method}");
                        match self.functions.get(&q) {
                            Some(&decl) => Ok(Callee::User {
                                decl,
                                name: q,
                                receiver: Some(base),
                            }),
                            None => rt(format!("no method {q}")),
                        }
                    }
                    HeapObj::List(_) if method == "push" => Ok(Callee::Builtin {
                        name: "push".into(),
                        receiver: Some(base),
                    }),
                    _ => rt(format!("no method '{method}'")),
                }
            }
            other => rt(format!("cannot call a {other}")),
        }
    }

    fn call(&mut self, frame: &mut Frame, node: &AstNode) -> Result<Val, Fault> {
        let callee = self.find_callee(frame, &node.children[0])?;
        let mut args = Vec::new();
        for a in &node.children[1..] {
            args.push(self.eval(frame, a)?);
        }
        let (name, receiver) = match &callee {
            Callee::User { name, receiver, .. } | Callee::Builtin { name, receiver } => {
                (name.clone(), receiver.clone())
            }
        };
        let base = receiver.as_ref().map(Val::to_trace);
        let targs: Vec<TraceValue> = args.iter().map(Val::to_trace).collect();
        self.emit(TraceEvent::InvokeFunPre {
            iid: node.iid,
            func_id: Some(name.clone()),
            base: base.clone(),
            args: targs.clone(),
        });
        let result = match callee {
            Callee::User { decl, receiver, .. } => self.invoke(decl, &name, receiver, args)?,
            Callee::Builtin { receiver, .. } => self.builtin(node.iid, &name, receiver, args)?,
        };
        self.emit(TraceEvent::InvokeFun {
            iid: node.iid,
            func_id: Some(name),
            base,
            args: targs,
            result: result.to_trace(),
        });
        Ok(result)
    }

    fn construct(&mut self, frame: &mut Frame, node: &AstNode) -> Result<Val, Fault> {
        let class = qualified_callee(&node.children[0])
            .ok_or_else(|| Fault::Runtime("unsupported constructor expression".into()))?;
        let Some(&decl) = self.functions.get(&class) else {
            return rt(format!("no constructor {class}"));
        };
        let mut args = Vec::new();
        for a in &node.children[1..] {
            args.push(self.eval(frame, a)?);
        }
        let targs: Vec<TraceValue> = args.iter().map(Val::to_trace).collect();
        self.emit(TraceEvent::InvokeFunPre {
            iid: node.iid,
            func_id: Some(class.clone()),
            base: None,
            args: targs.clone(),
        });
        let obj = self.alloc(HeapObj::Instance {
            class: class.clone(),
            props: IndexMap::new(),
        });
        self.invoke(decl, &class, Some(obj.clone()), args)?;
        self.emit(TraceEvent::InvokeFun {
            iid: node.iid,
            func_id: Some(class),
            base: None,
            args: targs,
            result: obj.to_trace(),
        });
        Ok(obj)
    }

    fn builtin(&mut self, iid: Iid, name: &str, receiver: Option<Val>, args: Vec<Val>) -> Result<Val, Fault> {
        let nums = || -> Result<Vec<f64>, Fault> {
            args.iter()
                .map(|a| {
                    a.number()
                        .ok_or_else(|| Fault::Runtime(format!("{name} expects numbers")))
                })
                .collect()
        };
        match name {
            "hypot" => Ok(num(nums()?.iter().map(|x| x * x).sum::<f64>().sqrt())),
            "sqrt" => Ok(num(nums()?.first().copied().unwrap_or(f64::NAN).sqrt())),
            "abs" => Ok(num(nums()?.first().copied().unwrap_or(f64::NAN).abs())),
            "floor" => Ok(num(nums()?.first().copied().unwrap_or(f64::NAN).floor())),
            "min" => Ok(num(nums()?.into_iter().fold(f64::INFINITY, f64::min))),
            "max" => Ok(num(nums()?.into_iter().fold(f64::NEG_INFINITY, f64::max))),
            "len" => match args.first() {
                Some(Val::Ref(id)) => Ok(num(match &self.heap[*id as usize - 1] {
                    HeapObj::List(items) => items.len(),
                    HeapObj::Map(props) | HeapObj::Instance { props, .. } => props.len(),
                } as f64)),
                Some(Val::Prim(Primitive::Str(s))) => Ok(num(s.chars().count() as f64)),
                _ => rt("len expects a container or string"),
            },
            "push" => {
                let Some(list @ Val::Ref(id)) = receiver else {
                    return rt("push without a list");
                };
                let n = match &self.heap[id as usize - 1] {
                    HeapObj::List(items) => items.len(),
                    _ => return rt("push on a non-list"),
                };
                for (i, v) in args.into_iter().enumerate() {
                    self.put_field(iid, list.clone(), (n + i).to_string(), v)?;
                }
                Ok(Val::undefined())
            }
            "assertEq" => {
                let (Some(actual), Some(expected)) = (args.first(), args.get(1)) else {
                    return rt("assertEq expects two arguments");
                };
                if assert_eq_values(actual, expected) {
                    Ok(Val::undefined())
                } else {
                    Err(Fault::Assertion(format!(
                        "expected {}, got {}",
                        self.show(expected),
                        self.show(actual)
                    )))
                }
            }
            "assert" => match args.first() {
                Some(v) if v.truthy() => Ok(Val::undefined()),
                _ => Err(Fault::Assertion("condition is false".into())),
            },
            "require" => {
                let Some(Val::Prim(Primitive::Str(module))) = args.first() else {
                    return rt("require expects a module path");
                };
                match self.module_file(module) {
                    Some(path) => {
                        self.load_file(&path)?;
                        Ok(Val::undefined())
                    }
                    None => rt(format!("cannot find module '{module}'")),
                }
            }
            other => rt(format!("unknown builtin {other}")),
        }
    }

    pub fn show(&self, v: &Val) -> String {
        match v {
            Val::Prim(p) => p.literal_text(),
            Val::Ref(id) => match &self.heap[*id as usize - 1] {
                HeapObj::Instance { class, .. } => format!("<{class} #{id}>"),
                HeapObj::List(_) => format!("<list #{id}>"),
                HeapObj::Map(_) => format!("<map #{id}>"),
            },
        }
    }
}

fn qualified_callee(node: &AstNode) -> Option<String> {
    match node.kind {
        AstKind::NameExpr => node.name().map(str::to_string),
        AstKind::AttributeExpr => Some(format!("{}.{}", qualified_callee(&node.children[0])?, node.name()?)),
        _ => None,
    }
}

fn offset_of(index: &Val) -> Result<String, Fault> {
    match index {
        Val::Prim(Primitive::Int(i)) => Ok(i.to_string()),
        Val::Prim(Primitive::Str(s)) => Ok(s.clone()),
        other => rt(format!("bad subscript {other:?}")),
    }
}

fn literal_value(node: &AstNode) -> Result<Val, Fault> {
    let value = node.attrs.get("value").cloned().unwrap_or(Value::Null);
    let p = match node.attr_str("type") {
        Some("int") => Primitive::Int(value.as_i64().ok_or_else(|| Fault::Runtime("bad int literal".into()))?),
        Some("float") => Primitive::Float(match &value {
            Value::String(s) if s == "Infinity" => f64::INFINITY,
            Value::String(s) if s == "-Infinity" => f64::NEG_INFINITY,
            Value::String(_) => f64::NAN,
            v => v.as_f64().unwrap_or(f64::NAN),
        }),
        Some("string") => Primitive::Str(value.as_str().unwrap_or("").to_string()),
        Some("boolean") => Primitive::Bool(value.as_bool().unwrap_or(false)),
        Some("null") => Primitive::Null,
        Some("undefined") => Primitive::Undefined,
        other => return rt(format!("unknown literal type {other:?}")),
    };
    Ok(match p {
        Primitive::Float(f) => num(f),
        p => Val::Prim(p),
    })
}

fn binary(op: &str, a: &Val, b: &Val) -> Result<Val, Fault> {
    use Primitive::{Bool, Int, Str};
    let bool_val = |x: bool| Ok(Val::Prim(Bool(x)));
    match op {
        "==" => return bool_val(loose_eq(a, b)),
        "!=" => return bool_val(!loose_eq(a, b)),
        _ => {}
    }
    if op == "+" && (matches!(a, Val::Prim(Str(_))) || matches!(b, Val::Prim(Str(_)))) {
        let text = |v: &Val| match v {
            Val::Prim(Str(s)) => Ok(s.clone()),
            Val::Prim(p) => Ok(p.literal_text()),
            Val::Ref(_) => rt("cannot concatenate an object"),
        };
        return Ok(Val::Prim(Str(format!("{}{}", text(a)?, text(b)?))));
    }
    if let (Val::Prim(Str(x)), Val::Prim(Str(y))) = (a, b) {
        return match op {
            "<" => bool_val(x < y),
            "<=" => bool_val(x <= y),
            ">" => bool_val(x > y),
            ">=" => bool_val(x >= y),
            _ => rt(format!("operator {op} on strings")),
        };
    }
    let (Some(x), Some(y)) = (a.number(), b.number()) else {
        return rt(format!("operator {op} on non-numbers"));
    };
    if let (Val::Prim(Int(i)), Val::Prim(Int(j))) = (a, b) {
        let exact = match op {
            "+" => i.checked_add(*j),
            "-" => i.checked_sub(*j),
            "*" => i.checked_mul(*j),
            "%" if *j != 0 => i.checked_rem(*j),
            _ => None,
        };
        if let Some(r) = exact {
            return Ok(Val::Prim(Int(r)));
        }
    }
    match op {
        "+" => Ok(num(x + y)),
        "-" => Ok(num(x - y)),
        "*" => Ok(num(x * y)),
        "/" => Ok(num(x / y)),
        "%" => Ok(num(x % y)),
        "<" => bool_val(x < y),
        "<=" => bool_val(x <= y),
        ">" => bool_val(x > y),
        ">=" => bool_val(x >= y),
        _ => rt(format!("unknown operator {op}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use carve::syntax::build_forest;
    use carve::trace::NestingChecker;

    fn run(src: &str) -> (Vec<TestOutcome>, Vec<TraceEvent>) {
        let forest = build_forest(vec![("t.sl".into(), src.into())]).unwrap();
        let mut interp = Interp::new(&forest, "ast.json");
        let outcomes = interp.run_test_file("t.sl", None);
        (outcomes, interp.into_events())
    }

    #[test]
    fn arithmetic_follows_number_semantics() {
        let (out, _) = run(
            "test \"t\" { assertEq(7 / 2, 3.5); assertEq(4 / 2, 2); assertEq(-7 % 3, -1); assertEq(hypot(3, 4), 5); assertEq(0 / 0, NaN); assertEq(\"a\" + 1, \"a1\"); }",
        );
        assert_eq!(out[0].fault, None);
    }

    #[test]
    fn failing_assertion_is_reported_and_trace_stays_balanced() {
        let (out, events) =
            run("function f(x) { for (let i = 0; i < 3; i = i + 1) { assertEq(x, 2); } }\ntest \"t\" { f(1); }");
        assert!(matches!(out[0].fault, Some(Fault::Assertion(_))));
        let mut checker = NestingChecker::new();
        for ev in &events {
            checker.accept(ev).unwrap();
        }
        checker.finish().unwrap();
    }

    #[test]
    fn methods_dispatch_on_instance_class() {
        let src = "function P(x) { this.x = x; }\nfunction P.get() { return this.x; }\nfunction P.make(x) { return new P(x); }\ntest \"t\" { const p = P.make(5); assertEq(p.get(), 5); let l = [1]; l.push(p); assertEq(len(l), 2); }";
        let (out, events) = run(src);
        assert_eq!(out[0].fault, None);
        assert!(events
            .iter()
            .any(|e| matches!(e, TraceEvent::FunctionEnter { func_id, receiver: Some(_), .. } if func_id == "P.get")));
        assert!(events
            .iter()
            .any(|e| matches!(e, TraceEvent::FunctionEnter { func_id, receiver: None, .. } if func_id == "P.make")));
    }

    #[test]
    fn literals_emit_property_writes() {
        let (_, events) = run("test \"t\" { const m = {a: 1, b: [2]}; }");
        let puts: Vec<&str> = events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::PutField { offset, .. } => Some(offset.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(puts, vec!["0", "a", "b"]);
    }
}
