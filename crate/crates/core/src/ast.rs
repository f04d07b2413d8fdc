//! Normalized AST interchange format.
//!
//! The harness parses subject-language sources and lowers them into a small,
//! language-neutral node set. Every node carries an `iid` that trace events
//! refer to, so the forest doubles as the iid ↔ source-location map used by
//! every analysis step.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::AstError;

pub type Iid = u32;

pub const INTERCHANGE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AstKind {
    Module,
    FunctionDecl,
    Param,
    ExprStmt,
    AssignStmt,
    ReturnStmt,
    IfStmt,
    ForStmt,
    WhileStmt,
    Block,
    CallExpr,
    NewExpr,
    NameExpr,
    SelfExpr,
    AttributeExpr,
    SubscriptExpr,
    Literal,
    BinaryExpr,
    UnaryExpr,
    ListExpr,
    MapExpr,
}

impl AstKind {
    pub const ALL: [AstKind; 21] = [
        AstKind::Module,
        AstKind::FunctionDecl,
        AstKind::Param,
        AstKind::ExprStmt,
        AstKind::AssignStmt,
        AstKind::ReturnStmt,
        AstKind::IfStmt,
        AstKind::ForStmt,
        AstKind::WhileStmt,
        AstKind::Block,
        AstKind::CallExpr,
        AstKind::NewExpr,
        AstKind::NameExpr,
        AstKind::SelfExpr,
        AstKind::AttributeExpr,
        AstKind::SubscriptExpr,
        AstKind::Literal,
        AstKind::BinaryExpr,
        AstKind::UnaryExpr,
        AstKind::ListExpr,
        AstKind::MapExpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AstKind::Module => "Module",
            AstKind::FunctionDecl => "FunctionDecl",
            AstKind::Param => "Param",
            AstKind::ExprStmt => "ExprStmt",
            AstKind::AssignStmt => "AssignStmt",
            AstKind::ReturnStmt => "ReturnStmt",
            AstKind::IfStmt => "IfStmt",
            AstKind::ForStmt => "ForStmt",
            AstKind::WhileStmt => "WhileStmt",
            AstKind::Block => "Block",
            AstKind::CallExpr => "CallExpr",
            AstKind::NewExpr => "NewExpr",
            AstKind::NameExpr => "NameExpr",
            AstKind::SelfExpr => "SelfExpr",
            AstKind::AttributeExpr => "AttributeExpr",
            AstKind::SubscriptExpr => "SubscriptExpr",
            AstKind::Literal => "Literal",
            AstKind::BinaryExpr => "BinaryExpr",
            AstKind::UnaryExpr => "UnaryExpr",
            AstKind::ListExpr => "ListExpr",
            AstKind::MapExpr => "MapExpr",
        }
    }

    pub fn parse(s: &str) -> Option<AstKind> {
        AstKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }

    /// Kinds that the tracer reports with `stmtStart`/`stmtEnd`.
    pub fn is_statement(self) -> bool {
        matches!(
            self,
            AstKind::ExprStmt
                | AstKind::AssignStmt
                | AstKind::ReturnStmt
                | AstKind::IfStmt
                | AstKind::ForStmt
                | AstKind::WhileStmt
                | AstKind::FunctionDecl
        )
    }

    pub fn is_compound(self) -> bool {
        matches!(self, AstKind::IfStmt | AstKind::ForStmt | AstKind::WhileStmt)
    }
}

impl fmt::Display for AstKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source range; lines are 1-based, columns 0-based, end column exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Span {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn new(start_line: u32, start_col: u32, end_line: u32, end_col: u32) -> Self {
        Span {
            start_line,
            start_col,
            end_line,
            end_col,
        }
    }

    pub fn start(&self) -> (u32, u32) {
        (self.start_line, self.start_col)
    }

    pub fn end(&self) -> (u32, u32) {
        (self.end_line, self.end_col)
    }

    pub fn is_well_formed(&self) -> bool {
        self.start() <= self.end()
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start() <= other.start() && other.end() <= self.end()
    }

    pub fn cover(&self, other: &Span) -> Span {
        let (sl, sc) = self.start().min(other.start());
        let (el, ec) = self.end().max(other.end());
        Span::new(sl, sc, el, ec)
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.start_line, self.start_col, self.end_line, self.end_col].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [a, b, c, e] = <[u32; 4]>::deserialize(d)?;
        Ok(Span::new(a, b, c, e))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}",
            self.start_line, self.start_col, self.end_line, self.end_col
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AstLocation {
    pub file: String,
    pub span: Span,
}

impl AstLocation {
    pub fn contains(&self, other: &AstLocation) -> bool {
        self.file == other.file && self.span.contains(&other.span)
    }
}

impl fmt::Display for AstLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.file, self.span)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub iid: Iid,
    pub kind: AstKind,
    pub span: Span,
    pub attrs: Map<String, Value>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: AstKind) -> Self {
        AstNode {
            iid: 0,
            kind,
            span: Span::default(),
            attrs: Map::new(),
            children: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn with_children(mut self, children: Vec<AstNode>) -> Self {
        self.children = children;
        self
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    pub fn attr_bool(&self, key: &str) -> bool {
        self.attrs.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    /// `name` attribute of names, params, attributes and declarations.
    pub fn name(&self) -> Option<&str> {
        self.attr_str("name")
    }

    pub fn qualified_name(&self) -> Option<&str> {
        self.attr_str("qualifiedName").or_else(|| self.name())
    }

    pub fn is_test(&self) -> bool {
        self.attr_bool("isTest")
    }

    pub fn is_import(&self) -> bool {
        self.attr_bool("isImport")
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a AstNode)) {
        visit(self);
        for child in &self.children {
            child.walk(visit);
        }
    }

    pub fn find(&self, iid: Iid) -> Option<&AstNode> {
        if self.iid == iid {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(iid))
    }

    pub fn find_mut(&mut self, iid: Iid) -> Option<&mut AstNode> {
        if self.iid == iid {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(iid))
    }

    /// Numbers this subtree in pre-order starting at `next`; returns the next free iid.
    pub fn assign_preorder_iids(&mut self, mut next: Iid) -> Iid {
        self.iid = next;
        next += 1;
        for child in &mut self.children {
            next = child.assign_preorder_iids(next);
        }
        next
    }

    pub fn clear_iids(&mut self) {
        self.iid = 0;
        for child in &mut self.children {
            child.clear_iids();
        }
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("iid".into(), Value::from(self.iid));
        obj.insert("kind".into(), Value::from(self.kind.as_str()));
        obj.insert("span".into(), serde_json::to_value(self.span).expect("span serializes"));
        obj.insert("attrs".into(), Value::Object(self.attrs.clone()));
        obj.insert(
            "children".into(),
            Value::Array(self.children.iter().map(AstNode::to_json).collect()),
        );
        Value::Object(obj)
    }

    pub fn from_json(value: &Value) -> Result<AstNode, AstError> {
        node_from_json(value, "root")
    }
}

impl Serialize for AstNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AstNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        AstNode::from_json(&value).map_err(serde::de::Error::custom)
    }
}

fn node_from_json(value: &Value, path: &str) -> Result<AstNode, AstError> {
    let schema = |message: String| AstError::Schema {
        node: path.to_string(),
        message,
    };
    let obj = value.as_object().ok_or_else(|| schema("expected an object".into()))?;
    let iid = obj
        .get("iid")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema("missing or non-integer 'iid'".into()))?;
    let iid = Iid::try_from(iid).map_err(|_| schema(format!("iid {iid} out of range")))?;
    let node_path = format!("{path}(iid {iid})");
    let schema = |message: String| AstError::Schema {
        node: node_path.clone(),
        message,
    };
    let kind_str = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("missing 'kind'".into()))?;
    let kind = AstKind::parse(kind_str).ok_or_else(|| schema(format!("unknown kind '{kind_str}'")))?;
    let span: Span = obj
        .get("span")
        .ok_or_else(|| schema("missing 'span'".into()))
        .and_then(|v| serde_json::from_value(v.clone()).map_err(|e| schema(format!("bad 'span': {e}"))))?;
    let attrs = match obj.get("attrs") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(schema("'attrs' must be an object".into())),
    };
    let children = match obj.get("children") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, c)| node_from_json(c, &format!("{node_path}.children[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema("'children' must be an array".into())),
    };
    Ok(AstNode {
        iid,
        kind,
        span,
        attrs,
        children,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstFile {
    pub path: String,
    pub root: AstNode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AstDocument {
    pub version: u64,
    pub files: Vec<AstFile>,
}

/// Position of a node inside the forest: file index plus child-index path.
#[derive(Debug, Clone)]
struct NodeAddr {
    file: usize,
    path: Vec<usize>,
}

/// A loaded, verified AST snapshot with an iid index.
#[derive(Debug, Clone)]
pub struct AstForest {
    files: Vec<AstFile>,
    index: HashMap<Iid, NodeAddr>,
}

impl AstForest {
    /// Builds a forest from files, verifying iid uniqueness and span nesting.
    pub fn new(mut files: Vec<AstFile>) -> Result<AstForest, AstError> {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut index = HashMap::new();
        for (fi, file) in files.iter().enumerate() {
            if file.root.kind != AstKind::Module {
                return Err(AstError::Schema {
                    node: format!("{}:root(iid {})", file.path, file.root.iid),
                    message: format!("file root must be a Module, found {}", file.root.kind),
                });
            }
            let mut path = Vec::new();
            index_node(&file.root, fi, &file.path, &mut path, &mut index)?;
        }
        Ok(AstForest { files, index })
    }

    pub fn from_document(doc: AstDocument) -> Result<AstForest, AstError> {
        if doc.version != INTERCHANGE_VERSION {
            return Err(AstError::Schema {
                node: "document".into(),
                message: format!("unsupported version {}", doc.version),
            });
        }
        AstForest::new(doc.files)
    }

    pub fn from_json_str(text: &str) -> Result<AstForest, AstError> {
        let value: Value = serde_json::from_str(text).map_err(|e| AstError::Schema {
            node: "document".into(),
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| AstError::Schema {
            node: "document".into(),
            message: "expected an object".into(),
        })?;
        let version = obj
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| AstError::Schema {
                node: "document".into(),
                message: "missing 'version'".into(),
            })?;
        let files = obj
            .get("files")
            .and_then(Value::as_array)
            .ok_or_else(|| AstError::Schema {
                node: "document".into(),
                message: "missing 'files' array".into(),
            })?;
        let mut out = Vec::with_capacity(files.len());
        for (i, f) in files.iter().enumerate() {
            let path = f.get("path").and_then(Value::as_str).ok_or_else(|| AstError::Schema {
                node: format!("files[{i}]"),
                message: "missing 'path'".into(),
            })?;
            let root = f.get("root").ok_or_else(|| AstError::Schema {
                node: format!("files[{i}]"),
                message: "missing 'root'".into(),
            })?;
            let root = node_from_json(root, &format!("{path}:root"))?;
            out.push(AstFile {
                path: path.to_string(),
                root,
            });
        }
        AstForest::from_document(AstDocument { version, files: out })
    }

    pub fn to_document(&self) -> AstDocument {
        AstDocument {
            version: INTERCHANGE_VERSION,
            files: self.files.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("forest serializes");
        s.push('\n');
        s
    }

    pub fn files(&self) -> &[AstFile] {
        &self.files
    }

    pub fn file(&self, path: &str) -> Option<&AstFile> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn contains_iid(&self, iid: Iid) -> bool {
        self.index.contains_key(&iid)
    }

    pub fn node(&self, iid: Iid) -> Result<&AstNode, AstError> {
        let addr = self.index.get(&iid).ok_or(AstError::UnknownIid(iid))?;
        let mut node = &self.files[addr.file].root;
        for &i in &addr.path {
            node = &node.children[i];
        }
        Ok(node)
    }

    /// File path holding `iid`.
    pub fn file_of(&self, iid: Iid) -> Result<&str, AstError> {
        let addr = self.index.get(&iid).ok_or(AstError::UnknownIid(iid))?;
        Ok(&self.files[addr.file].path)
    }

    /// Ancestors of `iid`, outermost first, excluding the node itself.
    pub fn ancestors(&self, iid: Iid) -> Result<Vec<&AstNode>, AstError> {
        let addr = self.index.get(&iid).ok_or(AstError::UnknownIid(iid))?;
        let mut node = &self.files[addr.file].root;
        let mut out = Vec::with_capacity(addr.path.len());
        for &i in &addr.path {
            out.push(node);
            node = &node.children[i];
        }
        Ok(out)
    }

    /// Innermost statement-kind node containing `iid` (the node itself if it is one).
    pub fn enclosing_statement(&self, iid: Iid) -> Result<&AstNode, AstError> {
        let node = self.node(iid)?;
        if node.kind.is_statement() {
            return Ok(node);
        }
        self.ancestors(iid)?
            .into_iter()
            .rev()
            .find(|n| n.kind.is_statement())
            .ok_or(AstError::UnknownIid(iid))
    }

    pub fn iid_to_location(&self, iid: Iid) -> Result<AstLocation, AstError> {
        let addr = self.index.get(&iid).ok_or(AstError::UnknownIid(iid))?;
        let node = self.node(iid)?;
        Ok(AstLocation {
            file: self.files[addr.file].path.clone(),
            span: node.span,
        })
    }

    pub fn belongs_to_ast(&self, loc: &AstLocation, iid: Iid) -> Result<bool, AstError> {
        Ok(loc.contains(&self.iid_to_location(iid)?))
    }

    /// Largest iid in the forest (0 when empty).
    pub fn max_iid(&self) -> Iid {
        self.index.keys().copied().max().unwrap_or(0)
    }

    pub fn iter_nodes(&self) -> impl Iterator<Item = (&str, &AstNode)> {
        self.files.iter().flat_map(|f| {
            let mut nodes = Vec::new();
            f.root.walk(&mut |n| nodes.push(n));
            nodes.into_iter().map(move |n| (f.path.as_str(), n))
        })
    }

    /// True when iids follow one pre-order numbering from 1 across files in path order.
    pub fn is_preorder_numbered(&self) -> bool {
        let mut expected = 1;
        for file in &self.files {
            let mut ok = true;
            file.root.walk(&mut |n| {
                ok &= n.iid == expected;
                expected += 1;
            });
            if !ok {
                return false;
            }
        }
        true
    }
}

fn index_node(
    node: &AstNode,
    file: usize,
    file_path: &str,
    path: &mut Vec<usize>,
    index: &mut HashMap<Iid, NodeAddr>,
) -> Result<(), AstError> {
    if node.iid == 0 {
        return Err(AstError::Schema {
            node: format!("{file_path}:{:?}", path),
            message: "iid must be positive".into(),
        });
    }
    if !node.span.is_well_formed() {
        return Err(AstError::Integrity(format!(
            "node iid {} has ill-formed span {}",
            node.iid, node.span
        )));
    }
    if index
        .insert(
            node.iid,
            NodeAddr {
                file,
                path: path.clone(),
            },
        )
        .is_some()
    {
        return Err(AstError::DuplicateIid(node.iid));
    }
    for (i, child) in node.children.iter().enumerate() {
        if !node.span.contains(&child.span) {
            return Err(AstError::Integrity(format!(
                "span {} of node iid {} escapes parent iid {} span {}",
                child.span, child.iid, node.iid, node.span
            )));
        }
        path.push(i);
        index_node(child, file, file_path, path, index)?;
        path.pop();
    }
    Ok(())
}

pub fn load_ast(path: &Path) -> Result<AstForest, AstError> {
    let text = std::fs::read_to_string(path).map_err(|e| AstError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    AstForest::from_json_str(&text)
}

/// True when `path` equals `dir` or lies beneath it (component-wise on `/`).
pub fn path_under(path: &str, dir: &str) -> bool {
    let dir = dir.trim_end_matches('/');
    if dir.is_empty() || dir == "." {
        return true;
    }
    path == dir || path.starts_with(&format!("{dir}/"))
}
