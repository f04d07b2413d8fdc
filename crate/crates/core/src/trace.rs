//! Trace events, values, and the object registry.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ast::{AstNode, Iid};
use crate::error::TraceError;
use crate::syntax::literal_node;

pub const TRACE_VERSION: u64 = 1;

pub type RefId = u64;

/// A primitive runtime value. Floats compare by bit pattern.
#[derive(Debug, Clone)]
pub enum Primitive {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Null,
    Undefined,
}

impl PartialEq for Primitive {
    fn eq(&self, other: &Self) -> bool {
        use Primitive::*;
        match (self, other) {
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Bool(a), Bool(b)) => a == b,
            (Null, Null) | (Undefined, Undefined) => true,
            _ => false,
        }
    }
}

impl Eq for Primitive {}

impl Hash for Primitive {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Primitive::Int(i) => i.hash(state),
            Primitive::Float(f) => f.to_bits().hash(state),
            Primitive::Str(s) => s.hash(state),
            Primitive::Bool(b) => b.hash(state),
            Primitive::Null | Primitive::Undefined => {}
        }
    }
}

impl Primitive {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Primitive::Int(_) => "int",
            Primitive::Float(_) => "float",
            Primitive::Str(_) => "string",
            Primitive::Bool(_) => "boolean",
            Primitive::Null => "null",
            Primitive::Undefined => "undefined",
        }
    }

    /// Exact source text that evaluates back to this value.
    pub fn literal_text(&self) -> String {
        match self {
            Primitive::Int(i) => i.to_string(),
            Primitive::Float(f) => float_text(*f),
            Primitive::Str(s) => serde_json::to_string(s).expect("string serializes"),
            Primitive::Bool(b) => b.to_string(),
            Primitive::Null => "null".into(),
            Primitive::Undefined => "undefined".into(),
        }
    }

    fn json_value(&self) -> Value {
        match self {
            Primitive::Int(i) => Value::from(*i),
            Primitive::Float(f) => serde_json::Number::from_f64(*f)
                .map(Value::Number)
                .unwrap_or_else(|| Value::String(float_text(*f))),
            Primitive::Str(s) => Value::String(s.clone()),
            Primitive::Bool(b) => Value::Bool(*b),
            Primitive::Null | Primitive::Undefined => Value::Null,
        }
    }

    pub fn to_literal(&self) -> AstNode {
        literal_node(self.type_tag(), &self.literal_text(), self.json_value())
    }
}

fn float_text(f: f64) -> String {
    if f.is_nan() {
        "NaN".into()
    } else if f.is_infinite() {
        if f > 0.0 { "Infinity" } else { "-Infinity" }.into()
    } else {
        format!("{f:?}")
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal_text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawValue", into = "RawValue")]
pub enum TraceValue {
    Prim(Primitive),
    Ref(RefId),
}

impl TraceValue {
    pub fn int(i: i64) -> Self {
        TraceValue::Prim(Primitive::Int(i))
    }

    pub fn undefined() -> Self {
        TraceValue::Prim(Primitive::Undefined)
    }

    pub fn ref_id(&self) -> Option<RefId> {
        match self {
            TraceValue::Ref(id) => Some(*id),
            TraceValue::Prim(_) => None,
        }
    }

    pub fn primitive(&self) -> Option<&Primitive> {
        match self {
            TraceValue::Prim(p) => Some(p),
            TraceValue::Ref(_) => None,
        }
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, TraceValue::Prim(Primitive::Undefined))
    }
}

impl fmt::Display for TraceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceValue::Prim(p) => p.fmt(f),
            TraceValue::Ref(id) => write!(f, "#{id}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValue {
    k: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
}

impl TryFrom<RawValue> for TraceValue {
    type Error = String;

    fn try_from(raw: RawValue) -> Result<Self, String> {
        match raw.k.as_str() {
            "r" => match raw.id {
                Some(id) if id > 0 => Ok(TraceValue::Ref(id)),
                Some(_) => Err("reference id must be positive".into()),
                None => Err("reference value without id".into()),
            },
            "p" => {
                let t = raw.t.ok_or("primitive value without type tag")?;
                let v = raw.v.unwrap_or(Value::Null);
                let prim = match (t.as_str(), &v) {
                    ("int", Value::Number(n)) => Primitive::Int(n.as_i64().ok_or_else(|| format!("bad int {n}"))?),
                    ("float", Value::Number(n)) => {
                        Primitive::Float(n.as_f64().ok_or_else(|| format!("bad float {n}"))?)
                    }
                    ("float", Value::String(s)) => Primitive::Float(match s.as_str() {
                        "Infinity" => f64::INFINITY,
                        "-Infinity" => f64::NEG_INFINITY,
                        "NaN" => f64::NAN,
                        other => return Err(format!("bad float {other:?}")),
                    }),
                    ("string", Value::String(s)) => Primitive::Str(s.clone()),
                    ("boolean", Value::Bool(b)) => Primitive::Bool(*b),
                    ("null", _) => Primitive::Null,
                    ("undefined", _) => Primitive::Undefined,
                    (t, v) => return Err(format!("value {v} does not match type tag {t:?}")),
                };
                Ok(TraceValue::Prim(prim))
            }
            other => Err(format!("unknown value kind {other:?}")),
        }
    }
}

impl From<TraceValue> for RawValue {
    fn from(v: TraceValue) -> RawValue {
        match v {
            TraceValue::Ref(id) => RawValue {
                k: "r".into(),
                t: None,
                v: None,
                id: Some(id),
            },
            TraceValue::Prim(p) => {
                let v = match &p {
                    Primitive::Null | Primitive::Undefined => None,
                    other => Some(other.json_value()),
                };
                RawValue {
                    k: "p".into(),
                    t: Some(p.type_tag().into()),
                    v,
                    id: None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum TraceEvent {
    TraceHeader {
        version: u64,
        ast_dump: String,
    },
    InvokeFunPre {
        iid: Iid,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        func_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<TraceValue>,
        #[serde(default)]
        args: Vec<TraceValue>,
    },
    InvokeFun {
        iid: Iid,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        func_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<TraceValue>,
        #[serde(default)]
        args: Vec<TraceValue>,
        result: TraceValue,
    },
    FunctionEnter {
        iid: Iid,
        func_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        receiver: Option<TraceValue>,
        #[serde(default)]
        args: Vec<TraceValue>,
    },
    FunctionExit {
        iid: Iid,
        result: TraceValue,
    },
    StmtStart {
        iid: Iid,
    },
    StmtEnd {
        iid: Iid,
    },
    Read {
        iid: Iid,
        name: String,
        value: TraceValue,
    },
    Write {
        iid: Iid,
        name: String,
        value: TraceValue,
    },
    GetField {
        iid: Iid,
        base: TraceValue,
        offset: String,
        value: TraceValue,
    },
    PutField {
        iid: Iid,
        base: TraceValue,
        offset: String,
        value: TraceValue,
    },
    Literal {
        iid: Iid,
        value: TraceValue,
    },
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::TraceHeader { .. } => "traceHeader",
            TraceEvent::InvokeFunPre { .. } => "invokeFunPre",
            TraceEvent::InvokeFun { .. } => "invokeFun",
            TraceEvent::FunctionEnter { .. } => "functionEnter",
            TraceEvent::FunctionExit { .. } => "functionExit",
            TraceEvent::StmtStart { .. } => "stmtStart",
            TraceEvent::StmtEnd { .. } => "stmtEnd",
            TraceEvent::Read { .. } => "read",
            TraceEvent::Write { .. } => "write",
            TraceEvent::GetField { .. } => "getField",
            TraceEvent::PutField { .. } => "putField",
            TraceEvent::Literal { .. } => "literal",
        }
    }

    pub fn iid(&self) -> Option<Iid> {
        match self {
            TraceEvent::TraceHeader { .. } => None,
            TraceEvent::InvokeFunPre { iid, .. }
            | TraceEvent::InvokeFun { iid, .. }
            | TraceEvent::FunctionEnter { iid, .. }
            | TraceEvent::FunctionExit { iid, .. }
            | TraceEvent::StmtStart { iid }
            | TraceEvent::StmtEnd { iid }
            | TraceEvent::Read { iid, .. }
            | TraceEvent::Write { iid, .. }
            | TraceEvent::GetField { iid, .. }
            | TraceEvent::PutField { iid, .. }
            | TraceEvent::Literal { iid, .. } => Some(*iid),
        }
    }

    /// Every value carried by the event, in payload order.
    pub fn values(&self) -> Vec<&TraceValue> {
        let mut out = Vec::new();
        match self {
            TraceEvent::InvokeFunPre { base, args, .. } => {
                out.extend(base.iter());
                out.extend(args.iter());
            }
            TraceEvent::InvokeFun { base, args, result, .. } => {
                out.extend(base.iter());
                out.extend(args.iter());
                out.push(result);
            }
            TraceEvent::FunctionEnter { receiver, args, .. } => {
                out.extend(receiver.iter());
                out.extend(args.iter());
            }
            TraceEvent::FunctionExit { result, .. } => out.push(result),
            TraceEvent::Read { value, .. } | TraceEvent::Write { value, .. } | TraceEvent::Literal { value, .. } => {
                out.push(value)
            }
            TraceEvent::GetField { base, value, .. } | TraceEvent::PutField { base, value, .. } => {
                out.push(base);
                out.push(value);
            }
            TraceEvent::TraceHeader { .. } | TraceEvent::StmtStart { .. } | TraceEvent::StmtEnd { .. } => {}
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Invoke { iid: Iid, entered: bool },
    Function(Iid),
    Statement(Iid),
}

/// Incremental nesting validator shared by the reader and by tests.
#[derive(Debug, Default)]
pub struct NestingChecker {
    frames: Vec<Frame>,
    seen_events: usize,
}

impl NestingChecker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops invocations abandoned by an unwinding exception.
    fn drop_abandoned(&mut self) {
        while matches!(self.frames.last(), Some(Frame::Invoke { .. })) {
            self.frames.pop();
        }
    }

    pub fn accept(&mut self, event: &TraceEvent) -> Result<(), String> {
        let first = self.seen_events == 0;
        self.seen_events += 1;
        match event {
            TraceEvent::TraceHeader { version, .. } => {
                if !first {
                    return Err("trace header must be the first line".into());
                }
                if *version != TRACE_VERSION {
                    return Err(format!("unsupported trace version {version}"));
                }
            }
            TraceEvent::InvokeFunPre { iid, .. } => self.frames.push(Frame::Invoke {
                iid: *iid,
                entered: false,
            }),
            TraceEvent::InvokeFun { iid, .. } => match self.frames.last() {
                Some(Frame::Invoke { iid: top, .. }) if top == iid => {
                    self.frames.pop();
                }
                other => return Err(format!("invokeFun {iid} does not match open invocation {other:?}")),
            },
            TraceEvent::FunctionEnter { iid, .. } => match self.frames.last_mut() {
                Some(Frame::Invoke { entered, .. }) if !*entered => {
                    *entered = true;
                    self.frames.push(Frame::Function(*iid));
                }
                _ => return Err(format!("functionEnter {iid} without a preceding invokeFunPre")),
            },
            TraceEvent::FunctionExit { iid, .. } => {
                self.drop_abandoned();
                match self.frames.last() {
                    Some(Frame::Function(top)) if top == iid => {
                        self.frames.pop();
                    }
                    Some(Frame::Function(top)) => {
                        return Err(format!("functionExit {iid} does not match functionEnter {top}"))
                    }
                    _ => return Err(format!("functionExit {iid} without functionEnter")),
                }
            }
            TraceEvent::StmtStart { iid } => self.frames.push(Frame::Statement(*iid)),
            TraceEvent::StmtEnd { iid } => {
                self.drop_abandoned();
                match self.frames.last() {
                    Some(Frame::Statement(top)) if top == iid => {
                        self.frames.pop();
                    }
                    Some(Frame::Statement(top)) => return Err(format!("stmtEnd {iid} does not match stmtStart {top}")),
                    _ => return Err(format!("stmtEnd {iid} without stmtStart")),
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), String> {
        self.drop_abandoned();
        match self.frames.last() {
            None => Ok(()),
            Some(open) => Err(format!("trace ended with open frame {open:?}")),
        }
    }
}

/// Streaming reader over JSONL trace lines.
pub struct TraceReader<R> {
    input: R,
    line: usize,
    checker: NestingChecker,
    done: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Self {
        TraceReader {
            input,
            line: 0,
            checker: NestingChecker::new(),
            done: false,
        }
    }

    fn next_event(&mut self) -> Result<Option<TraceEvent>, TraceError> {
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.input.read_line(&mut buf)? == 0 {
                self.checker.finish().map_err(|message| TraceError::Structure {
                    line: self.line,
                    message,
                })?;
                return Ok(None);
            }
            self.line += 1;
            if !buf.trim().is_empty() {
                break;
            }
        }
        let event: TraceEvent = serde_json::from_str(buf.trim()).map_err(|e| TraceError::Parse {
            line: self.line,
            message: e.to_string(),
        })?;
        self.checker.accept(&event).map_err(|message| TraceError::Structure {
            line: self.line,
            message,
        })?;
        Ok(Some(event))
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_event() {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Parses a whole trace, validating nesting. The header, if any, is kept.
pub fn parse_trace(input: impl BufRead) -> Result<Vec<TraceEvent>, TraceError> {
    TraceReader::new(input).collect()
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(text.as_bytes())
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(file))
}

pub fn write_trace(events: &[TraceEvent], mut out: impl Write) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Identity surrogate for a runtime object with its captured property state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjRef {
    pub id: RefId,
    pub props: IndexMap<String, TraceValue>,
    /// Registry clock value at first sight.
    #[serde(skip)]
    pub born: u64,
}

/// Id-keyed registry of every object observed in a trace.
#[derive(Debug, Clone, Default)]
pub struct ObjRegistry {
    refs: BTreeMap<RefId, ObjRef>,
    clock: u64,
}

impl ObjRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the logical clock used to stamp first sightings.
    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Returns the existing or a fresh ObjRef for a reference value, `None` for primitives.
    pub fn get_obj_ref(&mut self, value: &TraceValue) -> Option<&mut ObjRef> {
        let id = value.ref_id()?;
        let born = self.clock;
        Some(self.refs.entry(id).or_insert_with(|| ObjRef {
            id,
            props: IndexMap::new(),
            born,
        }))
    }

    pub fn get(&self, id: RefId) -> Option<&ObjRef> {
        self.refs.get(&id)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjRef> {
        self.refs.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(line: &str) -> TraceEvent {
        serde_json::from_str(line).unwrap()
    }

    #[test]
    fn value_encoding() {
        let v: TraceValue = serde_json::from_str(r#"{"k":"p","t":"int","v":3}"#).unwrap();
        assert_eq!(v, TraceValue::int(3));
        let r: TraceValue = serde_json::from_str(r#"{"k":"r","id":7}"#).unwrap();
        assert_eq!(r, TraceValue::Ref(7));
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"k":"r","id":7}"#);
        let inf: TraceValue = serde_json::from_str(r#"{"k":"p","t":"float","v":"-Infinity"}"#).unwrap();
        assert_eq!(inf, TraceValue::Prim(Primitive::Float(f64::NEG_INFINITY)));
        assert_eq!(
            serde_json::to_string(&inf).unwrap(),
            r#"{"k":"p","t":"float","v":"-Infinity"}"#
        );
        let u = TraceValue::undefined();
        assert_eq!(serde_json::to_string(&u).unwrap(), r#"{"k":"p","t":"undefined"}"#);
        assert!(serde_json::from_str::<TraceValue>(r#"{"k":"r","id":0}"#).is_err());
        assert!(serde_json::from_str::<TraceValue>(r#"{"k":"p","t":"int","v":"x"}"#).is_err());
    }

    #[test]
    fn nan_compares_by_bits() {
        let a = Primitive::Float(f64::NAN);
        assert_eq!(a, a.clone());
        assert_ne!(Primitive::Float(0.0), Primitive::Float(-0.0));
        assert_eq!(Primitive::Float(-0.0).literal_text(), "-0.0");
        assert_eq!(Primitive::Float(0.5).literal_text(), "0.5");
        assert_eq!(Primitive::Str("a\"b".into()).literal_text(), "\"a\\\"b\"");
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_trace_str("").unwrap().is_empty());
    }

    #[test]
    fn exit_before_enter_is_structure_error() {
        let err = parse_trace_str("{\"ev\":\"functionExit\",\"iid\":3,\"result\":{\"k\":\"p\",\"t\":\"undefined\"}}\n")
            .unwrap_err();
        assert!(matches!(err, TraceError::Structure { line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"ev\":\"stmtStart\",\"iid\":1}\nnot json\n";
        assert!(matches!(
            parse_trace_str(text).unwrap_err(),
            TraceError::Parse { line: 2, .. }
        ));
        let text = "{\"ev\":\"stmtStart\",\"iid\":1}\n{\"ev\":\"teleport\",\"iid\":1}\n";
        assert!(matches!(
            parse_trace_str(text).unwrap_err(),
            TraceError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn nesting_is_validated() {
        let ok = [
            r#"{"ev":"traceHeader","version":1,"astDump":"ast.json"}"#,
            r#"{"ev":"stmtStart","iid":2}"#,
            r#"{"ev":"invokeFunPre","iid":4,"args":[]}"#,
            r#"{"ev":"functionEnter","iid":9,"funcId":"f","args":[]}"#,
            r#"{"ev":"functionExit","iid":9,"result":{"k":"p","t":"int","v":1}}"#,
            r#"{"ev":"invokeFun","iid":4,"args":[],"result":{"k":"p","t":"int","v":1}}"#,
            r#"{"ev":"stmtEnd","iid":2}"#,
        ]
        .join("\n");
        assert_eq!(parse_trace_str(&ok).unwrap().len(), 7);
        let unclosed = r#"{"ev":"stmtStart","iid":2}"#;
        assert!(matches!(
            parse_trace_str(unclosed).unwrap_err(),
            TraceError::Structure { .. }
        ));
        let crossed = [r#"{"ev":"stmtStart","iid":2}"#, r#"{"ev":"stmtEnd","iid":3}"#].join("\n");
        assert!(parse_trace_str(&crossed).is_err());
        let late_header = [
            r#"{"ev":"stmtStart","iid":2}"#,
            r#"{"ev":"traceHeader","version":1,"astDump":"a"}"#,
        ]
        .join("\n");
        assert!(parse_trace_str(&late_header).is_err());
    }

    #[test]
    fn unwinding_discards_abandoned_invocations() {
        let text = [
            r#"{"ev":"stmtStart","iid":2}"#,
            r#"{"ev":"invokeFunPre","iid":4,"args":[]}"#,
            r#"{"ev":"stmtEnd","iid":2}"#,
        ]
        .join("\n");
        assert!(parse_trace_str(&text).is_ok());
    }

    #[test]
    fn event_roundtrip() {
        let line =
            r#"{"ev":"putField","iid":5,"base":{"k":"r","id":2},"offset":"x","value":{"k":"p","t":"int","v":-2}}"#;
        let e = ev(line);
        assert_eq!(serde_json::to_string(&e).unwrap(), line);
        assert_eq!(e.kind(), "putField");
        assert_eq!(e.values().len(), 2);
    }

    #[test]
    fn registry_is_identity_stable() {
        let mut reg = ObjRegistry::new();
        assert!(reg.get_obj_ref(&TraceValue::int(42)).is_none());
        reg.tick();
        let first = reg.get_obj_ref(&TraceValue::Ref(7)).unwrap();
        assert_eq!((first.id, first.born, first.props.len()), (7, 1, 0));
        first.props.insert("x".into(), TraceValue::int(1));
        reg.tick();
        let again = reg.get_obj_ref(&TraceValue::Ref(7)).unwrap();
        assert_eq!(again.born, 1);
        assert_eq!(again.props["x"], TraceValue::int(1));
        assert_eq!(reg.len(), 1);
    }
}
