//! Canonical surface syntax for interchange ASTs.
//!
//! A small brace-and-semicolon language covering exactly the interchange
//! node kinds. Generated plans are pretty-printed in it for golden tests, and
//! the parser makes `render(parse(render(node))) == render(node)` checkable.
//! Parsed nodes carry spans but no iids (iid 0); callers number them.

use serde_json::Value;
use thiserror::Error;

use crate::ast::{AstFile, AstForest, AstKind, AstNode, Span};
use crate::error::AstError;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

const KEYWORDS: &[&str] = &[
    "function",
    "test",
    "let",
    "const",
    "return",
    "if",
    "else",
    "for",
    "while",
    "new",
    "this",
    "true",
    "false",
    "null",
    "undefined",
    "Infinity",
    "NaN",
];

const PUNCTS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", ",", ";", ":", ".", "=", "<", ">", "+", "-", "*",
    "/", "%", "!",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: (u32, u32),
    end: (u32, u32),
}

fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 0u32);
    let err = |line, col, message: String| SyntaxError { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 0;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = (line, col);
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                s.push(chars[i]);
                i += 1;
                col += 1;
            }
            tokens.push(Token {
                tok: Tok::Ident(s),
                start,
                end: (line, col),
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                s.push('.');
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    s.extend(&chars[i..j]);
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        i += 1;
                    }
                }
            }
            col += s.chars().count() as u32;
            tokens.push(Token {
                tok: Tok::Number(s),
                start,
                end: (line, col),
            });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                let Some(&ch) = chars.get(i) else {
                    return Err(err(start.0, start.1, "unterminated string".into()));
                };
                i += 1;
                col += 1;
                match ch {
                    '"' => break,
                    '\n' => return Err(err(start.0, start.1, "newline in string".into())),
                    '\\' => {
                        let Some(&esc) = chars.get(i) else {
                            return Err(err(line, col, "dangling escape".into()));
                        };
                        i += 1;
                        col += 1;
                        match esc {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            'r' => s.push('\r'),
                            'b' => s.push('\u{8}'),
                            'f' => s.push('\u{c}'),
                            '"' => s.push('"'),
                            '\\' => s.push('\\'),
                            '/' => s.push('/'),
                            'u' => {
                                let hex: String = chars.get(i..i + 4).unwrap_or(&[]).iter().collect();
                                let code = u32::from_str_radix(&hex, 16)
                                    .map_err(|_| err(line, col, "bad \\u escape".into()))?;
                                i += 4;
                                col += 4;
                                s.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                            }
                            other => return Err(err(line, col, format!("unknown escape \\{other}"))),
                        }
                    }
                    other => s.push(other),
                }
            }
            tokens.push(Token {
                tok: Tok::Str(s),
                start,
                end: (line, col),
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
            return Err(err(line, col, format!("unexpected character '{c}'")));
        };
        i += p.len();
        col += p.len() as u32;
        tokens.push(Token {
            tok: Tok::Punct(p),
            start,
            end: (line, col),
        });
    }
    tokens.push(Token {
        tok: Tok::Eof,
        start: (line, col),
        end: (line, col),
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

fn span_between(start: (u32, u32), end: (u32, u32)) -> Span {
    Span::new(start.0, start.1, end.0, end.1)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].tok
    }

    fn start(&self) -> (u32, u32) {
        self.tokens[self.pos].start
    }

    fn prev_end(&self) -> (u32, u32) {
        if self.pos == 0 {
            self.tokens[0].start
        } else {
            self.tokens[self.pos - 1].end
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        let (line, col) = self.start();
        Err(SyntaxError {
            line,
            col,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), SyntaxError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.error(format!("expected '{p}', found {:?}", self.peek()))
        }
    }

    fn expect_keyword(&mut self, k: &str) -> Result<(), SyntaxError> {
        if self.is_keyword(k) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected '{k}', found {:?}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected identifier, found {other:?}")),
        }
    }

    fn finish(&self, mut node: AstNode, start: (u32, u32)) -> AstNode {
        node.span = span_between(start, self.prev_end());
        node
    }

    fn module(&mut self) -> Result<AstNode, SyntaxError> {
        let start = (1, 0);
        let mut items = Vec::new();
        while *self.peek() != Tok::Eof {
            let mut item = self.statement()?;
            if item.kind == AstKind::ExprStmt && is_require_call(&item.children[0]) {
                item.attrs.insert("isImport".into(), Value::Bool(true));
            }
            items.push(item);
        }
        let mut node = AstNode::new(AstKind::Module).with_children(items);
        node.span = span_between(start, self.tokens[self.pos].end);
        Ok(node)
    }

    fn block(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.error("unterminated block");
            }
            stmts.push(self.statement()?);
        }
        self.bump();
        Ok(self.finish(AstNode::new(AstKind::Block).with_children(stmts), start))
    }

    fn statement(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        if self.is_keyword("function") {
            return self.function_decl();
        }
        if self.is_keyword("test") && matches!(self.peek_at(1), Tok::Str(_)) {
            self.bump();
            let Tok::Str(title) = self.bump() else { unreachable!() };
            let body = self.block()?;
            let node = AstNode::new(AstKind::FunctionDecl)
                .with_attr("name", title.clone())
                .with_attr("qualifiedName", title)
                .with_attr("isTest", true)
                .with_children(vec![body]);
            return Ok(self.finish(node, start));
        }
        if self.is_keyword("return") {
            self.bump();
            let mut node = AstNode::new(AstKind::ReturnStmt);
            if !self.is_punct(";") {
                node.children.push(self.expression()?);
            }
            self.expect_punct(";")?;
            return Ok(self.finish(node, start));
        }
        if self.is_keyword("if") {
            return self.if_stmt();
        }
        if self.is_keyword("while") {
            self.bump();
            self.expect_punct("(")?;
            let cond = self.expression()?;
            self.expect_punct(")")?;
            let body = self.block()?;
            let node = AstNode::new(AstKind::WhileStmt).with_children(vec![cond, body]);
            return Ok(self.finish(node, start));
        }
        if self.is_keyword("for") {
            self.bump();
            self.expect_punct("(")?;
            let init = self.simple_statement()?;
            self.expect_punct(";")?;
            let cond = self.expression()?;
            self.expect_punct(";")?;
            let update = self.simple_statement()?;
            self.expect_punct(")")?;
            let body = self.block()?;
            let node = AstNode::new(AstKind::ForStmt).with_children(vec![init, cond, update, body]);
            return Ok(self.finish(node, start));
        }
        let node = self.simple_statement()?;
        self.expect_punct(";")?;
        Ok(self.finish(node, start))
    }

    /// Declaration, assignment or expression statement without the trailing `;`.
    fn simple_statement(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        if self.is_keyword("let") || self.is_keyword("const") {
            let Tok::Ident(decl) = self.bump() else { unreachable!() };
            let name_start = self.start();
            let name = self.ident()?;
            let target = self.finish(AstNode::new(AstKind::NameExpr).with_attr("name", name), name_start);
            self.expect_punct("=")?;
            let value = self.expression()?;
            let node = AstNode::new(AstKind::AssignStmt)
                .with_attr("decl", decl)
                .with_children(vec![target, value]);
            return Ok(self.finish(node, start));
        }
        let expr = self.expression()?;
        if self.eat_punct("=") {
            if !matches!(
                expr.kind,
                AstKind::NameExpr | AstKind::AttributeExpr | AstKind::SubscriptExpr
            ) {
                return self.error("invalid assignment target");
            }
            let value = self.expression()?;
            let node = AstNode::new(AstKind::AssignStmt).with_children(vec![expr, value]);
            return Ok(self.finish(node, start));
        }
        Ok(self.finish(AstNode::new(AstKind::ExprStmt).with_children(vec![expr]), start))
    }

    fn if_stmt(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        self.expect_keyword("if")?;
        self.expect_punct("(")?;
        let cond = self.expression()?;
        self.expect_punct(")")?;
        let then = self.block()?;
        let mut children = vec![cond, then];
        if self.is_keyword("else") {
            self.bump();
            if self.is_keyword("if") {
                children.push(self.if_stmt()?);
            } else {
                children.push(self.block()?);
            }
        }
        Ok(self.finish(AstNode::new(AstKind::IfStmt).with_children(children), start))
    }

    fn function_decl(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        self.expect_keyword("function")?;
        let mut parts = vec![self.ident()?];
        while self.eat_punct(".") {
            parts.push(self.ident()?);
        }
        self.expect_punct("(")?;
        let mut children = Vec::new();
        if !self.is_punct(")") {
            loop {
                let ps = self.start();
                let name = self.ident()?;
                children.push(self.finish(AstNode::new(AstKind::Param).with_attr("name", name), ps));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        children.push(self.block()?);
        let name = parts.last().cloned().unwrap_or_default();
        let mut node = AstNode::new(AstKind::FunctionDecl)
            .with_attr("name", name)
            .with_attr("qualifiedName", parts.join("."))
            .with_children(children);
        if parts.len() > 1 {
            node = node.with_attr("owner", parts[..parts.len() - 1].join("."));
        }
        Ok(self.finish(node, start))
    }

    fn expression(&mut self) -> Result<AstNode, SyntaxError> {
        self.binary(0)
    }

    fn binary(&mut self, min_level: usize) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        let mut left = self.unary()?;
        while let Tok::Punct(op) = self.peek().clone() {
            let Some(level) = binary_level(op) else { break };
            if level < min_level {
                break;
            }
            self.bump();
            let right = self.binary(level + 1)?;
            left = self.finish(
                AstNode::new(AstKind::BinaryExpr)
                    .with_attr("op", op)
                    .with_children(vec![left, right]),
                start,
            );
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        if self.is_punct("-") || self.is_punct("!") {
            let Tok::Punct(op) = self.bump() else { unreachable!() };
            let operand = self.unary()?;
            return Ok(self.finish(
                AstNode::new(AstKind::UnaryExpr)
                    .with_attr("op", op)
                    .with_children(vec![operand]),
                start,
            ));
        }
        self.postfix()
    }

    fn arguments(&mut self) -> Result<Vec<AstNode>, SyntaxError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expression()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn postfix(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        let mut expr = self.primary()?;
        loop {
            if self.eat_punct(".") {
                let name = self.ident()?;
                expr = self.finish(
                    AstNode::new(AstKind::AttributeExpr)
                        .with_attr("name", name)
                        .with_children(vec![expr]),
                    start,
                );
            } else if self.is_punct("[") {
                self.bump();
                let index = self.expression()?;
                self.expect_punct("]")?;
                expr = self.finish(
                    AstNode::new(AstKind::SubscriptExpr).with_children(vec![expr, index]),
                    start,
                );
            } else if self.is_punct("(") {
                let mut children = vec![expr];
                children.extend(self.arguments()?);
                expr = self.finish(AstNode::new(AstKind::CallExpr).with_children(children), start);
            } else {
                break;
            }
        }
        Ok(expr)
    }

    fn primary(&mut self) -> Result<AstNode, SyntaxError> {
        let start = self.start();
        match self.peek().clone() {
            Tok::Number(text) => {
                self.bump();
                Ok(self.finish(number_literal(&text), start))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(self.finish(string_literal(&s), start))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expression()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Punct("[") => {
                self.bump();
                let mut items = Vec::new();
                if !self.is_punct("]") {
                    loop {
                        items.push(self.expression()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct("]")?;
                Ok(self.finish(AstNode::new(AstKind::ListExpr).with_children(items), start))
            }
            Tok::Punct("{") => {
                self.bump();
                let mut keys = Vec::new();
                let mut values = Vec::new();
                if !self.is_punct("}") {
                    loop {
                        let key = match self.bump() {
                            Tok::Ident(s) => s,
                            Tok::Str(s) => s,
                            other => return self.error(format!("bad map key {other:?}")),
                        };
                        self.expect_punct(":")?;
                        keys.push(Value::String(key));
                        values.push(self.expression()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct("}")?;
                Ok(self.finish(
                    AstNode::new(AstKind::MapExpr)
                        .with_attr("keys", Value::Array(keys))
                        .with_children(values),
                    start,
                ))
            }
            Tok::Ident(word) => match word.as_str() {
                "this" => {
                    self.bump();
                    Ok(self.finish(AstNode::new(AstKind::SelfExpr), start))
                }
                "true" | "false" => {
                    self.bump();
                    Ok(self.finish(literal_node("boolean", &word, Value::Bool(word == "true")), start))
                }
                "null" => {
                    self.bump();
                    Ok(self.finish(literal_node("null", "null", Value::Null), start))
                }
                "undefined" => {
                    self.bump();
                    Ok(self.finish(literal_node("undefined", "undefined", Value::Null), start))
                }
                "Infinity" | "NaN" => {
                    self.bump();
                    Ok(self.finish(literal_node("float", &word, Value::String(word.clone())), start))
                }
                "new" => {
                    self.bump();
                    let cs = self.start();
                    let mut callee = if self.is_punct("(") {
                        self.bump();
                        let e = self.expression()?;
                        self.expect_punct(")")?;
                        e
                    } else {
                        let name = self.ident()?;
                        self.finish(AstNode::new(AstKind::NameExpr).with_attr("name", name), cs)
                    };
                    while self.eat_punct(".") {
                        let name = self.ident()?;
                        callee = self.finish(
                            AstNode::new(AstKind::AttributeExpr)
                                .with_attr("name", name)
                                .with_children(vec![callee]),
                            cs,
                        );
                    }
                    let mut children = vec![callee];
                    children.extend(self.arguments()?);
                    Ok(self.finish(AstNode::new(AstKind::NewExpr).with_children(children), start))
                }
                _ => {
                    let name = self.ident()?;
                    Ok(self.finish(AstNode::new(AstKind::NameExpr).with_attr("name", name), start))
                }
            },
            other => self.error(format!("unexpected token {other:?}")),
        }
    }
}

fn is_require_call(expr: &AstNode) -> bool {
    expr.kind == AstKind::CallExpr
        && expr
            .children
            .first()
            .is_some_and(|c| c.kind == AstKind::NameExpr && c.name() == Some("require"))
}

fn binary_level(op: &str) -> Option<usize> {
    Some(match op {
        "||" => 0,
        "&&" => 1,
        "==" | "!=" => 2,
        "<" | "<=" | ">" | ">=" => 3,
        "+" | "-" => 4,
        "*" | "/" | "%" => 5,
        _ => return None,
    })
}

/// Literal node with its exact textual form and typed value.
pub fn literal_node(ty: &str, text: &str, value: Value) -> AstNode {
    AstNode::new(AstKind::Literal)
        .with_attr("type", ty)
        .with_attr("text", text)
        .with_attr("value", value)
}

fn number_literal(text: &str) -> AstNode {
    let is_float = text.contains(['.', 'e', 'E']);
    if !is_float {
        if let Ok(i) = text.parse::<i64>() {
            return literal_node("int", text, Value::from(i));
        }
    }
    let f: f64 = text.parse().unwrap_or(f64::NAN);
    let value = serde_json::Number::from_f64(f)
        .map(Value::Number)
        .unwrap_or_else(|| Value::String(text.to_string()));
    literal_node("float", text, value)
}

fn string_literal(s: &str) -> AstNode {
    let text = serde_json::to_string(s).expect("string serializes");
    literal_node("string", &text, Value::String(s.to_string()))
}

pub fn parse_module(src: &str) -> Result<AstNode, SyntaxError> {
    let mut p = Parser {
        tokens: lex(src)?,
        pos: 0,
    };
    p.module()
}

pub fn parse_statement(src: &str) -> Result<AstNode, SyntaxError> {
    let mut p = Parser {
        tokens: lex(src)?,
        pos: 0,
    };
    let stmt = p.statement()?;
    if *p.peek() != Tok::Eof {
        return p.error("trailing input after statement");
    }
    Ok(stmt)
}

pub fn parse_expression(src: &str) -> Result<AstNode, SyntaxError> {
    let mut p = Parser {
        tokens: lex(src)?,
        pos: 0,
    };
    let e = p.expression()?;
    if *p.peek() != Tok::Eof {
        return p.error("trailing input after expression");
    }
    Ok(e)
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("{file}:{error}")]
    Syntax { file: String, error: SyntaxError },
    #[error(transparent)]
    Ast(#[from] AstError),
}

/// Parses source files into a forest numbered in pre-order from 1, files in path order.
pub fn build_forest(mut sources: Vec<(String, String)>) -> Result<AstForest, SourceError> {
    sources.sort_by(|a, b| a.0.cmp(&b.0));
    let mut next = 1;
    let mut files = Vec::with_capacity(sources.len());
    for (path, text) in sources {
        let mut root = parse_module(&text).map_err(|error| SourceError::Syntax {
            file: path.clone(),
            error,
        })?;
        next = root.assign_preorder_iids(next);
        files.push(AstFile { path, root });
    }
    Ok(AstForest::new(files)?)
}

const INDENT: &str = "  ";

/// True for names that can be written without quoting.
pub fn is_plain_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
        && !KEYWORDS.contains(&s)
}

fn expr_level(node: &AstNode) -> usize {
    match node.kind {
        AstKind::BinaryExpr => node.attr_str("op").and_then(binary_level).unwrap_or(0),
        AstKind::UnaryExpr => 6,
        AstKind::Literal if literal_text(node).starts_with('-') => 6,
        _ => 7,
    }
}

fn literal_text(node: &AstNode) -> String {
    if let Some(text) = node.attr_str("text") {
        return text.to_string();
    }
    match node.attrs.get("value") {
        Some(Value::String(s)) => serde_json::to_string(s).expect("string serializes"),
        Some(Value::Null) | None => "null".into(),
        Some(v) => v.to_string(),
    }
}

/// Renders an expression in canonical form.
pub fn render_expr(node: &AstNode) -> String {
    let child = |i: usize| node.children.get(i).map(render_expr).unwrap_or_default();
    let postfix_base = |base: &AstNode| {
        let text = render_expr(base);
        if expr_level(base) < 7 || base.kind == AstKind::NewExpr {
            format!("({text})")
        } else {
            text
        }
    };
    let args = |from: usize| {
        node.children[from.min(node.children.len())..]
            .iter()
            .map(render_expr)
            .collect::<Vec<_>>()
            .join(", ")
    };
    match node.kind {
        AstKind::NameExpr => node.name().unwrap_or("").to_string(),
        AstKind::SelfExpr => "this".into(),
        AstKind::Literal => literal_text(node),
        AstKind::AttributeExpr => format!("{}.{}", postfix_base(&node.children[0]), node.name().unwrap_or("")),
        AstKind::SubscriptExpr => format!("{}[{}]", postfix_base(&node.children[0]), child(1)),
        AstKind::CallExpr => format!("{}({})", postfix_base(&node.children[0]), args(1)),
        AstKind::NewExpr => {
            let callee = &node.children[0];
            let simple = {
                let mut c = callee;
                while c.kind == AstKind::AttributeExpr {
                    c = &c.children[0];
                }
                c.kind == AstKind::NameExpr
            };
            let callee_text = if simple {
                render_expr(callee)
            } else {
                format!("({})", render_expr(callee))
            };
            format!("new {}({})", callee_text, args(1))
        }
        AstKind::UnaryExpr => {
            let op = node.attr_str("op").unwrap_or("-");
            let operand = &node.children[0];
            let text = render_expr(operand);
            if expr_level(operand) < 6 {
                format!("{op}({text})")
            } else if text.starts_with('-') || text.starts_with('!') {
                format!("{op} {text}")
            } else {
                format!("{op}{text}")
            }
        }
        AstKind::BinaryExpr => {
            let level = expr_level(node);
            let op = node.attr_str("op").unwrap_or("+");
            let l = &node.children[0];
            let r = &node.children[1];
            let lt = if expr_level(l) < level {
                format!("({})", render_expr(l))
            } else {
                render_expr(l)
            };
            let rt = if expr_level(r) <= level {
                format!("({})", render_expr(r))
            } else {
                render_expr(r)
            };
            format!("{lt} {op} {rt}")
        }
        AstKind::ListExpr => format!("[{}]", args(0)),
        AstKind::MapExpr => {
            let keys = node
                .attrs
                .get("keys")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            let entries: Vec<String> = keys
                .iter()
                .zip(&node.children)
                .map(|(k, v)| {
                    let k = k.as_str().unwrap_or("");
                    let key = if is_plain_ident(k) {
                        k.to_string()
                    } else {
                        serde_json::to_string(k).expect("string serializes")
                    };
                    format!("{key}: {}", render_expr(v))
                })
                .collect();
            format!("{{{}}}", entries.join(", "))
        }
        other => format!("/* {other} */"),
    }
}

fn render_simple(node: &AstNode) -> String {
    match node.kind {
        AstKind::AssignStmt => {
            let decl = node.attr_str("decl").map(|d| format!("{d} ")).unwrap_or_default();
            format!(
                "{decl}{} = {}",
                render_expr(&node.children[0]),
                render_expr(&node.children[1])
            )
        }
        AstKind::ExprStmt => render_expr(&node.children[0]),
        _ => render_expr(node),
    }
}

fn render_block(node: &AstNode, depth: usize, out: &mut String) {
    out.push_str("{\n");
    for stmt in &node.children {
        render_stmt_into(stmt, depth + 1, out);
    }
    out.push_str(&INDENT.repeat(depth));
    out.push('}');
}

fn render_if_tail(node: &AstNode, depth: usize, out: &mut String) {
    out.push_str("if (");
    out.push_str(&render_expr(&node.children[0]));
    out.push_str(") ");
    render_block(&node.children[1], depth, out);
    if let Some(alt) = node.children.get(2) {
        out.push_str(" else ");
        if alt.kind == AstKind::IfStmt {
            render_if_tail(alt, depth, out);
        } else {
            render_block(alt, depth, out);
        }
    }
}

fn render_stmt_into(node: &AstNode, depth: usize, out: &mut String) {
    out.push_str(&INDENT.repeat(depth));
    match node.kind {
        AstKind::AssignStmt | AstKind::ExprStmt => {
            out.push_str(&render_simple(node));
            out.push(';');
        }
        AstKind::ReturnStmt => match node.children.first() {
            Some(e) => {
                out.push_str("return ");
                out.push_str(&render_expr(e));
                out.push(';');
            }
            None => out.push_str("return;"),
        },
        AstKind::IfStmt => render_if_tail(node, depth, out),
        AstKind::WhileStmt => {
            out.push_str("while (");
            out.push_str(&render_expr(&node.children[0]));
            out.push_str(") ");
            render_block(&node.children[1], depth, out);
        }
        AstKind::ForStmt => {
            out.push_str(&format!(
                "for ({}; {}; {}) ",
                render_simple(&node.children[0]),
                render_expr(&node.children[1]),
                render_simple(&node.children[2])
            ));
            render_block(&node.children[3], depth, out);
        }
        AstKind::FunctionDecl => {
            let body = node.children.last().expect("function has a body");
            if node.is_test() {
                let title = node.name().unwrap_or("");
                out.push_str(&format!(
                    "test {} ",
                    serde_json::to_string(title).expect("string serializes")
                ));
            } else {
                let params: Vec<&str> = node
                    .children
                    .iter()
                    .filter(|c| c.kind == AstKind::Param)
                    .filter_map(AstNode::name)
                    .collect();
                out.push_str(&format!(
                    "function {}({}) ",
                    node.qualified_name().unwrap_or(""),
                    params.join(", ")
                ));
            }
            render_block(body, depth, out);
        }
        AstKind::Block => render_block(node, depth, out),
        AstKind::Module => {
            out.truncate(out.len() - INDENT.len() * depth);
            out.push_str(&render_module(node));
            return;
        }
        _ => {
            out.push_str(&render_expr(node));
            out.push(';');
        }
    }
    out.push('\n');
}

/// Renders a statement (or declaration) with trailing newline.
pub fn render_stmt(node: &AstNode) -> String {
    let mut out = String::new();
    render_stmt_into(node, 0, &mut out);
    out
}

/// Renders a statement at the given indentation depth.
pub fn render_stmt_indented(node: &AstNode, depth: usize) -> String {
    let mut out = String::new();
    render_stmt_into(node, depth, &mut out);
    out
}

pub fn render_module(node: &AstNode) -> String {
    let mut out = String::new();
    let mut prev_decl: Option<bool> = None;
    for item in &node.children {
        let is_decl = item.kind == AstKind::FunctionDecl;
        if let Some(p) = prev_decl {
            if p || is_decl {
                out.push('\n');
            }
        }
        render_stmt_into(item, 0, &mut out);
        prev_decl = Some(is_decl);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt_stmt(src: &str) -> String {
        let once = render_stmt(&parse_statement(src).unwrap());
        let twice = render_stmt(&parse_statement(&once).unwrap());
        assert_eq!(once, twice);
        once
    }

    #[test]
    fn statements_render_canonically() {
        assert_eq!(rt_stmt("let  x=1+2*3;"), "let x = 1 + 2 * 3;\n");
        assert_eq!(rt_stmt("x = (1+2)*3;"), "x = (1 + 2) * 3;\n");
        assert_eq!(rt_stmt("a - (b - c);"), "a - (b - c);\n");
        assert_eq!(rt_stmt("this.x = -y;"), "this.x = -y;\n");
        assert_eq!(
            rt_stmt("const b = this.points[(i + 1) % 4];"),
            "const b = this.points[(i + 1) % 4];\n"
        );
        assert_eq!(
            rt_stmt("pA.moveAlong(normal, amount);"),
            "pA.moveAlong(normal, amount);\n"
        );
        assert_eq!(
            rt_stmt("let p = new geo.Point(0, 0.5);"),
            "let p = new geo.Point(0, 0.5);\n"
        );
        assert_eq!(
            rt_stmt("return {x: 1, \"a b\": [1, 2]};"),
            "return {x: 1, \"a b\": [1, 2]};\n"
        );
        assert_eq!(rt_stmt("let m = -Infinity;"), "let m = -Infinity;\n");
        assert_eq!(rt_stmt("x = - -1;"), "x = - -1;\n");
    }

    #[test]
    fn compound_statements() {
        let src = "for (let i = 0; i < 4; i = i + 1) { if (a > b) { b = a; } else if (a == 1) { x(); } else { y(); } }";
        let out = rt_stmt(src);
        assert_eq!(
            out,
            "for (let i = 0; i < 4; i = i + 1) {\n  if (a > b) {\n    b = a;\n  } else if (a == 1) {\n    x();\n  } else {\n    y();\n  }\n}\n"
        );
        let f = rt_stmt("function Point.moveAlong(d, n) { this.x = this.x + d.x * n; }");
        assert!(f.starts_with("function Point.moveAlong(d, n) {\n"));
    }

    #[test]
    fn function_attrs() {
        let f = parse_statement("function Rectangle.normalize(dx, dy) { return dx; }").unwrap();
        assert_eq!(f.name(), Some("normalize"));
        assert_eq!(f.qualified_name(), Some("Rectangle.normalize"));
        assert_eq!(f.attr_str("owner"), Some("Rectangle"));
        assert_eq!(f.children.len(), 3);
        let t = parse_statement("test \"does it\" { x(); }").unwrap();
        assert!(t.is_test());
        assert_eq!(t.name(), Some("does it"));
    }

    #[test]
    fn module_flags_imports_and_spans() {
        let m = parse_module("require(\"src/a\");\n\nfunction f(x) {\n  return x;\n}\n").unwrap();
        assert!(m.children[0].is_import());
        assert_eq!(m.children[1].span, Span::new(3, 0, 5, 1));
        let mut ok = true;
        m.walk(&mut |n| {
            for c in &n.children {
                ok &= n.span.contains(&c.span);
            }
        });
        assert!(ok);
    }

    #[test]
    fn literal_forms() {
        let e = parse_expression("2.50").unwrap();
        assert_eq!(e.attr_str("type"), Some("float"));
        assert_eq!(render_expr(&e), "2.50");
        let s = parse_expression("\"a\\\"b\\n\"").unwrap();
        assert_eq!(s.attrs["value"], Value::String("a\"b\n".into()));
        assert_eq!(render_expr(&s), "\"a\\\"b\\n\"");
    }

    #[test]
    fn syntax_errors_have_positions() {
        let err = parse_statement("let = 3;").unwrap_err();
        assert_eq!((err.line, err.col), (1, 4));
        assert!(parse_statement("1 = 2;").is_err());
        assert!(parse_module("function f( {").is_err());
    }
}
