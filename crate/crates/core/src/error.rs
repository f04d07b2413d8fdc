use thiserror::Error;

use crate::ast::Iid;

#[derive(Debug, Error)]
pub enum AstError {
    #[error("schema error at {node}: {message}")]
    Schema { node: String, message: String },
    #[error("duplicate iid {0}")]
    DuplicateIid(Iid),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown iid {0}")]
    UnknownIid(Iid),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace structure error at line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error("trace i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("component '{0}' not found")]
    NotFound(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("component '{name}' is ambiguous: {candidates:?}")]
    Ambiguous { name: String, candidates: Vec<String> },
    #[error(transparent)]
    Ast(#[from] AstError),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trace structure error: {0}")]
    Structure(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Ast(#[from] AstError),
}

/// Why a single test plan could not be generated. Collected, never fatal.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("call site iid {0} not found under its statement")]
    MissingCallSite(Iid),
    #[error("no variable binding found for object ref {0}")]
    UnresolvedRef(u64),
    #[error("identifier '{0}' cannot be resolved")]
    UnresolvedIdentifier(String),
    #[error("identifier '{0}' has conflicting recorded values")]
    ConflictingBinding(String),
    #[error("statement iid {0} is compound and cannot be arranged")]
    CompoundStatement(Iid),
    #[error("nothing to assert")]
    NothingToAssert,
    #[error("plan is not closed over identifier '{0}'")]
    NotClosed(String),
    #[error("ast error: {0}")]
    Ast(String),
}

impl From<AstError> for PlanError {
    fn from(e: AstError) -> Self {
        PlanError::Ast(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{step}] {message}")]
    Step { step: &'static str, message: String },
    #[error("harness command failed ({status}): {output}")]
    Harness { status: String, output: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn step(step: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError::Step {
            step,
            message: err.to_string(),
        }
    }
}
