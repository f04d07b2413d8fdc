pub mod ast;
pub mod error;
pub mod filter;
pub mod flow;
pub mod pipeline;
pub mod resolve;
pub mod seed;
pub mod syntax;
pub mod testgen;
pub mod trace;
