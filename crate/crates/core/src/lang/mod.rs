//! The STP language front end: line tokenizer, statement classifier,
//! indentation parser, canonical printer and control-flow graph.

mod ast;
mod cfg;
mod classify;
mod lines;
pub(crate) mod refs;

pub use ast::{parse_program, print_program, ParseError, ProgramAst, Statement, StepId};
pub use cfg::{build_cfg, ControlFlowGraph, Edge, EdgeKind, Target};
pub use classify::{classify_statement, CallArg, KindTag, Param, RepeatCount, StatementKind};
pub use lines::{tokenize_lines, SourceLine, TokenizeError};
pub use refs::{extract_variable_refs, is_var_path, normalize_ref, RefError};
