//! Core of the Semantic Task Program (STP) runtime.
//!
//! Everything in this crate is pure computation over in-memory data: the DSL
//! front end (`lang`), the dynamic value system (`value`), the execution tree
//! and context serializer (`tree`), the global belief state (`belief`), the
//! program-counter interpreter (`interp`) and a deterministic, partially
//! observable device simulator (`sim`). File IO, HTTP and the command line
//! live in the `stp` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backend;
pub mod belief;
pub mod interp;
pub mod lang;
pub mod ledger;
pub mod script;
pub mod sim;
pub mod template;
pub mod tokens;
pub mod tree;
pub mod value;

mod hash;

pub use lang::{parse_program, ControlFlowGraph, ProgramAst, Statement, StatementKind, StepId};
pub use tokens::count_tokens;
pub use value::{Decimal, Value, VariableStore};
