use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{ProgramAst, Statement, StepId};
use super::classify::StatementKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    NextSequential,
    EnterBlock,
    LoopBack,
    ExitLoop,
    TakeBranch,
    SkipBranch,
    Call,
    Return,
    Terminate,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::NextSequential => "NextSequential",
            EdgeKind::EnterBlock => "EnterBlock",
            EdgeKind::LoopBack => "LoopBack",
            EdgeKind::ExitLoop => "ExitLoop",
            EdgeKind::TakeBranch => "TakeBranch",
            EdgeKind::SkipBranch => "SkipBranch",
            EdgeKind::Call => "Call",
            EdgeKind::Return => "Return",
            EdgeKind::Terminate => "Terminate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "NextSequential" => EdgeKind::NextSequential,
            "EnterBlock" => EdgeKind::EnterBlock,
            "LoopBack" => EdgeKind::LoopBack,
            "ExitLoop" => EdgeKind::ExitLoop,
            "TakeBranch" => EdgeKind::TakeBranch,
            "SkipBranch" => EdgeKind::SkipBranch,
            "Call" => EdgeKind::Call,
            "Return" => EdgeKind::Return,
            "Terminate" => EdgeKind::Terminate,
            _ => return None,
        })
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a move lands: a statement, or the end of the program.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Step(StepId),
    End,
}

impl Target {
    pub fn step(&self) -> Option<&StepId> {
        match self {
            Target::Step(s) => Some(s),
            Target::End => None,
        }
    }

    pub fn parse(s: &str) -> Target {
        match s {
            "END" | "end" | "" => Target::End,
            other => Target::Step(StepId::new(other)),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Step(s) => write!(f, "{s}"),
            Target::End => f.write_str("END"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub target: Target,
}

impl Edge {
    pub fn new(kind: EdgeKind, target: Target) -> Self {
        Edge { kind, target }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.kind, self.target)
    }
}

/// Legal program-counter moves for every statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowGraph {
    pub nodes: Vec<StepId>,
    pub edges: BTreeMap<StepId, Vec<Edge>>,
    /// Where execution resumes after a call returns, per call site.
    pub resume: BTreeMap<StepId, Vec<Edge>>,
    pub entry: Target,
}

impl ControlFlowGraph {
    pub fn moves(&self, from: &StepId) -> &[Edge] {
        self.edges.get(from).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_edge(&self, from: &StepId, edge: &Edge) -> bool {
        self.moves(from).contains(edge)
    }

    /// Steps reachable from the entry, following every edge.
    pub fn reachable(&self) -> BTreeSet<StepId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<StepId> = self.entry.step().cloned().into_iter().collect();
        while let Some(s) = stack.pop() {
            if !seen.insert(s.clone()) {
                continue;
            }
            for e in self.moves(&s) {
                if let Target::Step(t) = &e.target {
                    stack.push(t.clone());
                }
            }
        }
        seen
    }

    /// Human-readable listing, one node per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&alloc::format!("entry -> {}\n", self.entry));
        for n in &self.nodes {
            out.push_str(n.as_str());
            out.push(':');
            for e in self.moves(n) {
                out.push_str(&alloc::format!(" [{e}]"));
            }
            out.push('\n');
        }
        out
    }
}

struct Builder<'a> {
    program: &'a ProgramAst,
    /// Function name -> call-site step ids.
    callers: BTreeMap<&'a str, Vec<&'a StepId>>,
}

fn relabel(kind: EdgeKind, cont: Vec<Edge>) -> Vec<Edge> {
    cont.into_iter()
        .map(|e| if e.kind == EdgeKind::Return { e } else { Edge::new(kind, e.target) })
        .collect()
}

impl<'a> Builder<'a> {
    fn siblings(&self, id: &StepId) -> &'a [Statement] {
        match id.parent() {
            Some(p) => &self.program.get(&p).expect("parent exists").children,
            None => &self.program.statements,
        }
    }

    /// Edges taken when `id` completes without transferring control itself.
    fn cont(&self, id: &StepId, visiting: &mut Vec<&'a str>) -> Vec<Edge> {
        let sibs = self.siblings(id);
        let mut j = id.segments().last().unwrap_or(1);
        while let Some(next) = sibs.get(j) {
            if matches!(next.kind, StatementKind::ElseIf { .. } | StatementKind::Else) {
                j += 1;
                continue;
            }
            return vec![Edge::new(EdgeKind::NextSequential, Target::Step(next.step_id.clone()))];
        }
        let Some(parent_id) = id.parent() else {
            return vec![Edge::new(EdgeKind::Terminate, Target::End)];
        };
        let parent = self.program.get(&parent_id).expect("parent exists");
        match &parent.kind {
            k if k.is_loop() => vec![Edge::new(EdgeKind::LoopBack, Target::Step(parent_id))],
            StatementKind::FunctionDef { name } => self.returns(name, visiting),
            _ => self.cont(&parent_id, visiting),
        }
    }

    fn returns(&self, function: &'a str, visiting: &mut Vec<&'a str>) -> Vec<Edge> {
        if visiting.contains(&function) {
            return Vec::new();
        }
        visiting.push(function);
        let mut out: Vec<Edge> = Vec::new();
        for site in self.callers.get(function).into_iter().flatten() {
            for e in relabel(EdgeKind::Return, self.cont(site, visiting)) {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        visiting.pop();
        out
    }

    fn enclosing_function(&self, id: &StepId) -> Option<&'a str> {
        let mut cur = id.parent();
        while let Some(p) = cur {
            if let StatementKind::FunctionDef { name } = &self.program.get(&p)?.kind {
                return Some(name.as_str());
            }
            cur = p.parent();
        }
        None
    }

    fn edges(&self, s: &'a Statement) -> Vec<Edge> {
        let first_child = || s.children.first().map(|c| Target::Step(c.step_id.clone()));
        let mut visiting = Vec::new();
        match &s.kind {
            StatementKind::If { .. } | StatementKind::ElseIf { .. } => {
                let mut out = vec![Edge::new(EdgeKind::TakeBranch, first_child().expect("block body"))];
                let sibs = self.siblings(&s.step_id);
                let idx = s.step_id.segments().last().unwrap_or(1);
                match sibs.get(idx) {
                    Some(n) if matches!(n.kind, StatementKind::ElseIf { .. } | StatementKind::Else) => {
                        out.push(Edge::new(EdgeKind::SkipBranch, Target::Step(n.step_id.clone())))
                    }
                    _ => out.extend(relabel(EdgeKind::SkipBranch, self.cont(&s.step_id, &mut visiting))),
                }
                out
            }
            StatementKind::Else => {
                vec![Edge::new(EdgeKind::TakeBranch, first_child().expect("block body"))]
            }
            k if k.is_loop() => {
                let mut out = vec![Edge::new(EdgeKind::EnterBlock, first_child().expect("block body"))];
                out.extend(relabel(EdgeKind::ExitLoop, self.cont(&s.step_id, &mut visiting)));
                out
            }
            StatementKind::FunctionCall { name, .. } => match self.program.functions.get(name) {
                Some(def) => {
                    let body = &self.program.get(def).expect("function exists").children[0];
                    vec![Edge::new(EdgeKind::Call, Target::Step(body.step_id.clone()))]
                }
                None => self.cont(&s.step_id, &mut visiting),
            },
            StatementKind::FunctionReturns { .. } => match self.enclosing_function(&s.step_id) {
                Some(f) => self.returns(f, &mut visiting),
                None => self.cont(&s.step_id, &mut visiting),
            },
            StatementKind::FunctionDef { .. } => self.cont(&s.step_id, &mut visiting),
            _ if !s.children.is_empty() => {
                vec![Edge::new(EdgeKind::EnterBlock, first_child().expect("block body"))]
            }
            _ => self.cont(&s.step_id, &mut visiting),
        }
    }
}

/// Derives the legal program-counter moves of a parsed program.
pub fn build_cfg(program: &ProgramAst) -> ControlFlowGraph {
    let all = program.all_statements();
    let mut callers: BTreeMap<&str, Vec<&StepId>> = BTreeMap::new();
    for s in &all {
        if let StatementKind::FunctionCall { name, .. } = &s.kind {
            if program.functions.contains_key(name) {
                callers.entry(name.as_str()).or_default().push(&s.step_id);
            }
        }
    }
    let builder = Builder { program, callers };

    let mut edges = BTreeMap::new();
    let mut resume = BTreeMap::new();
    for s in &all {
        edges.insert(s.step_id.clone(), builder.edges(s));
        if let StatementKind::FunctionCall { name, .. } = &s.kind {
            if program.functions.contains_key(name) {
                resume.insert(s.step_id.clone(), builder.cont(&s.step_id, &mut Vec::new()));
            }
        }
    }
    ControlFlowGraph {
        nodes: all.iter().map(|s| s.step_id.clone()).collect(),
        edges,
        resume,
        entry: program
            .statements
            .first()
            .map(|s| Target::Step(s.step_id.clone()))
            .unwrap_or(Target::End),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn cfg(src: &str) -> ControlFlowGraph {
        build_cfg(&parse_program(src).unwrap())
    }

    fn e(kind: EdgeKind, t: &str) -> Edge {
        Edge::new(kind, Target::parse(t))
    }

    #[test]
    fn linear_program() {
        let g = cfg("a\nb\nc\n");
        assert_eq!(g.moves(&StepId::new("1")), [e(EdgeKind::NextSequential, "2")]);
        assert_eq!(g.moves(&StepId::new("2")), [e(EdgeKind::NextSequential, "3")]);
        assert_eq!(g.moves(&StepId::new("3")), [e(EdgeKind::Terminate, "END")]);
        assert_eq!(g.entry, Target::parse("1"));
    }

    #[test]
    fn repeat_loop() {
        let g = cfg("repeat 5 times:\n    tell user \"This is message number {loop.iteration}\"\nsay bye\n");
        assert_eq!(
            g.moves(&StepId::new("1")),
            [e(EdgeKind::EnterBlock, "1.1"), e(EdgeKind::ExitLoop, "2")]
        );
        assert_eq!(g.moves(&StepId::new("1.1")), [e(EdgeKind::LoopBack, "1")]);
    }

    #[test]
    fn call_and_return() {
        let g = cfg("define function named \"f\":\n    function inputs: {x}\n    function returns {x}\nexecute function \"f\", with {x} as 1, save result as {y}\ntell user \"{y}\"\n");
        assert_eq!(g.moves(&StepId::new("1")), [e(EdgeKind::NextSequential, "2")]);
        assert_eq!(g.moves(&StepId::new("2")), [e(EdgeKind::Call, "1.1")]);
        assert_eq!(g.moves(&StepId::new("1.1")), [e(EdgeKind::NextSequential, "1.2")]);
        assert_eq!(g.moves(&StepId::new("1.2")), [e(EdgeKind::Return, "3")]);
        assert_eq!(g.resume[&StepId::new("2")], [e(EdgeKind::NextSequential, "3")]);
    }

    #[test]
    fn if_chain_edges() {
        let g = cfg("if {a}:\n    x\nelse, if {b}:\n    y\nelse:\n    z\nafter\n");
        assert_eq!(
            g.moves(&StepId::new("1")),
            [e(EdgeKind::TakeBranch, "1.1"), e(EdgeKind::SkipBranch, "2")]
        );
        assert_eq!(
            g.moves(&StepId::new("2")),
            [e(EdgeKind::TakeBranch, "2.1"), e(EdgeKind::SkipBranch, "3")]
        );
        assert_eq!(g.moves(&StepId::new("3")), [e(EdgeKind::TakeBranch, "3.1")]);
        for body in ["1.1", "2.1", "3.1"] {
            assert_eq!(g.moves(&StepId::new(body)), [e(EdgeKind::NextSequential, "4")]);
        }
    }

    #[test]
    fn branch_at_end_of_loop_body_loops_back() {
        let g = cfg("repeat 2 times:\n    if {a}:\n        x\n");
        assert_eq!(
            g.moves(&StepId::new("1.1")),
            [e(EdgeKind::TakeBranch, "1.1.1"), e(EdgeKind::SkipBranch, "1")]
        );
        assert_eq!(g.moves(&StepId::new("1.1.1")), [e(EdgeKind::LoopBack, "1")]);
        assert_eq!(
            g.moves(&StepId::new("1")),
            [e(EdgeKind::EnterBlock, "1.1"), e(EdgeKind::ExitLoop, "END")]
        );
    }

    #[test]
    fn empty_program_entry_is_end() {
        assert_eq!(cfg("").entry, Target::End);
    }
}
