//! Execution tree and context serialization.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{ProgramAst, StepId};
use crate::value::{Value, VariableStore};

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

/// Default number of same-step records retrieved into the context.
pub const DEFAULT_RETRIEVAL_DEPTH: usize = 3;

/// Maximum length of any digest line.
pub const DIGEST_MAX: usize = 200;
/// Screen digests on the active trace are shorter still.
pub const TRACE_OBSERVATION_MAX: usize = 80;

/// One line, at most `max` characters, ending in `…` when cut.
pub fn clip(text: &str, max: usize) -> String {
    let mut line = String::with_capacity(text.len().min(max * 4));
    let mut last_space = false;
    for c in text.trim().chars() {
        let c = if c.is_whitespace() { ' ' } else { c };
        if c == ' ' && last_space {
            continue;
        }
        last_space = c == ' ';
        line.push(c);
    }
    if line.chars().count() <= max {
        return line;
    }
    let mut out: String = line.chars().take(max.saturating_sub(1)).collect();
    out.push('…');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Sequential,
    Conditional,
    LoopIteration,
}

/// How a node hangs under its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Root,
    Sequential,
    /// The single executed branch of a conditional.
    Branch,
    /// One pass through a loop body.
    Iteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Succeeded,
    Failed,
    Recovered,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Pending => "pending",
            NodeStatus::Succeeded => "succeeded",
            NodeStatus::Failed => "failed",
            NodeStatus::Recovered => "recovered",
        }
    }
}

/// One executed command and the screen it left behind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandLog {
    pub command: String,
    pub result: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub step_id: Option<StepId>,
    pub kind: NodeKind,
    pub link: Link,
    pub iteration: Option<u64>,
    /// The statement is an if / else-if / else.
    pub conditional: bool,
    pub status: NodeStatus,
    pub action_digest: String,
    pub observation_digest: String,
    pub note: String,
    /// Not part of the exported record; kept for comparators and recovery.
    #[serde(skip)]
    pub log: Vec<CommandLog>,
    /// Anchor writes attributed to this step, in order.
    #[serde(skip)]
    pub writes: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("structure violation: {0}")]
    StructureViolation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTree {
    nodes: Vec<ExecNode>,
    current: NodeId,
}

impl Default for ExecTree {
    fn default() -> Self {
        Self::new()
    }
}

impl ExecTree {
    pub fn new() -> Self {
        let root = ExecNode {
            id: ROOT,
            parent: None,
            children: Vec::new(),
            step_id: None,
            kind: NodeKind::Sequential,
            link: Link::Root,
            iteration: None,
            conditional: false,
            status: NodeStatus::Succeeded,
            action_digest: String::new(),
            observation_digest: String::new(),
            note: String::new(),
            log: Vec::new(),
            writes: Vec::new(),
        };
        ExecTree { nodes: alloc::vec![root], current: ROOT }
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn nodes(&self) -> &[ExecNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&ExecNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut ExecNode> {
        self.nodes.get_mut(id)
    }

    /// Adds an executed step under `parent` and makes it current.
    ///
    /// `conditional` marks if/else-if/else visits; iteration links get the
    /// next iteration index among their siblings.
    pub fn append(
        &mut self,
        parent: NodeId,
        link: Link,
        step_id: StepId,
        conditional: bool,
    ) -> Result<NodeId, TreeError> {
        let p = self.nodes.get(parent).ok_or(TreeError::UnknownNode(parent))?;
        let siblings = || p.children.iter().map(|c| &self.nodes[*c]);
        let iteration = match link {
            Link::Root => return Err(TreeError::StructureViolation("only one root".into())),
            Link::Branch => {
                if !p.conditional {
                    return Err(TreeError::StructureViolation(format!(
                        "branch under non-conditional node {parent}"
                    )));
                }
                if siblings().any(|c| c.link == Link::Branch) {
                    return Err(TreeError::StructureViolation(format!(
                        "conditional node {parent} already has a branch"
                    )));
                }
                None
            }
            Link::Iteration => Some(siblings().filter_map(|c| c.iteration).max().unwrap_or(0) + 1),
            Link::Sequential => None,
        };
        let kind = match (link, conditional) {
            (Link::Iteration, _) => NodeKind::LoopIteration,
            (_, true) => NodeKind::Conditional,
            _ => NodeKind::Sequential,
        };
        let id = self.nodes.len();
        self.nodes.push(ExecNode {
            id,
            parent: Some(parent),
            children: Vec::new(),
            step_id: Some(step_id),
            kind,
            link,
            iteration,
            conditional,
            status: NodeStatus::Pending,
            action_digest: String::new(),
            observation_digest: String::new(),
            note: String::new(),
            log: Vec::new(),
            writes: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        self.current = id;
        Ok(id)
    }

    /// Root-to-current chain, root first.
    pub fn active_path(&self) -> Vec<NodeId> {
        self.path_to(self.current)
    }

    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            out.push(c);
            cur = self.nodes[c].parent;
        }
        out.reverse();
        out
    }

    /// The most recent `k` finished executions of `step_id`, newest last.
    pub fn retrieve_history(&self, step_id: &StepId, k: usize) -> Vec<StepHistoryRecord> {
        let mut recs: Vec<StepHistoryRecord> = self
            .nodes
            .iter()
            .filter(|n| n.id != self.current && n.status != NodeStatus::Pending)
            .filter(|n| n.step_id.as_ref() == Some(step_id))
            .map(|n| StepHistoryRecord {
                node: n.id,
                step_id: step_id.clone(),
                iteration: self.iteration_context(n.id),
                action_digest: n.action_digest.clone(),
                status: n.status,
                note: n.note.clone(),
            })
            .collect();
        let skip = recs.len().saturating_sub(k);
        recs.drain(..skip);
        recs
    }

    /// Iteration index of the nearest enclosing loop pass, if any.
    pub fn iteration_context(&self, id: NodeId) -> Option<u64> {
        self.path_to(id).iter().rev().find_map(|n| self.nodes[*n].iteration)
    }

    /// Every node in the subtree rooted at `id`, preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// True when no node carries two branch children.
    pub fn branches_well_formed(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.children.iter().filter(|c| self.nodes[**c].link == Link::Branch).count() <= 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepHistoryRecord {
    pub node: NodeId,
    pub step_id: StepId,
    pub iteration: Option<u64>,
    pub action_digest: String,
    pub status: NodeStatus,
    pub note: String,
}

impl StepHistoryRecord {
    pub fn render(&self) -> String {
        let label = step_label(&self.step_id, self.iteration);
        let action = if self.action_digest.is_empty() { "-" } else { &self.action_digest };
        clip(&format!("[{label}] {action} => {}: {}", self.status.as_str(), self.note), DIGEST_MAX)
    }
}

fn step_label(step: &StepId, iteration: Option<u64>) -> String {
    match iteration {
        Some(i) => format!("{step} iter {i}"),
        None => step.to_string(),
    }
}

/// How much history goes into each prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ProgramGuided,
    FullHistory,
    SlidingWindow(usize),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::ProgramGuided => f.write_str("program_guided"),
            Strategy::FullHistory => f.write_str("full_history"),
            Strategy::SlidingWindow(w) => write!(f, "sliding_window_{w}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy `{0}` (expected program_guided, full_history or sliding_window_<n>)")]
pub struct StrategyParseError(pub String);

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "program_guided" | "program" | "stp" => Ok(Strategy::ProgramGuided),
            "full_history" | "full" => Ok(Strategy::FullHistory),
            "sliding_window" | "sliding" => Ok(Strategy::SlidingWindow(5)),
            other => other
                .strip_prefix("sliding_window_")
                .or_else(|| other.strip_prefix("sliding_window:"))
                .and_then(|w| w.parse().ok())
                .filter(|w| *w > 0)
                .map(Strategy::SlidingWindow)
                .ok_or_else(|| StrategyParseError(s.to_string())),
        }
    }
}

/// The agent's view of the episode at one step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub static_prefix: String,
    pub program_listing: String,
    pub active_trace: Vec<String>,
    pub folded_iterations: Vec<String>,
    pub variables: Vec<String>,
    pub beliefs: Vec<String>,
    pub retrieved: Vec<String>,
    /// Comparator strategies only: raw step records.
    pub history: Vec<String>,
}

fn section(out: &mut String, title: &str, lines: &[String]) {
    if lines.is_empty() {
        return;
    }
    out.push_str("## ");
    out.push_str(title);
    out.push('\n');
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
}

impl ContextDocument {
    /// Everything except the static prefix.
    pub fn render_dynamic(&self) -> String {
        let mut out = String::new();
        out.push_str("## Program\n");
        out.push_str(&self.program_listing);
        section(&mut out, "Active path", &self.active_trace);
        section(&mut out, "Completed iterations", &self.folded_iterations);
        section(&mut out, "Variables", &self.variables);
        section(&mut out, "Beliefs", &self.beliefs);
        section(&mut out, "Previous runs of this step", &self.retrieved);
        section(&mut out, "History", &self.history);
        out
    }
}

/// Numbered program listing with the current statement marked.
pub fn program_listing(program: &ProgramAst, current: Option<&StepId>) -> String {
    let mut out = String::new();
    for s in program.all_statements() {
        let marker = if Some(&s.step_id) == current { ">>" } else { "  " };
        let indent = "    ".repeat(s.step_id.depth().saturating_sub(1));
        out.push_str(&format!("{marker} {:<6} {indent}{}\n", s.step_id.as_str(), s.text));
    }
    out
}

/// Inputs to [`serialize_context`].
pub struct ContextInput<'a> {
    pub tree: &'a ExecTree,
    pub program: &'a ProgramAst,
    pub current_step: Option<&'a StepId>,
    /// Loop headers currently iterating, outermost first.
    pub open_loops: &'a [StepId],
    pub store: &'a VariableStore,
    pub beliefs: &'a [String],
    pub k: usize,
    pub strategy: Strategy,
    pub static_prefix: &'a str,
}

fn var_line(name: &str, v: &Value) -> String {
    format!("{name} = {}", v.print())
}

fn iteration_status(tree: &ExecTree, id: NodeId) -> NodeStatus {
    let mut status = NodeStatus::Succeeded;
    for n in tree.subtree(id) {
        match tree.nodes[n].status {
            NodeStatus::Failed => return NodeStatus::Failed,
            NodeStatus::Recovered => status = NodeStatus::Recovered,
            _ => {}
        }
    }
    status
}

fn fold_line(tree: &ExecTree, header: &ExecNode, iter_node: NodeId) -> String {
    let mut changed: Vec<(String, Value)> = Vec::new();
    for n in tree.subtree(iter_node) {
        for (k, v) in &tree.nodes[n].writes {
            match changed.iter_mut().find(|(name, _)| name == k) {
                Some(slot) => slot.1 = v.clone(),
                None => changed.push((k.clone(), v.clone())),
            }
        }
    }
    let deltas = if changed.is_empty() {
        "none".to_string()
    } else {
        changed
            .iter()
            .map(|(k, v)| format!("{k}={}", clip(&v.print(), 48)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let step = header.step_id.as_ref().map(StepId::as_str).unwrap_or("");
    let iter = tree.nodes[iter_node].iteration.unwrap_or(0);
    clip(
        &format!("[{step}] iter {iter}: {}; Δvars: {deltas}", iteration_status(tree, iter_node).as_str()),
        DIGEST_MAX,
    )
}

fn trace_line(tree: &ExecTree, n: &ExecNode) -> String {
    let step = n.step_id.as_ref().map(|s| step_label(s, tree.iteration_context(n.id))).unwrap_or_default();
    let action = if n.action_digest.is_empty() { "-" } else { &n.action_digest };
    let mut line = format!("[{step}] {action}");
    if !n.observation_digest.is_empty() {
        line.push_str(" => ");
        line.push_str(&clip(&n.observation_digest, TRACE_OBSERVATION_MAX));
    }
    line.push_str(&format!(" ({})", n.status.as_str()));
    line
}

fn history_record(tree: &ExecTree, n: &ExecNode) -> String {
    let step = n.step_id.as_ref().map(|s| step_label(s, tree.iteration_context(n.id))).unwrap_or_default();
    let mut out = format!("[{step}] {}: {}", n.status.as_str(), n.note);
    for c in &n.log {
        out.push_str(&format!("\n> {} -> {}\n", c.command, c.result));
        out.push_str(c.observation.trim_end());
    }
    out
}

/// Builds the context document for the current step. Read-only.
pub fn serialize_context(input: &ContextInput<'_>) -> ContextDocument {
    let tree = input.tree;
    let mut doc = ContextDocument {
        static_prefix: input.static_prefix.to_string(),
        program_listing: program_listing(input.program, input.current_step),
        beliefs: input.beliefs.to_vec(),
        ..ContextDocument::default()
    };
    let finished = |n: &&ExecNode| n.id != ROOT && n.id != tree.current && n.status != NodeStatus::Pending;
    match input.strategy {
        Strategy::ProgramGuided => {
            let path = tree.active_path();
            for id in &path {
                let n = &tree.nodes[*id];
                for c in &n.children {
                    let child = &tree.nodes[*c];
                    if child.link == Link::Iteration && !path.contains(c) {
                        doc.folded_iterations.push(fold_line(tree, n, *c));
                    }
                }
                if finished(&n) {
                    doc.active_trace.push(trace_line(tree, n));
                }
            }
            doc.variables = variables(input);
            if let Some(step) = input.current_step {
                doc.retrieved = tree.retrieve_history(step, input.k).iter().map(StepHistoryRecord::render).collect();
            }
        }
        Strategy::FullHistory => {
            doc.history = tree.nodes.iter().filter(finished).map(|n| history_record(tree, n)).collect();
        }
        Strategy::SlidingWindow(w) => {
            let all: Vec<&ExecNode> = tree.nodes.iter().filter(finished).collect();
            let skip = all.len().saturating_sub(w);
            doc.history = all[skip..].iter().map(|n| history_record(tree, n)).collect();
        }
    }
    doc
}

/// Every anchor, plus auxiliaries the current statement or an open loop
/// header reads.
fn variables(input: &ContextInput<'_>) -> Vec<String> {
    let store = input.store;
    let mut out = Vec::new();
    let mut shown: Vec<String> = Vec::new();
    for a in store.anchors() {
        match store.get_var(a) {
            Ok(v) => out.push(var_line(a, &v)),
            Err(_) => out.push(format!("{a} = (unset)")),
        }
        shown.push(a.to_string());
    }
    let mut reads: Vec<&String> = Vec::new();
    let stmts = input.current_step.into_iter().chain(input.open_loops.iter());
    for id in stmts {
        if let Some(s) = input.program.get(id) {
            reads.extend(s.var_reads.iter());
        }
    }
    for path in reads {
        let key = if path.starts_with("loop.") {
            path.clone()
        } else {
            path.split('.').next().unwrap_or(path).to_string()
        };
        if shown.contains(&key) {
            continue;
        }
        if let Ok(v) = store.get_var(&key) {
            out.push(var_line(&key, &v));
            shown.push(key);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> StepId {
        StepId::new(s)
    }

    #[test]
    fn clip_rules() {
        assert_eq!(clip("a\n  b", 10), "a b");
        let long = "x".repeat(300);
        let c = clip(&long, 200);
        assert_eq!(c.chars().count(), 200);
        assert!(c.ends_with('…'));
    }

    #[test]
    fn linear_chain() {
        let mut t = ExecTree::new();
        let a = t.append(ROOT, Link::Sequential, sid("1"), false).unwrap();
        let b = t.append(a, Link::Sequential, sid("2"), false).unwrap();
        let c = t.append(b, Link::Sequential, sid("3"), false).unwrap();
        assert_eq!(t.active_path(), [ROOT, a, b, c]);
    }

    #[test]
    fn root_only() {
        assert_eq!(ExecTree::new().active_path(), [ROOT]);
    }

    #[test]
    fn loop_iterations_numbered() {
        let mut t = ExecTree::new();
        let h = t.append(ROOT, Link::Sequential, sid("1"), false).unwrap();
        let mut iters = Vec::new();
        for _ in 0..3 {
            let i = t.append(h, Link::Iteration, sid("1.1"), false).unwrap();
            iters.push(t.node(i).unwrap().iteration.unwrap());
        }
        assert_eq!(iters, [1, 2, 3]);
        let path = t.active_path();
        assert_eq!(path.len(), 3);
    }

    #[test]
    fn one_branch_only() {
        let mut t = ExecTree::new();
        let c = t.append(ROOT, Link::Sequential, sid("1"), true).unwrap();
        t.append(c, Link::Branch, sid("2"), true).unwrap();
        assert!(matches!(
            t.append(c, Link::Branch, sid("1.1"), false),
            Err(TreeError::StructureViolation(_))
        ));
        let s = t.append(ROOT, Link::Sequential, sid("1"), false).unwrap();
        assert!(t.append(s, Link::Branch, sid("1.1"), false).is_err());
        assert!(t.branches_well_formed());
    }

    #[test]
    fn retrieval_newest_last() {
        let mut t = ExecTree::new();
        let h = t.append(ROOT, Link::Sequential, sid("1"), false).unwrap();
        t.node_mut(h).unwrap().status = NodeStatus::Succeeded;
        for _ in 0..5 {
            let b = t.append(h, Link::Iteration, sid("1.1"), false).unwrap();
            t.node_mut(b).unwrap().status = NodeStatus::Succeeded;
        }
        // The current node is still in progress and never retrieved.
        let recs = t.retrieve_history(&sid("1.1"), 3);
        let its: Vec<_> = recs.iter().map(|r| r.iteration.unwrap()).collect();
        assert_eq!(its, [2, 3, 4]);
        assert_eq!(t.retrieve_history(&sid("1"), 3).len(), 1);
        assert!(t.retrieve_history(&sid("9"), 3).is_empty());
    }

    #[test]
    fn strategy_names() {
        for s in [Strategy::ProgramGuided, Strategy::FullHistory, Strategy::SlidingWindow(5)] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
