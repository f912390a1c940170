//! The program-counter interpreter.
//!
//! An episode alternates between grounding the current statement into an
//! action script and choosing the next program-counter move. A belief gap
//! detected while a script runs interposes recovery attempts before the move.

mod prompts;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    parse_drafts_reply, parse_move_reply, parse_script_reply, parse_verdicts_reply, Backend, BackendError,
    BackendRequest, Inputs, LoopProgress, PcMove, Purpose, ReplyError,
};
use crate::belief::BeliefState;
use crate::lang::refs::ref_spans;
use crate::lang::{build_cfg, ControlFlowGraph, Edge, EdgeKind, ProgramAst, RepeatCount, Statement, StatementKind, StepId, Target};
use crate::ledger::{LedgerEntry, TokenLedger};
use crate::script::{ActionScript, Command};
use crate::sim::{Device, Observation, SimError};
use crate::tokens::count_tokens;
use crate::tree::{
    clip, serialize_context, CommandLog, ContextDocument, ContextInput, ExecTree, Link, NodeId, NodeStatus, Strategy,
    TreeError, DEFAULT_RETRIEVAL_DEPTH, DIGEST_MAX,
};
use crate::value::{interpolate_partial, Decimal, Value, VariableStore};

pub use prompts::static_prefix;

/// What the interpreter drives.
pub trait Environment {
    fn apply(&mut self, command: &Command) -> Result<String, SimError>;
    fn observe(&self) -> Observation;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn apply(&mut self, command: &Command) -> Result<String, SimError> {
        (**self).apply(command)
    }

    fn observe(&self) -> Observation {
        (**self).observe()
    }
}

impl Environment for Device {
    fn apply(&mut self, command: &Command) -> Result<String, SimError> {
        Device::apply(self, command)
    }

    fn observe(&self) -> Observation {
        Device::observe(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub strategy: Strategy,
    pub beliefs: bool,
    pub max_steps: u64,
    pub retrieval_k: usize,
    /// Re-queries after a rejected move before the episode fails.
    pub move_retries: u32,
    pub recovery_attempts: u32,
    /// Check beliefs after every command rather than once per script.
    pub verify_each_command: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            strategy: Strategy::ProgramGuided,
            beliefs: true,
            max_steps: 200,
            retrieval_k: DEFAULT_RETRIEVAL_DEPTH,
            move_retries: 2,
            recovery_attempts: 2,
            verify_each_command: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ActionGeneration,
    PcUpdate,
    Recovery,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// The program counter reached the end of the program.
    Completed,
    /// A script called `done()`.
    Done,
    StepBudget,
    InvalidMove,
    BackendFailure,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub reason: TerminationReason,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("program has no statements")]
    EmptyProgram,
    #[error("{purpose} call failed after {attempts} attempt(s): {source}")]
    Backend { purpose: Purpose, attempts: u32, source: BackendError },
    #[error("{purpose} reply unusable after {attempts} attempt(s): {source}")]
    Reply { purpose: Purpose, attempts: u32, source: ReplyError },
    #[error("step budget of {0} exceeded")]
    StepBudgetExceeded(u64),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("episode already terminated")]
    Terminated,
    #[error("generated program rejected after {attempts} attempt(s): {reason}")]
    ProgramRejected { attempts: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResult {
    pub command: String,
    pub ok: bool,
    pub message: String,
    /// Digest of the screen after the command.
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub commands: Vec<CommandResult>,
    pub status: NodeStatus,
    pub note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief_gap: Option<String>,
    pub final_observation: String,
}

impl ExecutionReport {
    pub fn ok(&self) -> bool {
        self.status != NodeStatus::Failed
    }
}

/// One interpreter step as persisted in a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<StepId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    /// Dynamic payload of the step's main backend call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ExecutionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "move")]
    pub pc_move: Option<PcMove>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
    pub beliefs: Vec<String>,
    pub ledger: Vec<LedgerEntry>,
    pub anchors: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue(Mode),
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallInfo {
    pub site: StepId,
    pub resume: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub header: StepId,
    pub iteration: u64,
    pub total: Option<u64>,
    /// Number of calls active when the loop was entered.
    pub call_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCounter {
    pub current: StepId,
    pub call_stack: Vec<CallInfo>,
    pub loop_stack: Vec<LoopInfo>,
}

/// Checks a move against the graph and the stack discipline.
pub fn validate_pc_move(cfg: &ControlFlowGraph, pc: &ProgramCounter, mv: &Edge) -> Result<(), String> {
    if !cfg.has_edge(&pc.current, mv) {
        return Err(format!("{mv} is not a legal move from {}", pc.current));
    }
    let depth = pc.call_stack.len();
    let innermost = pc.loop_stack.iter().rev().take_while(|l| l.call_depth == depth);
    match mv.kind {
        EdgeKind::Return => {
            let call = pc.call_stack.last().ok_or("no active call")?;
            if !call.resume.iter().any(|e| e.target == mv.target) {
                return Err(format!("{} does not resume the call at {}", mv.target, call.site));
            }
        }
        EdgeKind::LoopBack => {
            let header = mv.target.step().ok_or("loop back to the end")?;
            if !innermost.clone().any(|l| &l.header == header) {
                return Err(format!("no active loop at {header}"));
            }
        }
        EdgeKind::EnterBlock => {
            let open = pc.loop_stack.last().filter(|l| l.call_depth == depth && l.header == pc.current);
            if let Some(l) = open {
                if l.total.is_some_and(|t| l.iteration >= t) {
                    return Err(format!("loop at {} already ran all {} iterations", l.header, l.iteration));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum FrameKind {
    Loop { iteration: u64, total: Option<u64>, items: Vec<Value> },
    Branch,
    Block,
    Call { site: StepId, resume: Vec<Edge>, result: Option<String> },
}

/// An open block. `anchor` is the node later steps hang under once control
/// leaves the block.
#[derive(Debug, Clone, PartialEq)]
struct Frame {
    step: StepId,
    anchor: NodeId,
    kind: FrameKind,
}

impl Frame {
    fn contains(&self, target: &Target) -> bool {
        match target {
            Target::End => false,
            Target::Step(t) => match self.kind {
                FrameKind::Loop { .. } => t == &self.step || t.is_descendant_of(&self.step),
                _ => t.is_descendant_of(&self.step),
            },
        }
    }
}

fn is_structural(kind: &StatementKind) -> bool {
    !matches!(kind, StatementKind::ActionStep | StatementKind::Assignment { .. })
}

/// A running episode.
pub struct Episode<E: Environment, B: Backend> {
    program: ProgramAst,
    cfg: ControlFlowGraph,
    current: StepId,
    frames: Vec<Frame>,
    tree: ExecTree,
    store: VariableStore,
    beliefs: BeliefState,
    env: E,
    backend: B,
    config: EpisodeConfig,
    mode: Mode,
    step_count: u64,
    ledger: TokenLedger,
    records: Vec<StepRecord>,
    termination: Option<Termination>,
    done: Option<String>,
    chain_anchor: Option<NodeId>,
    next_place: (NodeId, Link),
    last_report: Option<ExecutionReport>,
    last_script: Option<ActionScript>,
    recovery_tries: u32,
    // Ledger entries of the step in progress.
    step_calls: Vec<LedgerEntry>,
}

impl<E: Environment, B: Backend> Episode<E, B> {
    pub fn new(program: ProgramAst, env: E, backend: B, config: EpisodeConfig) -> Result<Self, InterpError> {
        let first = program.statements.first().ok_or(InterpError::EmptyProgram)?.step_id.clone();
        let cfg = build_cfg(&program);
        let store = VariableStore::with_anchors(program.declared_anchors());
        Ok(Episode {
            program,
            cfg,
            current: first,
            frames: Vec::new(),
            tree: ExecTree::new(),
            store,
            beliefs: BeliefState::new(),
            env,
            backend,
            config,
            mode: Mode::ActionGeneration,
            step_count: 0,
            ledger: TokenLedger::new(),
            records: Vec::new(),
            termination: None,
            done: None,
            chain_anchor: None,
            next_place: (crate::tree::ROOT, Link::Sequential),
            last_report: None,
            last_script: None,
            recovery_tries: 0,
            step_calls: Vec::new(),
        })
    }

    /// Continues an existing ledger, such as one holding the generation call.
    pub fn with_ledger(mut self, ledger: TokenLedger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn program(&self) -> &ProgramAst {
        &self.program
    }

    pub fn cfg(&self) -> &ControlFlowGraph {
        &self.cfg
    }

    pub fn tree(&self) -> &ExecTree {
        &self.tree
    }

    pub fn store(&self) -> &VariableStore {
        &self.store
    }

    pub fn beliefs(&self) -> &BeliefState {
        &self.beliefs
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.termination.as_ref()
    }

    pub fn into_parts(self) -> (E, Vec<StepRecord>, TokenLedger, ExecTree, Option<Termination>) {
        (self.env, self.records, self.ledger, self.tree, self.termination)
    }

    pub fn pc(&self) -> ProgramCounter {
        let mut call_stack = Vec::new();
        let mut loop_stack = Vec::new();
        for f in &self.frames {
            match &f.kind {
                FrameKind::Call { site, resume, .. } => {
                    call_stack.push(CallInfo { site: site.clone(), resume: resume.clone() })
                }
                FrameKind::Loop { iteration, total, .. } => loop_stack.push(LoopInfo {
                    header: f.step.clone(),
                    iteration: *iteration,
                    total: *total,
                    call_depth: call_stack.len(),
                }),
                _ => {}
            }
        }
        ProgramCounter { current: self.current.clone(), call_stack, loop_stack }
    }

    /// Runs to termination.
    pub fn run(&mut self) -> &Termination {
        while self.mode != Mode::Terminated {
            if self.step().is_err() && self.termination.is_none() {
                self.terminate(TerminationReason::Fault, "step failed".into());
            }
        }
        self.termination.as_ref().expect("terminated")
    }

    pub fn step(&mut self) -> Result<StepOutcome, InterpError> {
        if self.mode == Mode::Terminated {
            return Err(InterpError::Terminated);
        }
        if self.step_count >= self.config.max_steps {
            let max = self.config.max_steps;
            self.terminate(TerminationReason::StepBudget, format!("step budget of {max} exhausted"));
            return Err(InterpError::StepBudgetExceeded(max));
        }
        self.step_calls.clear();
        let mode = self.mode;
        let result = match mode {
            Mode::ActionGeneration => self.action_step(),
            Mode::Recovery => self.recovery_step(),
            Mode::PcUpdate => self.pc_step(),
            Mode::Terminated => unreachable!(),
        };
        self.step_count += 1;
        match result {
            Ok(mut rec) => {
                rec.ledger = core::mem::take(&mut self.step_calls);
                self.records.push(rec);
                Ok(match self.mode {
                    Mode::Terminated => StepOutcome::Terminated,
                    m => StepOutcome::Continue(m),
                })
            }
            Err(e) => {
                let reason = match e {
                    InterpError::Backend { .. } | InterpError::Reply { .. } => TerminationReason::BackendFailure,
                    _ => TerminationReason::Fault,
                };
                let mut rec = self.blank_record(mode);
                rec.note = e.to_string();
                rec.ledger = core::mem::take(&mut self.step_calls);
                self.records.push(rec);
                self.terminate(reason, e.to_string());
                Err(e)
            }
        }
    }

    fn terminate(&mut self, reason: TerminationReason, note: String) {
        self.mode = Mode::Terminated;
        if self.termination.is_none() {
            self.termination = Some(Termination { reason, note });
        }
    }

    fn blank_record(&self, mode: Mode) -> StepRecord {
        StepRecord {
            step: self.step_count.saturating_sub(1),
            mode,
            step_id: Some(self.current.clone()),
            node: None,
            context: None,
            script: None,
            report: None,
            pc_move: None,
            rejections: Vec::new(),
            beliefs: self.belief_lines(),
            ledger: Vec::new(),
            anchors: self.store.anchor_values().into_iter().collect(),
            note: String::new(),
        }
    }

    fn statement(&self) -> Statement {
        self.program.get(&self.current).expect("pc points at a statement").clone()
    }

    fn belief_lines(&self) -> Vec<String> {
        if self.config.beliefs {
            self.beliefs.render()
        } else {
            Vec::new()
        }
    }

    fn document(&self) -> ContextDocument {
        let open_loops: Vec<StepId> = self
            .frames
            .iter()
            .filter(|f| matches!(f.kind, FrameKind::Loop { .. }))
            .map(|f| f.step.clone())
            .collect();
        let beliefs = self.belief_lines();
        serialize_context(&ContextInput {
            tree: &self.tree,
            program: &self.program,
            current_step: Some(&self.current),
            open_loops: &open_loops,
            store: &self.store,
            beliefs: &beliefs,
            k: self.config.retrieval_k,
            strategy: self.config.strategy,
            static_prefix: "",
        })
    }

    fn call(&mut self, purpose: Purpose, dynamic_payload: String, inputs: Inputs) -> Result<String, InterpError> {
        let prefix = static_prefix(purpose);
        let req = BackendRequest { purpose, static_prefix: prefix.to_string(), dynamic_payload, inputs };
        let reply = self
            .backend
            .call(&req)
            .map_err(|source| InterpError::Backend { purpose, attempts: 1, source })?;
        let output = reply
            .usage
            .and_then(|u| u.completion_tokens)
            .unwrap_or(count_tokens(&reply.text) as u64);
        let entry = self.ledger.record(
            self.step_count,
            purpose,
            count_tokens(prefix) as u64,
            count_tokens(&req.dynamic_payload) as u64,
            output,
        );
        self.step_calls.push(entry);
        Ok(reply.text)
    }

    /// Asks for a script, re-querying with the parse error up to the move
    /// retry limit.
    fn query_script(&mut self, purpose: Purpose, dynamic: &str, mut inputs: Inputs) -> Result<ActionScript, InterpError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut payload = dynamic.to_string();
            for r in &inputs.rejections {
                let _ = writeln!(payload, "## Rejected reply\n{r}");
            }
            let text = self.call(purpose, payload, inputs.clone())?;
            match parse_script_reply(&text) {
                Ok(s) => return Ok(s),
                Err(source) if attempts > self.config.move_retries => {
                    return Err(InterpError::Reply { purpose, attempts, source })
                }
                Err(e) => inputs.rejections.push(e.to_string()),
            }
        }
    }

    fn loop_progress(&self, stmt: &Statement) -> Option<LoopProgress> {
        if !stmt.kind.is_loop() {
            return None;
        }
        if let Some(Frame { kind: FrameKind::Loop { iteration, total, .. }, .. }) =
            self.frames.last().filter(|f| f.step == stmt.step_id)
        {
            return Some(LoopProgress { iteration: *iteration, total: *total });
        }
        let total = self.loop_items(stmt).ok().and_then(|(total, _)| total);
        Some(LoopProgress { iteration: 0, total })
    }

    /// Iteration count and items of a loop about to be entered.
    fn loop_items(&self, stmt: &Statement) -> Result<(Option<u64>, Vec<Value>), String> {
        match &stmt.kind {
            StatementKind::ForEach { collection, .. } => {
                let v = self.store.get_var(collection).map_err(|e| e.to_string())?;
                let list = v.coerce(crate::value::ValueKind::List).map_err(|e| e.to_string())?;
                let items = list.items().unwrap_or_default();
                Ok((Some(items.len() as u64), items))
            }
            StatementKind::RepeatN { count } => {
                let n = match count {
                    RepeatCount::Literal(n) => *n,
                    RepeatCount::Var(v) => self
                        .store
                        .get_var(v)
                        .and_then(|x| x.coerce(crate::value::ValueKind::Number))
                        .ok()
                        .and_then(|x| x.as_number().and_then(Decimal::to_u64))
                        .ok_or_else(|| format!("repeat count {{{v}}} is not a whole number"))?,
                };
                Ok((Some(n), Vec::new()))
            }
            _ => Ok((None, Vec::new())),
        }
    }

    fn base_inputs(&self, stmt: &Statement, obs: &Observation) -> Inputs {
        let condition = match &stmt.kind {
            StatementKind::If { condition } | StatementKind::ElseIf { condition } | StatementKind::While { condition } => {
                Some(interpolate_partial(condition, &self.store))
            }
            _ => None,
        };
        // Control headers keep their references: a bound iterable would
        // repeat the whole list, and the condition is interpolated apart.
        let instruction = if is_control_statement(stmt) {
            stmt.text.clone()
        } else {
            interpolate_partial(&stmt.text, &self.store)
        };
        Inputs {
            step_id: Some(stmt.step_id.to_string()),
            kind: Some(stmt.kind.tag()),
            instruction: Some(instruction),
            condition,
            observation: Some(obs.clone()),
            loop_progress: self.loop_progress(stmt),
            ..Inputs::default()
        }
    }

    fn action_step(&mut self) -> Result<StepRecord, InterpError> {
        let stmt = self.statement();
        let (parent, link) = self.next_place;
        let node = self.tree.append(parent, link, self.current.clone(), stmt.kind.is_branch())?;
        match stmt.kind {
            StatementKind::If { .. } => self.chain_anchor = Some(node),
            StatementKind::ElseIf { .. } | StatementKind::Else => {}
            _ => self.chain_anchor = None,
        }
        let obs = self.env.observe();
        let inputs = self.base_inputs(&stmt, &obs);
        let mut instruction = inputs.instruction.clone().unwrap_or_default();
        if let Some(c) = &inputs.condition {
            let _ = write!(instruction, "\n## Condition\n{c}");
        }
        let dynamic = format!(
            "{}## Instruction\n{instruction}\n## Screen\n{}",
            self.document().render_dynamic(),
            obs.render()
        );
        let script = self.query_script(Purpose::GroundInstruction, &dynamic, inputs)?;
        let report = self.execute(&script, node)?;
        {
            let n = self.tree.node_mut(node).expect("node exists");
            n.action_digest = clip(&script.to_text(), DIGEST_MAX);
            n.observation_digest = report.final_observation.clone();
            n.status = report.status;
            n.note = report.note.clone();
        }
        if self.config.beliefs && report.belief_gap.is_none() && report.ok() && !script.is_empty() {
            self.propose(&stmt, &script, node)?;
        }
        self.mode = if report.belief_gap.is_some() { Mode::Recovery } else { Mode::PcUpdate };
        self.recovery_tries = 0;
        let mut rec = self.blank_record(Mode::ActionGeneration);
        rec.step = self.step_count;
        rec.node = Some(node);
        rec.context = Some(dynamic);
        rec.script = Some(script.to_text());
        rec.report = Some(report.clone());
        self.last_script = Some(script);
        self.last_report = Some(report);
        Ok(rec)
    }

    fn recovery_step(&mut self) -> Result<StepRecord, InterpError> {
        let node = self.tree.current();
        let mut rec = self.blank_record(Mode::Recovery);
        rec.step = self.step_count;
        rec.node = Some(node);
        if self.recovery_tries >= self.config.recovery_attempts {
            self.beliefs.clear_gap();
            self.mode = Mode::PcUpdate;
            rec.note = "recovery abandoned".into();
            return Ok(rec);
        }
        self.recovery_tries += 1;
        let stmt = self.statement();
        let obs = self.env.observe();
        let gap_note = self
            .beliefs
            .gap
            .as_ref()
            .map(|g| g.note.clone())
            .or_else(|| self.beliefs.recovery_note.clone())
            .unwrap_or_default();
        let mut inputs = self.base_inputs(&stmt, &obs);
        inputs.gap_note = Some(gap_note.clone());
        inputs.last_script = self.last_script.clone();
        let mut dynamic = self.document().render_dynamic();
        let _ = writeln!(dynamic, "## Belief gap\n{gap_note}\n## Screens during the failed step");
        for c in &self.tree.node(node).expect("node exists").log {
            let _ = writeln!(dynamic, "> {} -> {}\n{}", c.command, c.result, c.observation.trim_end());
        }
        let _ = write!(
            dynamic,
            "## Instruction\n{}\n## Screen\n{}",
            inputs.instruction.clone().unwrap_or_default(),
            obs.render()
        );
        let script = self.query_script(Purpose::Recover, &dynamic, inputs)?;
        let report = self.execute(&script, node)?;
        let recovered = report.ok() && report.belief_gap.is_none();
        {
            let n = self.tree.node_mut(node).expect("node exists");
            n.action_digest = clip(&format!("{} | recover: {}", n.action_digest, script.to_text()), DIGEST_MAX);
            n.observation_digest = report.final_observation.clone();
            n.note = report.note.clone();
            if recovered {
                n.status = NodeStatus::Recovered;
            }
        }
        if recovered {
            self.beliefs.clear_gap();
            if self.config.beliefs && !script.is_empty() {
                self.propose(&stmt, &script, node)?;
            }
            self.mode = Mode::PcUpdate;
            self.recovery_tries = 0;
        }
        let mut final_report = report.clone();
        if recovered {
            final_report.status = NodeStatus::Recovered;
        }
        rec.context = Some(dynamic);
        rec.script = Some(script.to_text());
        rec.report = Some(report);
        self.last_script = Some(script);
        self.last_report = Some(final_report);
        Ok(rec)
    }

    /// Runs a script against the environment, checking beliefs as it goes.
    fn execute(&mut self, script: &ActionScript, node: NodeId) -> Result<ExecutionReport, InterpError> {
        let before = self.store.anchor_values();
        let mut results = Vec::new();
        let mut status = NodeStatus::Succeeded;
        let mut note = String::new();
        let mut gap = None;
        let mut obs = self.env.observe();
        for cmd in &script.commands {
            let outcome = match cmd {
                Command::ReadScreen { into } => {
                    let items: Vec<Value> = obs.content_texts().into_iter().map(Value::Text).collect();
                    let n = items.len();
                    self.store
                        .set_var(into, Value::List(items))
                        .map(|_| format!("stored {n} item(s) in {{{into}}}"))
                        .map_err(|e| e.to_string())
                }
                Command::Assign { path, value } => self
                    .store
                    .set_var(path, value.clone())
                    .map(|_| format!("set {{{path}}}"))
                    .map_err(|e| e.to_string()),
                other => {
                    if let Command::Done { status } = other {
                        self.done = Some(status.clone());
                    }
                    self.env.apply(other).map_err(|e| e.to_string())
                }
            };
            obs = self.env.observe();
            let (ok, message) = match outcome {
                Ok(m) => (true, m),
                Err(m) => (false, m),
            };
            results.push(CommandResult {
                command: cmd.to_string(),
                ok,
                message: message.clone(),
                observation: obs.digest(),
            });
            if let Some(n) = self.tree.node_mut(node) {
                n.log.push(CommandLog { command: cmd.to_string(), result: message.clone(), observation: obs.render() });
            }
            if !ok {
                status = NodeStatus::Failed;
                note = clip(&format!("{cmd} failed: {message}"), DIGEST_MAX);
                break;
            }
            if self.config.beliefs && self.config.verify_each_command {
                if let Some(g) = self.check_beliefs(&obs, node)? {
                    gap = Some(g);
                    break;
                }
            }
        }
        if gap.is_none() && status != NodeStatus::Failed && self.config.beliefs && !self.config.verify_each_command {
            gap = self.check_beliefs(&obs, node)?;
        }
        if let Some(g) = &gap {
            status = NodeStatus::Failed;
            note = clip(&format!("belief gap: {g}"), DIGEST_MAX);
        }
        if note.is_empty() {
            note = match results.last() {
                Some(r) => clip(&r.message, DIGEST_MAX),
                None => "nothing to do".to_string(),
            };
        }
        self.log_writes(&before, node);
        Ok(ExecutionReport { commands: results, status, note, belief_gap: gap, final_observation: obs.digest() })
    }

    fn log_writes(&mut self, before: &[(String, Value)], node: NodeId) {
        let after = self.store.anchor_values();
        let changed: Vec<(String, Value)> = after.into_iter().filter(|kv| !before.contains(kv)).collect();
        if let Some(n) = self.tree.node_mut(node) {
            n.writes.extend(changed);
        }
    }

    /// Verify then align. Returns the gap note when something was refuted.
    fn check_beliefs(&mut self, obs: &Observation, node: NodeId) -> Result<Option<String>, InterpError> {
        let active: Vec<_> = self.beliefs.active().cloned().collect();
        if active.is_empty() {
            self.beliefs.verify(&[], node);
            return Ok(None);
        }
        let mut dynamic = String::from("## Hypotheses\n");
        for h in &active {
            let _ = writeln!(dynamic, "{}: {} | {}", h.id, h.subject, h.claim);
        }
        let _ = write!(dynamic, "## Screen\n{}", obs.render());
        let inputs = Inputs { observation: Some(obs.clone()), hypotheses: active, ..Inputs::default() };
        let text = self.call(Purpose::CheckBeliefs, dynamic, inputs)?;
        let verdicts = parse_verdicts_reply(&text)
            .map_err(|source| InterpError::Reply { purpose: Purpose::CheckBeliefs, attempts: 1, source })?;
        let contradictions = self.beliefs.verify(&verdicts, node);
        if self.beliefs.align(&contradictions) {
            return Ok(self.beliefs.gap.as_ref().map(|g| g.note.clone()));
        }
        Ok(None)
    }

    fn propose(&mut self, stmt: &Statement, script: &ActionScript, node: NodeId) -> Result<(), InterpError> {
        let obs = self.env.observe();
        let mut inputs = self.base_inputs(stmt, &obs);
        inputs.last_script = Some(script.clone());
        inputs.hypotheses = self.beliefs.active().cloned().collect();
        let mut dynamic = String::from("## Beliefs\n");
        for l in self.beliefs.render() {
            let _ = writeln!(dynamic, "{l}");
        }
        let _ = write!(
            dynamic,
            "## Instruction\n{}\n## Last action\n{}\n## Screen\n{}",
            inputs.instruction.clone().unwrap_or_default(),
            script.to_text(),
            obs.render()
        );
        let text = self.call(Purpose::ProposeBeliefs, dynamic, inputs)?;
        let drafts = parse_drafts_reply(&text)
            .map_err(|source| InterpError::Reply { purpose: Purpose::ProposeBeliefs, attempts: 1, source })?;
        self.beliefs.propose(&drafts, node);
        Ok(())
    }

    /// Moves the menu offers: graph edges that pass the stack discipline.
    pub fn menu(&self) -> Vec<Edge> {
        let pc = self.pc();
        let stmt = self.program.get(&self.current);
        self.cfg
            .moves(&self.current)
            .iter()
            .filter(|e| validate_pc_move(&self.cfg, &pc, e).is_ok())
            .filter(|e| match stmt {
                Some(s) if e.kind == EdgeKind::EnterBlock && s.kind.is_loop() && pc.loop_stack.last().is_none_or(|l| l.header != s.step_id) => {
                    self.loop_items(s).is_ok_and(|(total, _)| total != Some(0))
                }
                _ => true,
            })
            .cloned()
            .collect()
    }

    fn pc_step(&mut self) -> Result<StepRecord, InterpError> {
        let mut rec = self.blank_record(Mode::PcUpdate);
        rec.step = self.step_count;
        rec.node = Some(self.tree.current());
        if let Some(status) = self.done.clone() {
            let at_end = self.cfg.moves(&self.current).iter().any(|e| e.target == Target::End);
            let note = if at_end {
                format!("done({status})")
            } else {
                format!("done({status}) before the end of the program (early)")
            };
            rec.note = note.clone();
            self.terminate(TerminationReason::Done, note);
            return Ok(rec);
        }
        let menu = self.menu();
        if menu.is_empty() {
            rec.note = "no legal move".into();
            self.terminate(TerminationReason::Fault, format!("no legal move from {}", self.current));
            return Ok(rec);
        }
        let stmt = self.statement();
        let obs = self.env.observe();
        let mut inputs = self.base_inputs(&stmt, &obs);
        inputs.menu = menu.clone();
        if let Some(r) = &self.last_report {
            inputs.last_status = Some(r.status);
            inputs.last_note = Some(r.note.clone());
        }
        let mut dynamic = self.document().render_dynamic();
        if let Some(r) = &self.last_report {
            let _ = writeln!(dynamic, "## Last result\n{}: {}", r.status.as_str(), r.note);
        }
        let _ = writeln!(dynamic, "## Instruction\n{}", inputs.instruction.clone().unwrap_or_default());
        if let Some(c) = &inputs.condition {
            let _ = writeln!(dynamic, "## Condition\n{c}");
        }
        if let Some(p) = inputs.loop_progress {
            let total = p.total.map(|t| t.to_string()).unwrap_or_else(|| "?".into());
            let _ = writeln!(dynamic, "## Loop\niteration {} of {total}", p.iteration);
        }
        dynamic.push_str("## Moves\n");
        for e in &menu {
            let _ = writeln!(dynamic, "{e}");
        }
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut payload = dynamic.clone();
            for r in &inputs.rejections {
                let _ = writeln!(payload, "## Rejected move\n{r}");
            }
            let text = self.call(Purpose::UpdatePc, payload.clone(), inputs.clone())?;
            let verdict = parse_move_reply(&text)
                .map_err(|e| e.to_string())
                .and_then(|m| self.check_move(&m).map(|_| m));
            match verdict {
                Ok(m) => {
                    rec.context = Some(payload);
                    self.apply_move(&m)?;
                    rec.pc_move = Some(m);
                    rec.rejections = inputs.rejections;
                    rec.anchors = self.store.anchor_values().into_iter().collect();
                    rec.beliefs = self.belief_lines();
                    return Ok(rec);
                }
                Err(reason) => {
                    inputs.rejections.push(reason);
                    if attempts > self.config.move_retries {
                        rec.context = Some(payload);
                        rec.rejections = inputs.rejections;
                        self.terminate(TerminationReason::InvalidMove, "backend kept proposing illegal moves".into());
                        return Ok(rec);
                    }
                }
            }
        }
    }

    fn check_move(&self, m: &PcMove) -> Result<(), String> {
        let edge = m.as_edge();
        validate_pc_move(&self.cfg, &self.pc(), &edge)?;
        if !self.menu().contains(&edge) {
            return Err(format!("{edge} is not available: the loop has no items"));
        }
        for u in &m.variable_updates {
            if !crate::lang::is_var_path(&u.path) {
                return Err(format!("`{}` is not a variable path", u.path));
            }
        }
        Ok(())
    }

    /// Value of a call argument or return expression.
    fn eval(&self, raw: &str) -> Value {
        let t = raw.trim();
        if let Ok(spans) = ref_spans(t) {
            if let [(0, end, path)] = spans.as_slice() {
                if *end == t.len() {
                    return self.store.get_var(path).unwrap_or(Value::Null);
                }
            }
        }
        if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
            return Value::Text(t[1..t.len() - 1].to_string());
        }
        if let Ok(d) = t.parse::<Decimal>() {
            return Value::Number(d);
        }
        match t {
            "true" => Value::Boolean(true),
            "false" => Value::Boolean(false),
            _ => Value::Text(interpolate_partial(t, &self.store)),
        }
    }

    /// Pops frames that do not contain `target`, stopping at a call.
    /// Returns the anchor of the outermost frame popped.
    fn leave_blocks(&mut self, target: &Target) -> Option<NodeId> {
        let mut outer = None;
        while let Some(f) = self.frames.last() {
            if matches!(f.kind, FrameKind::Call { .. }) || f.contains(target) {
                break;
            }
            let f = self.frames.pop().expect("frame");
            if matches!(f.kind, FrameKind::Loop { .. }) {
                let _ = self.store.pop_loop();
            }
            outer = Some(f.anchor);
        }
        outer
    }

    fn apply_move(&mut self, m: &PcMove) -> Result<(), InterpError> {
        let prev = self.tree.current();
        let before = self.store.anchor_values();
        for u in &m.variable_updates {
            let _ = self.store.set_var(&u.path, u.value.clone());
        }
        let stmt = self.statement();
        let place = match m.edge {
            EdgeKind::Call => {
                let (args, result) = match &stmt.kind {
                    StatementKind::FunctionCall { args, result, .. } => (args.clone(), result.clone()),
                    _ => (Vec::new(), None),
                };
                let bindings: Vec<(String, Value)> = args.iter().map(|a| (a.param.clone(), self.eval(&a.value))).collect();
                self.store.push_scope(bindings);
                let resume = self.cfg.resume.get(&self.current).cloned().unwrap_or_default();
                self.frames.push(Frame {
                    step: self.current.clone(),
                    anchor: prev,
                    kind: FrameKind::Call { site: self.current.clone(), resume, result },
                });
                (prev, Link::Sequential)
            }
            EdgeKind::Return => {
                let value = match &stmt.kind {
                    StatementKind::FunctionReturns { value: Some(v) } => self.eval(v),
                    _ => Value::Null,
                };
                let mut site_anchor = prev;
                let mut result = None;
                while let Some(f) = self.frames.pop() {
                    match f.kind {
                        FrameKind::Loop { .. } => {
                            let _ = self.store.pop_loop();
                        }
                        FrameKind::Call { result: r, .. } => {
                            site_anchor = f.anchor;
                            result = r;
                            break;
                        }
                        _ => {}
                    }
                }
                let _ = self.store.pop_scope();
                if let Some(r) = result {
                    let _ = self.store.set_var(&r, value);
                }
                let outer = self.leave_blocks(&m.target);
                (outer.unwrap_or(site_anchor), Link::Sequential)
            }
            EdgeKind::EnterBlock if stmt.kind.is_loop() => {
                let item_var = match &stmt.kind {
                    StatementKind::ForEach { item, .. } => item.clone(),
                    _ => None,
                };
                let reentry = self.frames.last().is_some_and(|f| f.step == self.current);
                let item = if reentry {
                    let f = self.frames.last_mut().expect("loop frame");
                    let FrameKind::Loop { iteration, items, .. } = &mut f.kind else { unreachable!() };
                    *iteration += 1;
                    let item = items.get(*iteration as usize - 1).cloned().unwrap_or(Value::Null);
                    let _ = self.store.next_iteration(item.clone());
                    item
                } else {
                    let (total, items) = self.loop_items(&stmt).unwrap_or((None, Vec::new()));
                    let item = items.first().cloned().unwrap_or(Value::Null);
                    self.frames.push(Frame {
                        step: self.current.clone(),
                        anchor: prev,
                        kind: FrameKind::Loop { iteration: 1, total, items },
                    });
                    self.store.push_loop(item.clone());
                    item
                };
                if let Some(v) = item_var {
                    let _ = self.store.set_var(&v, item);
                }
                let anchor = self.frames.last().expect("loop frame").anchor;
                (anchor, Link::Iteration)
            }
            EdgeKind::EnterBlock => {
                self.frames.push(Frame { step: self.current.clone(), anchor: prev, kind: FrameKind::Block });
                (prev, Link::Sequential)
            }
            EdgeKind::TakeBranch => {
                let anchor = self.chain_anchor.unwrap_or(prev);
                self.frames.push(Frame { step: self.current.clone(), anchor, kind: FrameKind::Branch });
                (prev, Link::Branch)
            }
            EdgeKind::SkipBranch => {
                let outer = self.leave_blocks(&m.target);
                let into_chain = m
                    .target
                    .step()
                    .and_then(|t| self.program.get(t))
                    .is_some_and(|s| matches!(s.kind, StatementKind::ElseIf { .. } | StatementKind::Else));
                let fallback = if into_chain { prev } else { self.chain_anchor.unwrap_or(prev) };
                (outer.unwrap_or(fallback), Link::Sequential)
            }
            EdgeKind::NextSequential | EdgeKind::LoopBack | EdgeKind::ExitLoop | EdgeKind::Terminate => {
                let outer = self.leave_blocks(&m.target);
                (outer.unwrap_or(prev), Link::Sequential)
            }
        };
        self.log_writes(&before, prev);
        if self.config.beliefs {
            self.beliefs.on_pc_move();
        }
        match &m.target {
            Target::End => {
                while let Some(f) = self.frames.pop() {
                    if matches!(f.kind, FrameKind::Loop { .. }) {
                        let _ = self.store.pop_loop();
                    }
                }
                self.terminate(TerminationReason::Completed, "reached the end of the program".into());
            }
            Target::Step(t) => {
                self.current = t.clone();
                self.next_place = place;
                self.mode = Mode::ActionGeneration;
            }
        }
        Ok(())
    }
}

/// True for statements whose grounding never touches the device.
/// A generated program and the replies rejected on the way.
#[derive(Debug, Clone)]
pub struct Generated {
    pub source: String,
    pub program: ProgramAst,
    pub rejections: Vec<String>,
}

/// Asks the backend for a program, re-querying with the parse error up to
/// `retries` times. Calls are recorded at step 0.
pub fn generate_program<B: Backend + ?Sized>(
    backend: &B,
    task: &str,
    device_profile: &str,
    retries: u32,
    ledger: &mut TokenLedger,
) -> Result<Generated, InterpError> {
    let purpose = Purpose::GenerateProgram;
    let prefix = static_prefix(purpose);
    let mut rejections: Vec<String> = Vec::new();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut payload = format!("## Task\n{task}\n## Device\n{device_profile}\n");
        for r in &rejections {
            let _ = writeln!(payload, "## Rejected reply\n{r}");
        }
        let inputs = Inputs {
            task: Some(task.to_string()),
            device_profile: Some(device_profile.to_string()),
            rejections: rejections.clone(),
            ..Inputs::default()
        };
        let req = BackendRequest { purpose, static_prefix: prefix.to_string(), dynamic_payload: payload, inputs };
        let reply = backend.call(&req).map_err(|source| InterpError::Backend { purpose, attempts, source })?;
        let output = reply.usage.and_then(|u| u.completion_tokens).unwrap_or(count_tokens(&reply.text) as u64);
        ledger.record(0, purpose, count_tokens(prefix) as u64, count_tokens(&req.dynamic_payload) as u64, output);
        let parsed = crate::backend::parse_program_reply(&reply.text)
            .map_err(|e| e.to_string())
            .and_then(|src| match crate::lang::parse_program(&src) {
                Ok(p) if p.statements.is_empty() => Err("program has no statements".to_string()),
                Ok(p) => Ok((src, p)),
                Err(e) => Err(e.to_string()),
            });
        match parsed {
            Ok((source, program)) => return Ok(Generated { source, program, rejections }),
            Err(reason) if attempts > retries => return Err(InterpError::ProgramRejected { attempts, reason }),
            Err(reason) => rejections.push(reason),
        }
    }
}

pub fn is_control_statement(stmt: &Statement) -> bool {
    is_structural(&stmt.kind)
}
