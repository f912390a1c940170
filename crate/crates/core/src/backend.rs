//! The decision-backend contract and its textual reply formats.
//!
//! Every reply is plain text carrying one fenced block. The block's language
//! tag is informative; its body is parsed strictly per purpose:
//!
//! | purpose            | block body                                   |
//! |--------------------|----------------------------------------------|
//! | `generate_program` | STP source                                   |
//! | `ground_instruction`, `recover` | action script text               |
//! | `update_pc`        | JSON move object                             |
//! | `propose_beliefs`  | JSON array of hypothesis drafts              |
//! | `check_beliefs`    | JSON array of verdicts                       |

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Hypothesis, HypothesisDraft, Verdict};
use crate::lang::{Edge, EdgeKind, KindTag, Target};
use crate::script::{ActionScript, ScriptError};
use crate::sim::Observation;
use crate::tree::NodeStatus;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    GenerateProgram,
    GroundInstruction,
    UpdatePc,
    ProposeBeliefs,
    CheckBeliefs,
    Recover,
}

impl Purpose {
    pub const ALL: [Purpose; 6] = [
        Purpose::GenerateProgram,
        Purpose::GroundInstruction,
        Purpose::UpdatePc,
        Purpose::ProposeBeliefs,
        Purpose::CheckBeliefs,
        Purpose::Recover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::GenerateProgram => "generate_program",
            Purpose::GroundInstruction => "ground_instruction",
            Purpose::UpdatePc => "update_pc",
            Purpose::ProposeBeliefs => "propose_beliefs",
            Purpose::CheckBeliefs => "check_beliefs",
            Purpose::Recover => "recover",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Purpose::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// Language tag of the reply block.
    pub fn fence_tag(self) -> &'static str {
        match self {
            Purpose::GenerateProgram => "stp",
            Purpose::GroundInstruction | Purpose::Recover => "script",
            _ => "json",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Iteration progress of the loop whose header is current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopProgress {
    /// Iterations started so far.
    pub iteration: u64,
    /// Known iteration count (`for each`, `repeat`), if any.
    pub total: Option<u64>,
}

/// Purpose-specific structured fields. Unused fields stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindTag>,
    /// Current statement text with bound references substituted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Interpolated condition of an if / else-if / while.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub menu: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_progress: Option<LoopProgress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_status: Option<NodeStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_script: Option<ActionScript>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hypotheses: Vec<Hypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_note: Option<String>,
    /// Reasons earlier replies to this request were rejected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub purpose: Purpose,
    pub static_prefix: String,
    pub dynamic_payload: String,
    pub inputs: Inputs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendReply {
    pub text: String,
    #[serde(default)]
    pub usage: Option<Usage>,
}

impl BackendReply {
    pub fn new(text: impl Into<String>) -> Self {
        BackendReply { text: text.into(), usage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no rule matches this {purpose} request: {detail}")]
    NoRule { purpose: Purpose, detail: String },
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Worth retrying with the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::RateLimited | BackendError::Transport(_))
    }
}

/// A decision maker. Implementations must be callable from many episodes
/// at once.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn call(&self, request: &BackendRequest) -> Result<BackendReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendReply, BackendError> {
        (**self).call(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyError {
    #[error("reply has no fenced block")]
    NoFence,
    #[error("reply block is not valid JSON for {purpose}: {reason}")]
    Json { purpose: Purpose, reason: String },
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

/// Body of the first fenced block.
pub fn extract_block(text: &str) -> Result<&str, ReplyError> {
    let start = text.find("```").ok_or(ReplyError::NoFence)?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).ok_or(ReplyError::NoFence)?;
    let body = &after[body_start..];
    let end = body.find("```").ok_or(ReplyError::NoFence)?;
    Ok(body[..end].trim_end_matches(['\n', '\r']))
}

/// Wraps a body in a fenced block.
pub fn fence(purpose: Purpose, body: &str) -> String {
    let mut out = format!("```{}\n{}", purpose.fence_tag(), body);
    if !body.is_empty() && !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableUpdate {
    pub path: String,
    pub value: Value,
}

/// A proposed program-counter transition.
#[derive(Debug, Clone, PartialEq)]
pub struct PcMove {
    pub edge: EdgeKind,
    pub target: Target,
    pub variable_updates: Vec<VariableUpdate>,
    pub note: String,
}

#[derive(Serialize, Deserialize)]
struct MoveWire {
    edge: String,
    target: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    variable_updates: Vec<VariableUpdate>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    note: String,
}

impl PcMove {
    pub fn new(edge: &Edge) -> Self {
        PcMove { edge: edge.kind, target: edge.target.clone(), variable_updates: Vec::new(), note: String::new() }
    }

    pub fn as_edge(&self) -> Edge {
        Edge::new(self.edge, self.target.clone())
    }

    pub fn to_json(&self) -> String {
        let wire = MoveWire {
            edge: self.edge.as_str().to_string(),
            target: self.target.to_string(),
            variable_updates: self.variable_updates.clone(),
            note: self.note.clone(),
        };
        serde_json::to_string(&wire).expect("move serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReplyError> {
        let wire: MoveWire = serde_json::from_str(text)
            .map_err(|e| ReplyError::Json { purpose: Purpose::UpdatePc, reason: e.to_string() })?;
        let edge = EdgeKind::parse(&wire.edge).ok_or(ReplyError::UnknownEdge(wire.edge))?;
        Ok(PcMove {
            edge,
            target: Target::parse(&wire.target),
            variable_updates: wire.variable_updates,
            note: wire.note,
        })
    }
}

impl Serialize for PcMove {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MoveWire {
            edge: self.edge.as_str().to_string(),
            target: self.target.to_string(),
            variable_updates: self.variable_updates.clone(),
            note: self.note.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PcMove {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = MoveWire::deserialize(d)?;
        let edge = EdgeKind::parse(&wire.edge)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown edge `{}`", wire.edge)))?;
        Ok(PcMove { edge, target: Target::parse(&wire.target), variable_updates: wire.variable_updates, note: wire.note })
    }
}

fn json<T: serde::de::DeserializeOwned>(purpose: Purpose, body: &str) -> Result<T, ReplyError> {
    serde_json::from_str(body).map_err(|e| ReplyError::Json { purpose, reason: e.to_string() })
}

pub fn parse_program_reply(text: &str) -> Result<String, ReplyError> {
    Ok(extract_block(text)?.to_string())
}

pub fn parse_script_reply(text: &str) -> Result<ActionScript, ReplyError> {
    let script = ActionScript::parse(extract_block(text)?)?;
    script.validate()?;
    Ok(script)
}

pub fn parse_move_reply(text: &str) -> Result<PcMove, ReplyError> {
    PcMove::from_json(extract_block(text)?)
}

pub fn parse_drafts_reply(text: &str) -> Result<Vec<HypothesisDraft>, ReplyError> {
    json(Purpose::ProposeBeliefs, extract_block(text)?)
}

pub fn parse_verdicts_reply(text: &str) -> Result<Vec<Verdict>, ReplyError> {
    json(Purpose::CheckBeliefs, extract_block(text)?)
}

pub fn render_script_reply(script: &ActionScript) -> String {
    let mut body = String::new();
    if !script.rationale.is_empty() {
        body.push_str("# ");
        body.push_str(&script.rationale);
        body.push('\n');
    }
    body.push_str(&script.to_text());
    fence(Purpose::GroundInstruction, &body)
}

pub fn render_move_reply(m: &PcMove) -> String {
    fence(Purpose::UpdatePc, &m.to_json())
}

pub fn render_drafts_reply(drafts: &[HypothesisDraft]) -> String {
    fence(Purpose::ProposeBeliefs, &serde_json::to_string(drafts).expect("drafts serialize"))
}

pub fn render_verdicts_reply(verdicts: &[Verdict]) -> String {
    fence(Purpose::CheckBeliefs, &serde_json::to_string(verdicts).expect("verdicts serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Judgment;
    use crate::lang::StepId;

    #[test]
    fn fence_round_trip() {
        let t = fence(Purpose::GenerateProgram, "a\nb");
        assert_eq!(t, "```stp\na\nb\n```\n");
        assert_eq!(extract_block(&t).unwrap(), "a\nb");
        assert_eq!(extract_block("x ```json\n[]\n``` ```json\n{}\n```").unwrap(), "[]");
        assert_eq!(extract_block("no fence"), Err(ReplyError::NoFence));
        assert_eq!(extract_block("```script\n```").unwrap(), "");
    }

    #[test]
    fn move_round_trip() {
        let mut m = PcMove::new(&Edge::new(EdgeKind::ExitLoop, Target::Step(StepId::new("3"))));
        m.variable_updates.push(VariableUpdate { path: "x.y".into(), value: Value::from(2i64) });
        let back = parse_move_reply(&render_move_reply(&m)).unwrap();
        assert_eq!(back, m);
        let end = PcMove::new(&Edge::new(EdgeKind::Terminate, Target::End));
        assert_eq!(parse_move_reply(&render_move_reply(&end)).unwrap(), end);
        assert!(matches!(
            parse_move_reply("```json\n{\"edge\":\"Jump\",\"target\":\"1\"}\n```"),
            Err(ReplyError::UnknownEdge(_))
        ));
    }

    #[test]
    fn script_reply() {
        let s = ActionScript::parse("start_app(\"Markor\"); click(\"todo.md\")").unwrap();
        assert_eq!(parse_script_reply(&render_script_reply(&s)).unwrap().commands, s.commands);
        assert!(parse_script_reply("```script\ndone(); back()\n```").is_err());
        assert!(parse_script_reply("```script\n```").unwrap().is_empty());
    }

    #[test]
    fn belief_replies() {
        let d = alloc::vec![HypothesisDraft::assert("s", "c")];
        assert_eq!(parse_drafts_reply(&render_drafts_reply(&d)).unwrap(), d);
        let v = alloc::vec![Verdict { id: 1, judgment: Judgment::Unobservable, evidence: String::new() }];
        assert_eq!(parse_verdicts_reply(&render_verdicts_reply(&v)).unwrap(), v);
        assert!(parse_verdicts_reply("```json\n{}\n```").is_err());
    }
}
