#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Mutex;

use stp::harness::Trajectory;
use stp::suite;
use stp::{run_episode, RunSpec, ScriptedBackend};
use stp_core::backend::{Backend, BackendError, BackendReply, BackendRequest, Purpose};
use stp_core::ledger::TokenTotals;
use stp_core::sim::Category;
use stp_core::tree::Strategy;
use stp_core::{count_tokens, Value};

/// One observed backend call.
#[derive(Debug, Clone)]
pub struct Call {
    pub purpose: Purpose,
    pub static_prefix: String,
    pub dynamic_payload: String,
    pub reply: Option<String>,
}

/// Wraps a backend and keeps every request and reply.
pub struct Recorder<B> {
    inner: B,
    calls: Mutex<Vec<Call>>,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Recorder { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<Call> {
        std::mem::take(&mut *self.calls.lock().unwrap())
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendReply, BackendError> {
        let reply = self.inner.call(request);
        self.calls.lock().unwrap().push(Call {
            purpose: request.purpose,
            static_prefix: request.static_prefix.clone(),
            dynamic_payload: request.dynamic_payload.clone(),
            reply: reply.as_ref().ok().map(|r| r.text.clone()),
        });
        reply
    }
}

pub fn recorder() -> Recorder<ScriptedBackend> {
    Recorder::new(suite::scripted_backend())
}

pub fn spec(scenario: &str, strategy: Strategy, seed: u64, beliefs: bool) -> RunSpec {
    let mut s = RunSpec::new(scenario, strategy, seed);
    s.beliefs = beliefs;
    s
}

pub fn run(scenario: &str, strategy: Strategy, seed: u64, beliefs: bool) -> Trajectory {
    let registry = suite::registry();
    let backend = suite::scripted_backend();
    run_episode(registry.get(scenario).unwrap(), &backend, &spec(scenario, strategy, seed, beliefs)).trajectory
}

/// How a value shows up in a rendered context: text bare, everything else as
/// compact JSON.
pub fn value_text(v: &Value) -> String {
    match serde_json::to_value(v).unwrap() {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Anchors whose final value is missing from a context after the step that
/// assigned it, plus the number of contexts checked.
pub fn anchor_violations(t: &Trajectory) -> (usize, Vec<String>) {
    let mut out = Vec::new();
    let mut checked = 0;
    for (name, fin) in &t.summary.anchors {
        if matches!(fin, Value::Null) {
            continue;
        }
        // Last step whose record does not yet hold the final value.
        let assigned = t.steps.iter().rposition(|s| s.anchors.get(name) != Some(fin)).map_or(0, |i| i + 1);
        let needle = format!("{name} = {}", value_text(fin));
        for s in t.steps.iter().skip(assigned + 1) {
            if let Some(ctx) = &s.context {
                checked += 1;
                if !ctx.contains(&needle) {
                    out.push(format!("{}: step {} lacks `{needle}`", t.header.scenario, s.step));
                }
            }
        }
    }
    (checked, out)
}

/// Differences between the per-call ledger and the episode totals.
pub fn ledger_violations(t: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    let entries = t.ledger();
    let mut sum = TokenTotals::default();
    let mut by_purpose: BTreeMap<String, TokenTotals> = BTreeMap::new();
    for e in &entries {
        let one = TokenTotals { calls: 1, static_prefix: e.static_prefix_tokens, dynamic: e.dynamic_tokens, output: e.output_tokens };
        sum += one;
        let slot = by_purpose.entry(e.purpose.as_str().to_string()).or_default();
        *slot += one;
    }
    if sum != t.summary.totals {
        out.push(format!("{}: calls sum to {sum:?}, summary says {:?}", t.header.scenario, t.summary.totals));
    }
    if by_purpose != t.summary.by_purpose {
        out.push(format!("{}: per-purpose totals differ", t.header.scenario));
    }
    let calls: Vec<u32> = entries.iter().map(|e| e.call).collect();
    if calls != (0..entries.len() as u32).collect::<Vec<_>>() {
        out.push(format!("{}: call indices are not 0..n", t.header.scenario));
    }
    let series: Vec<u64> =
        entries.iter().filter(|e| e.purpose == Purpose::GroundInstruction).map(|e| e.dynamic_tokens).collect();
    if t.summary.dynamic_series.len() > series.len() {
        out.push(format!("{}: dynamic series longer than the action calls", t.header.scenario));
    }
    out
}

/// Compares recorded calls with the ledger call by call.
pub fn recorded_call_violations(t: &Trajectory, calls: &[Call]) -> Vec<String> {
    let entries = t.ledger();
    if entries.len() != calls.len() {
        return vec![format!("{}: {} ledger entries for {} calls", t.header.scenario, entries.len(), calls.len())];
    }
    let mut out = Vec::new();
    for (e, c) in entries.iter().zip(calls) {
        let want = (
            c.purpose,
            count_tokens(&c.static_prefix) as u64,
            count_tokens(&c.dynamic_payload) as u64,
            c.reply.as_deref().map(|r| count_tokens(r) as u64),
        );
        let got = (e.purpose, e.static_prefix_tokens, e.dynamic_tokens, Some(e.output_tokens));
        if c.reply.is_none() {
            if (want.0, want.1, want.2) != (got.0, got.1, got.2) {
                out.push(format!("{}: call {} differs", t.header.scenario, e.call));
            }
        } else if want != got {
            out.push(format!("{}: call {} is {got:?}, recorded {want:?}", t.header.scenario, e.call));
        }
    }
    out
}

/// Purposes whose calls did not all share one static prefix.
pub fn prefix_violations(calls: &[Call]) -> Vec<String> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    let mut out = Vec::new();
    for c in calls {
        let first = seen.entry(c.purpose.as_str()).or_insert(&c.static_prefix);
        if *first != c.static_prefix {
            out.push(c.purpose.as_str().to_string());
        }
    }
    out.sort();
    out.dedup();
    out
}

pub fn is_compositional(t: &Trajectory) -> bool {
    t.header.category == Category::Compositional
}

/// Mean of `xs`.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
