//! Episode runner, trajectory files and replay.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use stp_core::backend::Backend;
use stp_core::interp::{generate_program, Episode, EpisodeConfig, Mode, StepRecord, Termination, TerminationReason};
use stp_core::ledger::{LedgerEntry, TokenLedger, TokenTotals};
use stp_core::script::ActionScript;
use stp_core::sim::{evaluate_task, Category, Evaluation, Perturbation, Scenario};
use stp_core::tree::Strategy;
use stp_core::Value;

use crate::suite::DEVICE_PROFILE;

/// Extra generation attempts after an unparseable program.
pub const GENERATION_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Format { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub scenario: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub beliefs: bool,
    pub max_steps: u64,
}

impl RunSpec {
    pub fn new(scenario: impl Into<String>, strategy: Strategy, seed: u64) -> Self {
        RunSpec { scenario: scenario.into(), strategy, seed, beliefs: true, max_steps: EpisodeConfig::default().max_steps }
    }

    pub fn config(&self) -> EpisodeConfig {
        EpisodeConfig { strategy: self.strategy, beliefs: self.beliefs, max_steps: self.max_steps, ..EpisodeConfig::default() }
    }

    /// File stem used for this run's trajectory.
    pub fn file_stem(&self) -> String {
        let b = if self.beliefs { "beliefs_on" } else { "beliefs_off" };
        format!("{}__{}__{b}__seed{}", self.scenario, self.strategy, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub scenario: String,
    pub family: String,
    pub category: Category,
    pub n: u32,
    pub seed: u64,
    pub strategy: String,
    pub backend: String,
    pub config: EpisodeConfig,
    pub perturbations: Vec<Perturbation>,
    pub scenario_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_sha256: Option<String>,
    pub generation: Vec<LedgerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generation_rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub success: bool,
    pub evaluation: Evaluation,
    pub termination: Termination,
    /// Action-generation steps.
    pub steps: u64,
    pub interpreter_steps: u64,
    pub recoveries: u64,
    pub totals: TokenTotals,
    pub by_purpose: BTreeMap<String, TokenTotals>,
    /// Dynamic tokens of each action-generation call.
    pub dynamic_series: Vec<u64>,
    pub anchors: BTreeMap<String, Value>,
    pub answers: Vec<String>,
    pub final_observation: String,
}

/// One trajectory line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Line {
    Header(Header),
    Step(StepRecord),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: Header,
    pub steps: Vec<StepRecord>,
    pub summary: Summary,
}

/// Wall-clock duration of one step. Kept out of the trajectory so that
/// reruns stay byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    /// 0 is program generation; interpreter step `k` is `k + 1`.
    pub step: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub trajectory: Trajectory,
    pub timings: Vec<StepTiming>,
}

impl Trajectory {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: Line| {
            out.push_str(&serde_json::to_string(&line).expect("trajectory serializes"));
            out.push('\n');
        };
        push(Line::Header(self.header.clone()));
        for s in &self.steps {
            push(Line::Step(s.clone()));
        }
        push(Line::Summary(self.summary.clone()));
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw)
                .map_err(|source| HarnessError::Format { path: path.to_path_buf(), line: i + 1, source })?;
            match line {
                Line::Header(h) if header.is_none() => header = Some(h),
                Line::Step(s) if header.is_some() && summary.is_none() => steps.push(s),
                Line::Summary(s) if header.is_some() && summary.is_none() => summary = Some(s),
                _ => {
                    return Err(HarnessError::Malformed {
                        path: path.to_path_buf(),
                        reason: format!("line {} is out of order", i + 1),
                    })
                }
            }
        }
        let malformed = |reason: &str| HarnessError::Malformed { path: path.to_path_buf(), reason: reason.into() };
        Ok(Trajectory {
            header: header.ok_or_else(|| malformed("no header"))?,
            steps,
            summary: summary.ok_or_else(|| malformed("no summary"))?,
        })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    /// Every ledger entry of the episode in call order.
    pub fn ledger(&self) -> Vec<LedgerEntry> {
        let mut all = self.header.generation.clone();
        all.extend(self.steps.iter().flat_map(|s| s.ledger.iter().copied()));
        all
    }
}

/// Writes a timing sidecar next to a trajectory.
pub fn write_timings(path: &Path, timings: &[StepTiming]) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for t in timings {
        let line = serde_json::to_string(t).expect("timing serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_timings(path: &Path) -> Result<Vec<StepTiming>, HarnessError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = serde_json::from_str(&line)
            .map_err(|source| HarnessError::Format { path: path.to_path_buf(), line: i + 1, source })?;
        out.push(t);
    }
    Ok(out)
}

/// Sidecar path for a trajectory path.
pub fn timing_path(trajectory: &Path) -> PathBuf {
    trajectory.with_extension("timing.jsonl")
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Runs one episode to completion. Backend and interpreter failures end the
/// episode and are recorded; they never propagate.
pub fn run_episode<B: Backend + ?Sized>(scenario: &Scenario, backend: &B, spec: &RunSpec) -> Outcome {
    let config = spec.config();
    let mut device = scenario.reset(spec.seed);
    let initial = device.data().clone();
    let mut ledger = TokenLedger::new();
    let mut timings = Vec::new();

    let started = Instant::now();
    let generated = generate_program(backend, &scenario.instruction, DEVICE_PROFILE, GENERATION_RETRIES, &mut ledger);
    timings.push(StepTiming { step: 0, wall_ms: ms(started) });

    let scenario_json = serde_json::to_string(scenario).expect("scenario serializes");
    let mut header = Header {
        scenario: scenario.id.clone(),
        family: scenario.family().to_string(),
        category: scenario.category,
        n: scenario.n,
        seed: spec.seed,
        strategy: spec.strategy.to_string(),
        backend: backend.id().to_string(),
        config,
        perturbations: scenario.perturbations.clone(),
        scenario_sha256: sha256_hex(scenario_json.as_bytes()),
        program: None,
        program_sha256: None,
        generation: ledger.entries().to_vec(),
        generation_rejections: Vec::new(),
    };

    let (steps, termination, ledger) = match generated {
        Ok(g) => {
            header.program_sha256 = Some(sha256_hex(g.source.as_bytes()));
            header.program = Some(g.source);
            header.generation_rejections = g.rejections;
            match Episode::new(g.program, &mut device, backend, config) {
                Ok(ep) => {
                    let mut ep = ep.with_ledger(ledger);
                    while ep.mode() != Mode::Terminated {
                        let t = Instant::now();
                        let _ = ep.step();
                        timings.push(StepTiming { step: ep.step_count(), wall_ms: ms(t) });
                    }
                    let (_, records, ledger, _, term) = ep.into_parts();
                    (records, term.expect("terminated episode has a reason"), ledger)
                }
                Err(e) => (Vec::new(), Termination { reason: TerminationReason::Fault, note: e.to_string() }, ledger),
            }
        }
        Err(e) => (Vec::new(), Termination { reason: TerminationReason::BackendFailure, note: e.to_string() }, ledger),
    };

    let evaluation = evaluate_task(scenario, &initial, device.state());
    let success = evaluation.success && termination.reason != TerminationReason::BackendFailure;
    let summary = Summary {
        success,
        evaluation,
        termination,
        steps: steps.iter().filter(|s| s.mode == Mode::ActionGeneration).count() as u64,
        interpreter_steps: steps.len() as u64,
        recoveries: steps.iter().filter(|s| s.mode == Mode::Recovery).count() as u64,
        totals: ledger.totals(),
        by_purpose: ledger.by_purpose().into_iter().map(|(p, t)| (p.as_str().to_string(), t)).collect(),
        dynamic_series: ledger.action_dynamic_series(),
        anchors: steps.last().map(|s| s.anchors.clone()).unwrap_or_default(),
        answers: device.state().answers.clone(),
        final_observation: device.observe().digest(),
    };
    Outcome { trajectory: Trajectory { header, steps, summary }, timings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub step: u64,
    pub command: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub commands: usize,
    pub divergences: Vec<Divergence>,
    pub final_matches: bool,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.divergences.is_empty() && self.final_matches
    }
}

/// Re-applies the recorded commands to a fresh device and compares the
/// screen digest after each one with the recorded digest.
pub fn replay(scenario: &Scenario, trajectory: &Trajectory) -> Result<ReplayReport, HarnessError> {
    let h = &trajectory.header;
    let mut device = scenario.reset_with(h.seed, h.perturbations.clone());
    let mut report = ReplayReport { commands: 0, divergences: Vec::new(), final_matches: false };
    for rec in &trajectory.steps {
        let Some(exec) = &rec.report else { continue };
        for c in &exec.commands {
            let script = ActionScript::parse(&c.command).map_err(|e| HarnessError::Malformed {
                path: PathBuf::from(&h.scenario),
                reason: format!("step {}: `{}`: {e}", rec.step, c.command),
            })?;
            for cmd in &script.commands {
                if !cmd.is_store_only() {
                    let _ = device.apply(cmd);
                }
            }
            report.commands += 1;
            let actual = device.observe().digest();
            if actual != c.observation {
                report.divergences.push(Divergence {
                    step: rec.step,
                    command: c.command.clone(),
                    expected: c.observation.clone(),
                    actual,
                });
            }
        }
    }
    report.final_matches = device.observe().digest() == trajectory.summary.final_observation;
    Ok(report)
}
