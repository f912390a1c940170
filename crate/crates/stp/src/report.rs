//! Suite runs, aggregate reports and token-growth curves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use stp_core::backend::Backend;
use stp_core::interp::{EpisodeConfig, TerminationReason};
use stp_core::ledger::TokenTotals;
use stp_core::sim::{Category, ScenarioRegistry};
use stp_core::tree::Strategy;

use crate::harness::{run_episode, timing_path, write_timings, HarnessError, Outcome, RunSpec, Trajectory};
use crate::http::HttpConfig;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Strategy(#[from] stp_core::tree::StrategyParseError),
    #[error("suite config: {0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("trajectories span several scenario families: {0:?}")]
    MixedScenarioFamilies(Vec<String>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn default_beliefs() -> Vec<bool> {
    vec![true]
}

fn default_backend() -> String {
    "scripted".into()
}

/// A suite run: the cross product of scenarios, strategies, belief
/// settings and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Empty means every registered scenario.
    #[serde(default)]
    pub scenarios: Vec<String>,
    /// `program_guided`, `full_history` or `sliding_window_<k>`.
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    /// `scripted` or `http`.
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
    /// Belief-tracking settings to run (the ablation axis).
    #[serde(default = "default_beliefs")]
    pub beliefs: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Worker threads; defaults to the number of scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self, SuiteError> {
        serde_json::from_str(text).map_err(|e| SuiteError::Config(e.to_string()))
    }

    /// Run specs in a fixed order, validated against `registry`.
    pub fn specs(&self, registry: &ScenarioRegistry) -> Result<Vec<RunSpec>, SuiteError> {
        let scenarios: Vec<String> = if self.scenarios.is_empty() {
            registry.iter().map(|s| s.id.clone()).collect()
        } else {
            self.scenarios.clone()
        };
        for id in &scenarios {
            registry.get(id).map_err(|_| SuiteError::UnknownScenario(id.clone()))?;
        }
        let strategies = self.strategies.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>, _>>()?;
        let max_steps = self.max_steps.unwrap_or(EpisodeConfig::default().max_steps);
        let mut specs = Vec::new();
        for scenario in &scenarios {
            for &strategy in &strategies {
                for &beliefs in &self.beliefs {
                    for &seed in &self.seeds {
                        specs.push(RunSpec { scenario: scenario.clone(), strategy, seed, beliefs, max_steps });
                    }
                }
            }
        }
        Ok(specs)
    }
}

/// Runs every spec on a pool of `workers` threads. Results keep spec order.
pub fn run_specs<B: Backend + ?Sized>(registry: &ScenarioRegistry, backend: &B, specs: &[RunSpec], workers: usize) -> Vec<Outcome> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Outcome>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let scenario = registry.get(&spec.scenario).expect("specs are validated");
                let outcome = run_episode(scenario, backend, spec);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every spec ran"))
        .collect()
}

pub fn run_suite<B: Backend + ?Sized>(
    config: &SuiteConfig,
    registry: &ScenarioRegistry,
    backend: &B,
) -> Result<Vec<Outcome>, SuiteError> {
    let specs = config.specs(registry)?;
    let workers = config.workers.unwrap_or_else(|| {
        if config.scenarios.is_empty() {
            registry.len()
        } else {
            config.scenarios.len()
        }
    });
    Ok(run_specs(registry, backend, &specs, workers))
}

/// Writes trajectories, timing sidecars and the report into `dir`.
pub fn write_suite(dir: &Path, specs: &[RunSpec], outcomes: &[Outcome]) -> Result<Report, SuiteError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    for (spec, o) in specs.iter().zip(outcomes) {
        let path = dir.join(format!("{}.jsonl", spec.file_stem()));
        o.trajectory.write(&path)?;
        write_timings(&timing_path(&path), &o.timings)?;
    }
    let trajectories: Vec<Trajectory> = outcomes.iter().map(|o| o.trajectory.clone()).collect();
    let report = Report::from_trajectories(&trajectories);
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, report.to_json()).map_err(|source| HarnessError::Io { path: json_path, source })?;
    let csv_path = dir.join("report.csv");
    let csv = report.to_csv()?;
    std::fs::write(&csv_path, csv).map_err(|source| HarnessError::Io { path: csv_path, source })?;
    Ok(report)
}

/// Trajectory files under `path` (a file or a directory), sorted by name.
pub fn trajectory_files(path: &Path) -> Result<Vec<PathBuf>, SuiteError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io)? {
        let p = entry.map_err(io)?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".jsonl") && !name.ends_with(".timing.jsonl") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, SuiteError> {
    trajectory_files(path)?.iter().map(|p| Trajectory::read(p).map_err(SuiteError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario: String,
    pub family: String,
    pub category: Category,
    pub n: u32,
    pub strategy: String,
    pub beliefs: bool,
    pub seed: u64,
    pub success: bool,
    pub passed: usize,
    pub total: usize,
    pub steps: u64,
    pub interpreter_steps: u64,
    pub recoveries: u64,
    pub termination: TerminationReason,
    pub tokens: TokenTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub strategy: String,
    pub beliefs: bool,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean steps over every attempt.
    pub avg_steps: f64,
    /// Mean steps over successful attempts only.
    pub avg_steps_successful: Option<f64>,
    pub tokens: TokenTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub scenario: String,
    pub strategy: String,
    pub beliefs: bool,
    pub seed: u64,
    pub dynamic: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: Vec<EpisodeRow>,
    pub categories: Vec<CategoryRow>,
    pub series: Vec<SeriesRow>,
    pub totals: TokenTotals,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Report {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        let episodes: Vec<EpisodeRow> = trajectories
            .iter()
            .map(|t| {
                let (h, s) = (&t.header, &t.summary);
                EpisodeRow {
                    scenario: h.scenario.clone(),
                    family: h.family.clone(),
                    category: h.category,
                    n: h.n,
                    strategy: h.strategy.clone(),
                    beliefs: h.config.beliefs,
                    seed: h.seed,
                    success: s.success,
                    passed: s.evaluation.passed,
                    total: s.evaluation.total,
                    steps: s.steps,
                    interpreter_steps: s.interpreter_steps,
                    recoveries: s.recoveries,
                    termination: s.termination.reason,
                    tokens: s.totals,
                }
            })
            .collect();
        let mut groups: BTreeMap<(Category, String, bool), Vec<&EpisodeRow>> = BTreeMap::new();
        for e in &episodes {
            groups.entry((e.category, e.strategy.clone(), e.beliefs)).or_default().push(e);
        }
        let categories = groups
            .into_iter()
            .map(|((category, strategy, beliefs), rows)| {
                let successes = rows.iter().filter(|r| r.success).count();
                CategoryRow {
                    category,
                    strategy,
                    beliefs,
                    episodes: rows.len(),
                    successes,
                    success_rate: successes as f64 / rows.len() as f64,
                    avg_steps: mean(rows.iter().map(|r| r.steps as f64)).unwrap_or(0.0),
                    avg_steps_successful: mean(rows.iter().filter(|r| r.success).map(|r| r.steps as f64)),
                    tokens: rows.iter().map(|r| r.tokens).sum(),
                }
            })
            .collect();
        let series = trajectories
            .iter()
            .map(|t| SeriesRow {
                scenario: t.header.scenario.clone(),
                strategy: t.header.strategy.clone(),
                beliefs: t.header.config.beliefs,
                seed: t.header.seed,
                dynamic: t.summary.dynamic_series.clone(),
            })
            .collect();
        let totals = episodes.iter().map(|e| e.tokens).sum();
        Report { episodes, categories, series, totals }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per episode.
    pub fn to_csv(&self) -> Result<String, SuiteError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario",
            "family",
            "category",
            "n",
            "strategy",
            "beliefs",
            "seed",
            "success",
            "passed",
            "total",
            "steps",
            "interpreter_steps",
            "recoveries",
            "termination",
            "calls",
            "static_prefix_tokens",
            "dynamic_tokens",
            "output_tokens",
        ])?;
        for e in &self.episodes {
            let termination = serde_json::to_value(e.termination).expect("serializes");
            w.write_record([
                e.scenario.clone(),
                e.family.clone(),
                format!("{:?}", e.category).to_lowercase(),
                e.n.to_string(),
                e.strategy.clone(),
                e.beliefs.to_string(),
                e.seed.to_string(),
                e.success.to_string(),
                e.passed.to_string(),
                e.total.to_string(),
                e.steps.to_string(),
                e.interpreter_steps.to_string(),
                e.recoveries.to_string(),
                termination.as_str().unwrap_or_default().to_string(),
                e.tokens.calls.to_string(),
                e.tokens.static_prefix.to_string(),
                e.tokens.dynamic.to_string(),
                e.tokens.output.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| SuiteError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// 1-based action-generation step.
    pub step: usize,
    pub strategy: String,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

/// Per-step dynamic-token statistics across seeds, one row per strategy and
/// step, up to `max_step` steps. All trajectories must share a family.
pub fn growth_curve(trajectories: &[Trajectory], max_step: Option<usize>) -> Result<Vec<CurveRow>, SuiteError> {
    let mut families: Vec<String> = trajectories.iter().map(|t| t.header.family.clone()).collect();
    families.sort();
    families.dedup();
    if families.len() > 1 {
        return Err(SuiteError::MixedScenarioFamilies(families));
    }
    let mut by_strategy: BTreeMap<&str, Vec<&[u64]>> = BTreeMap::new();
    for t in trajectories {
        by_strategy.entry(&t.header.strategy).or_default().push(&t.summary.dynamic_series);
    }
    let mut rows = Vec::new();
    for (strategy, series) in by_strategy {
        let longest = series.iter().map(|s| s.len()).max().unwrap_or(0);
        let last = max_step.map_or(longest, |m| m.min(longest));
        for i in 0..last {
            let values: Vec<u64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
            rows.push(CurveRow {
                step: i + 1,
                strategy: strategy.to_string(),
                mean: values.iter().sum::<u64>() as f64 / values.len() as f64,
                min: values.iter().copied().min().unwrap_or(0),
                max: values.iter().copied().max().unwrap_or(0),
            });
        }
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow]) -> Result<String, SuiteError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SuiteError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
