use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use stp::harness::{replay, run_episode, timing_path, write_timings, RunSpec, Trajectory};
use stp::http::{HttpBackend, HttpConfig};
use stp::report::{curve_csv, growth_curve, load_trajectories, run_specs, write_suite, Report, SuiteConfig};
use stp::suite;
use stp_core::backend::Backend;
use stp_core::lang::build_cfg;
use stp_core::tree::Strategy;

#[derive(Parser)]
#[command(name = "stp", version, about = "Run and inspect semantic task program episodes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and write its trajectory.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "program_guided")]
        strategy: Strategy,
        /// `scripted` or `http`.
        #[arg(long, default_value = "scripted")]
        backend: String,
        /// JSON file with the HTTP backend settings.
        #[arg(long)]
        backend_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "on")]
        belief: Toggle,
        #[arg(long, default_value_t = 200)]
        max_steps: u64,
        /// Trajectory output; defaults to `<scenario>__<strategy>__...jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a suite described by a JSON config.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Re-apply a trajectory's commands and compare screen digests.
    Replay {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Summarise trajectories (a file or a directory).
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Parse a program and print its statements and control-flow graph.
    Parse {
        #[arg(long)]
        stp: PathBuf,
    },
    /// Per-step dynamic-token curve across seeds, as CSV.
    Curve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the first N action steps.
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn make_backend(kind: &str, http: Option<HttpConfig>) -> Result<Box<dyn Backend>> {
    match kind {
        "scripted" => Ok(Box::new(suite::scripted_backend())),
        "http" => {
            let config = http.context("the http backend needs a configuration")?;
            Ok(Box::new(HttpBackend::new(config)?))
        }
        other => bail!("unknown backend `{other}` (expected scripted or http)"),
    }
}

fn read_http_config(path: &Path) -> Result<HttpConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    match run(Cli::parse().command) {
        // The reader went away (e.g. piped into `head`).
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}

fn run(command: Cmd) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Cmd::Run { scenario, strategy, backend, backend_config, seed, belief, max_steps, out } => {
            let registry = suite::registry();
            let sc = registry.get(&scenario)?;
            let http = backend_config.as_deref().map(read_http_config).transpose()?;
            let backend = make_backend(&backend, http)?;
            let spec = RunSpec { scenario, strategy, seed, beliefs: belief == Toggle::On, max_steps };
            let outcome = run_episode(sc, &*backend, &spec);
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", spec.file_stem())));
            outcome.trajectory.write(&path)?;
            write_timings(&timing_path(&path), &outcome.timings)?;
            let s = &outcome.trajectory.summary;
            println!(
                "{} success={} steps={} termination={:?} passed={}/{} tokens={}",
                path.display(),
                s.success,
                s.steps,
                s.termination.reason,
                s.evaluation.passed,
                s.evaluation.total,
                s.totals.all()
            );
        }
        Cmd::Suite { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = SuiteConfig::from_json(&text)?;
            let registry = suite::registry();
            let specs = cfg.specs(&registry)?;
            let backend = make_backend(&cfg.backend, cfg.http.clone())?;
            let workers = cfg.workers.unwrap_or(if cfg.scenarios.is_empty() { registry.len() } else { cfg.scenarios.len() });
            let outcomes = run_specs(&registry, &*backend, &specs, workers);
            let report = write_suite(&out, &specs, &outcomes)?;
            for c in &report.categories {
                println!(
                    "{:?} {} beliefs={} success={}/{} avg_steps={:.1}",
                    c.category, c.strategy, c.beliefs, c.successes, c.episodes, c.avg_steps
                );
            }
            println!("wrote {} trajectories to {}", outcomes.len(), out.display());
        }
        Cmd::Replay { trajectory } => {
            let t = Trajectory::read(&trajectory)?;
            let registry = suite::registry();
            let sc = registry.get(&t.header.scenario)?;
            let r = replay(sc, &t)?;
            for d in &r.divergences {
                println!("step {}: `{}` expected {} got {}", d.step, d.command, d.expected, d.actual);
            }
            println!("{} commands replayed, {} divergences", r.commands, r.divergences.len());
            if !r.ok() {
                bail!("replay diverged");
            }
        }
        Cmd::Report { input, format } => {
            let report = Report::from_trajectories(&load_trajectories(&input)?);
            match format {
                Format::Json => write!(stdout, "{}", report.to_json())?,
                Format::Csv => write!(stdout, "{}", report.to_csv()?)?,
            }
        }
        Cmd::Parse { stp } => {
            let src = std::fs::read_to_string(&stp).with_context(|| format!("reading {}", stp.display()))?;
            let program = stp_core::parse_program(&src)?;
            for s in program.all_statements() {
                writeln!(stdout, "{:<8} {:<16} {}", s.step_id.as_str(), s.kind.tag().as_str(), s.text)?;
            }
            writeln!(stdout)?;
            write!(stdout, "{}", build_cfg(&program).render())?;
        }
        Cmd::Curve { input, out, steps } => {
            let rows = growth_curve(&load_trajectories(&input)?, steps)?;
            std::fs::write(&out, curve_csv(&rows)?).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}
