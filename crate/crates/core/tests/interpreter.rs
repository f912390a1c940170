use std::sync::Mutex;

use stp_core::backend::{
    render_move_reply, render_script_reply, Backend, BackendError, BackendReply, BackendRequest, PcMove, Purpose,
};
use stp_core::interp::{
    validate_pc_move, Environment, Episode, EpisodeConfig, LoopInfo, Mode, ProgramCounter, TerminationReason,
};
use stp_core::lang::{build_cfg, Edge, EdgeKind, Target};
use stp_core::script::{ActionScript, Command};
use stp_core::sim::{Observation, SimError};
use stp_core::{count_tokens, parse_program, StepId};

#[derive(Default)]
struct Log(Vec<String>);

impl Environment for Log {
    fn apply(&mut self, command: &Command) -> Result<String, SimError> {
        if let Command::Answer { text } = command {
            self.0.push(text.clone());
        }
        Ok("ok".into())
    }

    fn observe(&self) -> Observation {
        Observation {
            foreground: "Home".into(),
            view: "home".into(),
            clock: "09:00".into(),
            elements: Vec::new(),
            scroll: None,
            dialog_title: None,
            dialog: Vec::new(),
            toast: None,
        }
    }
}

/// Answers each plain instruction with its own text and walks loops for
/// their declared count.
#[derive(Default)]
struct Walker {
    calls: Mutex<Vec<(Purpose, String, String, String)>>,
    bad_moves: bool,
}

impl Walker {
    fn reply(&self, req: &BackendRequest) -> String {
        let inputs = &req.inputs;
        match req.purpose {
            Purpose::GroundInstruction => {
                let text = inputs.instruction.clone().unwrap_or_default();
                let commands = if text.ends_with(':') { Vec::new() } else { vec![Command::Answer { text }] };
                render_script_reply(&ActionScript::new(commands))
            }
            Purpose::UpdatePc => {
                let has = |k: EdgeKind| inputs.menu.iter().find(|e| e.kind == k).cloned();
                let edge = if self.bad_moves {
                    Edge::new(EdgeKind::LoopBack, Target::Step(StepId::new("1")))
                } else if let Some(p) = inputs.loop_progress {
                    if p.total.is_some_and(|t| p.iteration >= t) {
                        has(EdgeKind::ExitLoop).unwrap()
                    } else {
                        has(EdgeKind::EnterBlock).unwrap()
                    }
                } else {
                    has(EdgeKind::LoopBack).unwrap_or_else(|| inputs.menu[0].clone())
                };
                render_move_reply(&PcMove::new(&edge))
            }
            other => panic!("unexpected {other:?} call"),
        }
    }
}

impl Backend for Walker {
    fn id(&self) -> &str {
        "walker"
    }

    fn call(&self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let text = self.reply(req);
        self.calls.lock().unwrap().push((req.purpose, req.static_prefix.clone(), req.dynamic_payload.clone(), text.clone()));
        Ok(BackendReply::new(text))
    }
}

const PROGRAM: &str = "Open the app\nRepeat 3 times:\n    Tap \"OK\"\nAnswer \"finished\"\n";

fn config() -> EpisodeConfig {
    EpisodeConfig { beliefs: false, ..EpisodeConfig::default() }
}

#[test]
fn walks_a_loop_and_completes() {
    let backend = Walker::default();
    let mut ep = Episode::new(parse_program(PROGRAM).unwrap(), Log::default(), &backend, config()).unwrap();
    assert_eq!(ep.mode(), Mode::ActionGeneration);
    assert_eq!(ep.run().reason, TerminationReason::Completed);
    assert_eq!(ep.env().0, ["Open the app", "Tap \"OK\"", "Tap \"OK\"", "Tap \"OK\"", "Answer \"finished\""]);
    let modes: Vec<Mode> = ep.records().iter().map(|r| r.mode).collect();
    assert!(modes.chunks(2).all(|c| c == [Mode::ActionGeneration, Mode::PcUpdate]), "{modes:?}");
    assert!(ep.tree().branches_well_formed());
}

#[test]
fn ledger_has_one_entry_per_call() {
    let backend = Walker::default();
    let mut ep = Episode::new(parse_program(PROGRAM).unwrap(), Log::default(), &backend, config()).unwrap();
    ep.run();
    let calls = backend.calls.lock().unwrap();
    let entries = ep.ledger().entries();
    assert_eq!(entries.len(), calls.len());
    for (e, (purpose, prefix, payload, reply)) in entries.iter().zip(calls.iter()) {
        assert_eq!(e.purpose, *purpose);
        assert_eq!(e.static_prefix_tokens, count_tokens(prefix) as u64);
        assert_eq!(e.dynamic_tokens, count_tokens(payload) as u64);
        assert_eq!(e.output_tokens, count_tokens(reply) as u64);
    }
    for p in [Purpose::GroundInstruction, Purpose::UpdatePc] {
        let mut prefixes: Vec<&str> = calls.iter().filter(|c| c.0 == p).map(|c| c.1.as_str()).collect();
        prefixes.dedup();
        assert_eq!(prefixes.len(), 1, "{p:?}");
    }
}

#[test]
fn illegal_moves_end_the_episode() {
    let backend = Walker { bad_moves: true, ..Walker::default() };
    let program = parse_program("Open the app\nAnswer \"finished\"\n").unwrap();
    let mut ep = Episode::new(program, Log::default(), &backend, config()).unwrap();
    assert_eq!(ep.run().reason, TerminationReason::InvalidMove);
    let rec = ep.records().iter().find(|r| r.mode == Mode::PcUpdate).unwrap();
    assert_eq!(rec.rejections.len() as u32, config().move_retries + 1);
}

#[test]
fn step_budget_stops_the_episode() {
    let backend = Walker::default();
    let cfg = EpisodeConfig { max_steps: 3, ..config() };
    let mut ep = Episode::new(parse_program(PROGRAM).unwrap(), Log::default(), &backend, cfg).unwrap();
    assert_eq!(ep.run().reason, TerminationReason::StepBudget);
    assert!(ep.step_count() <= 3);
}

#[test]
fn move_validation() {
    let cfg = build_cfg(&parse_program(PROGRAM).unwrap());
    let step = |s: &str| Target::Step(StepId::new(s));
    let pc = |current: &str, iteration| ProgramCounter {
        current: StepId::new(current),
        call_stack: Vec::new(),
        loop_stack: vec![LoopInfo { header: StepId::new("2"), iteration, total: Some(3), call_depth: 0 }],
    };
    let enter = Edge::new(EdgeKind::EnterBlock, step("2.1"));
    assert!(validate_pc_move(&cfg, &pc("2", 1), &enter).is_ok());
    assert!(validate_pc_move(&cfg, &pc("2", 3), &enter).is_err());
    assert!(validate_pc_move(&cfg, &pc("2.1", 1), &Edge::new(EdgeKind::LoopBack, step("2"))).is_ok());
    assert!(validate_pc_move(&cfg, &pc("2", 1), &Edge::new(EdgeKind::NextSequential, step("4"))).is_err());
    let no_loop = ProgramCounter { loop_stack: Vec::new(), ..pc("2.1", 1) };
    assert!(validate_pc_move(&cfg, &no_loop, &Edge::new(EdgeKind::LoopBack, step("2"))).is_err());
}
