//! Deterministic backend driven by a rule table.
//!
//! Rules read only the structured inputs of a request, never the context
//! payload, so every context strategy sees the same decisions.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use thiserror::Error;

use stp_core::backend::{
    render_drafts_reply, render_move_reply, render_script_reply, render_verdicts_reply, fence, Backend,
    BackendError, BackendReply, BackendRequest, Inputs, PcMove, Purpose,
};
use stp_core::belief::{DraftOp, HypothesisDraft, Judgment, Verdict};
use stp_core::lang::{is_var_path, Edge, EdgeKind, KindTag};
use stp_core::script::{ActionScript, Command};
use stp_core::sim::{parse_date, this_weekday, ElementKind, Observation};
use stp_core::template::{fill_template, get, match_template, Captures};
use stp_core::Decimal;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule table is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule `{rule}`: {reason}")]
    Invalid { rule: String, reason: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum When {
    Visible(String),
    NotVisible(String),
    Foreground(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// The menu's only move.
    OnlyMove,
    /// Enter while iterations remain, else exit.
    IterateByCount,
    /// Take the branch iff the interpolated condition holds.
    BranchByCondition,
    /// Enter the body iff the interpolated condition holds.
    WhileByCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    Foreground,
    FieldValue,
    Unobservable,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftTemplate {
    #[serde(default)]
    pub op: DraftOp,
    pub subject: String,
    #[serde(default)]
    pub claim: Option<String>,
    #[serde(default)]
    pub gap_note: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub purpose: Purpose,
    #[serde(default)]
    pub kinds: Vec<KindTag>,
    /// Template over the purpose's subject text (task, instruction, claim or
    /// gap note).
    #[serde(default)]
    pub pattern: Option<String>,
    #[serde(default)]
    pub when: Vec<When>,
    /// Extra holes computed from captures: `name -> "function:argument"`.
    #[serde(default)]
    pub derive: BTreeMap<String, String>,
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub script: Option<String>,
    /// Append the input commands of the failed script.
    #[serde(default)]
    pub replay_inputs: bool,
    #[serde(default)]
    pub policy: Option<Policy>,
    #[serde(default)]
    pub beliefs: Option<Vec<DraftTemplate>>,
    #[serde(default)]
    pub judge: Option<Judge>,
    #[serde(default)]
    pub fail: Option<String>,
}

impl Rule {
    /// Matches anything its purpose offers.
    pub fn is_catch_all(&self) -> bool {
        self.pattern.is_none() && self.kinds.is_empty() && self.when.is_empty()
    }

    fn check(&self) -> Result<(), String> {
        let responses = [
            self.program.is_some(),
            self.script.is_some(),
            self.policy.is_some(),
            self.beliefs.is_some(),
            self.judge.is_some(),
            self.fail.is_some(),
        ];
        if responses.iter().filter(|r| **r).count() != 1 {
            return Err("needs exactly one of program, script, policy, beliefs, judge, fail".into());
        }
        if self.fail.is_some() {
            return Ok(());
        }
        let ok = match self.purpose {
            Purpose::GenerateProgram => self.program.is_some(),
            Purpose::GroundInstruction | Purpose::Recover => self.script.is_some(),
            Purpose::UpdatePc => self.policy.is_some(),
            Purpose::ProposeBeliefs => self.beliefs.is_some(),
            Purpose::CheckBeliefs => self.judge.is_some(),
        };
        if !ok {
            return Err(format!("response does not fit purpose {}", self.purpose));
        }
        for spec in self.derive.values() {
            derive_fn(spec).map_err(|e| format!("derive `{spec}`: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    rules: Vec<Rule>,
}

/// Ordered rules; the first match wins.
#[derive(Debug)]
pub struct RuleTable {
    rules: Vec<Rule>,
    hits: Vec<AtomicU64>,
}

impl RuleTable {
    /// Parses a rule file. `programs` resolves `program` file names to source.
    pub fn from_json(text: &str, programs: impl Fn(&str) -> Option<String>) -> Result<Self, RuleError> {
        let file: RuleFile = serde_json::from_str(text)?;
        let mut rules = file.rules;
        let mut seen = std::collections::BTreeSet::new();
        for r in &mut rules {
            let invalid = |reason: String| RuleError::Invalid { rule: r.id.clone(), reason };
            if !seen.insert(r.id.clone()) {
                return Err(invalid("duplicate id".into()));
            }
            r.check().map_err(invalid)?;
            if let Some(name) = &r.program {
                let src = programs(name).ok_or_else(|| invalid(format!("unknown program `{name}`")))?;
                r.program = Some(src);
            }
        }
        let hits = rules.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(RuleTable { rules, hits })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Times each rule has fired, in table order.
    pub fn hits(&self) -> Vec<(String, u64)> {
        self.rules
            .iter()
            .zip(&self.hits)
            .map(|(r, h)| (r.id.clone(), h.load(Ordering::Relaxed)))
            .collect()
    }

    /// Ids of specific (non catch-all) rules that never fired.
    pub fn unfired(&self) -> Vec<String> {
        self.rules
            .iter()
            .zip(&self.hits)
            .filter(|(r, h)| !r.is_catch_all() && h.load(Ordering::Relaxed) == 0)
            .map(|(r, _)| r.id.clone())
            .collect()
    }

    /// First rule of `purpose` that accepts `subject`, with its captures.
    fn find(&self, purpose: Purpose, subject: &str, inputs: &Inputs) -> Option<(usize, Captures)> {
        for (i, r) in self.rules.iter().enumerate() {
            if r.purpose != purpose {
                continue;
            }
            if !r.kinds.is_empty() && !inputs.kind.is_some_and(|k| r.kinds.contains(&k)) {
                continue;
            }
            let mut caps = match &r.pattern {
                Some(p) => match match_template(p, subject) {
                    Some(c) => c,
                    None => continue,
                },
                None => Captures::new(),
            };
            for (_, v) in caps.iter_mut() {
                *v = unbrace(v);
            }
            if !r.when.iter().all(|w| holds(w, &caps, inputs.observation.as_ref())) {
                continue;
            }
            let mut ok = true;
            for (name, spec) in &r.derive {
                match derive(spec, &caps, inputs) {
                    Some(v) => caps.push((name.clone(), v)),
                    None => ok = false,
                }
            }
            if ok {
                return Some((i, caps));
            }
        }
        None
    }

    fn hit(&self, i: usize) {
        self.hits[i].fetch_add(1, Ordering::Relaxed);
    }
}

/// `{name}` left by an unbound reference becomes `name`.
fn unbrace(v: &str) -> String {
    let t = v.trim();
    match t.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
        Some(inner) if is_var_path(inner) => inner.to_string(),
        _ => v.to_string(),
    }
}

fn holds(w: &When, caps: &Captures, obs: Option<&Observation>) -> bool {
    let fill = |s: &str| fill_template(s, caps);
    match w {
        When::Visible(s) => obs.is_some_and(|o| o.is_visible(&fill(s))),
        When::NotVisible(s) => obs.is_some_and(|o| !o.is_visible(&fill(s))),
        When::Foreground(s) => obs.is_some_and(|o| o.foreground.eq_ignore_ascii_case(&fill(s))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeriveFn {
    FirstText,
    LastWord,
    ButLastWord,
    SumAmounts,
    WeekdayDate,
}

fn derive_fn(spec: &str) -> Result<(DeriveFn, &str), String> {
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let f = match name {
        "first_text" => DeriveFn::FirstText,
        "last_word" => DeriveFn::LastWord,
        "but_last_word" => DeriveFn::ButLastWord,
        "sum_amounts" => DeriveFn::SumAmounts,
        "weekday_date" => DeriveFn::WeekdayDate,
        other => return Err(format!("unknown function `{other}`")),
    };
    if f != DeriveFn::FirstText && arg.is_empty() {
        return Err("missing argument".into());
    }
    Ok((f, arg))
}

/// Items of a list written either as JSON or one per line.
fn list_items(text: &str) -> Vec<String> {
    if let Ok(items) = serde_json::from_str::<Vec<String>>(text) {
        return items;
    }
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

fn derive(spec: &str, caps: &Captures, inputs: &Inputs) -> Option<String> {
    let (f, arg) = derive_fn(spec).ok()?;
    let value = get(caps, arg);
    match f {
        DeriveFn::FirstText => inputs
            .observation
            .as_ref()?
            .elements
            .iter()
            .find(|e| e.kind == ElementKind::Text)
            .map(|e| e.text.clone()),
        DeriveFn::LastWord => value?.trim().rsplit_once(' ').map(|(_, w)| w.to_string()),
        DeriveFn::ButLastWord => value?.trim().rsplit_once(' ').map(|(rest, _)| rest.trim().to_string()),
        DeriveFn::SumAmounts => {
            let mut total = Decimal::zero();
            for line in list_items(value?) {
                let (_, amount) = line.rsplit_once(' ')?;
                total = total + amount.trim_start_matches('$').parse::<Decimal>().ok()?;
            }
            Some(total.to_string())
        }
        DeriveFn::WeekdayDate => {
            let day: chrono::Weekday = value?.trim().parse().ok()?;
            let clock = &inputs.observation.as_ref()?.clock;
            let today = clock.split_whitespace().find(|t| parse_date(t).is_some())?;
            this_weekday(today, day)
        }
    }
}

/// Quotes a value for use inside a script string literal.
fn escape(v: &str) -> String {
    let json = serde_json::to_string(v).expect("string serializes");
    json[1..json.len() - 1].to_string()
}

/// Truth of an interpolated condition, if the phrasing is understood.
pub fn eval_condition(text: &str) -> Option<bool> {
    let t = text.trim().trim_end_matches(':').trim();
    match t.to_ascii_lowercase().as_str() {
        "true" => return Some(true),
        "false" => return Some(false),
        _ => {}
    }
    if let Some(c) = match_template("{a} starts with \"{b}\"", t) {
        let (a, b) = (get(&c, "a")?.to_ascii_lowercase(), get(&c, "b")?.to_ascii_lowercase());
        return Some(a.starts_with(&b));
    }
    if let Some(c) = match_template("{a} contains \"{b}\"", t) {
        let (a, b) = (get(&c, "a")?.to_ascii_lowercase(), get(&c, "b")?.to_ascii_lowercase());
        return Some(a.contains(&b));
    }
    if let Some(c) = match_template("{a} is empty", t) {
        let a = get(&c, "a")?.trim();
        return Some(a.is_empty() || a == "[]" || a == "null");
    }
    if let Some(c) = match_template("{a} is between {lo} and {hi}", t) {
        let n = |k: &str| get(&c, k)?.trim().parse::<Decimal>().ok();
        let (a, lo, hi) = (n("a")?, n("lo")?, n("hi")?);
        return Some(lo <= a && a <= hi);
    }
    for op in ["<=", ">=", "!=", "==", "<", ">", " is not ", " is ", "="] {
        if let Some((l, r)) = t.split_once(op) {
            let (l, r) = (l.trim().trim_matches('"'), r.trim().trim_matches('"'));
            let ord = match (l.parse::<Decimal>(), r.parse::<Decimal>()) {
                (Ok(a), Ok(b)) => a.cmp(&b),
                _ => l.cmp(r),
            };
            return Some(match op.trim() {
                "<=" => ord.is_le(),
                ">=" => ord.is_ge(),
                "<" => ord.is_lt(),
                ">" => ord.is_gt(),
                "!=" | "is not" => ord.is_ne(),
                _ => ord.is_eq(),
            });
        }
    }
    None
}

fn pick(menu: &[Edge], kind: EdgeKind) -> Option<&Edge> {
    menu.iter().find(|e| e.kind == kind)
}

fn choose(policy: Policy, inputs: &Inputs) -> Result<(Edge, String), String> {
    let menu = &inputs.menu;
    let by_condition = |yes: EdgeKind, no: EdgeKind| {
        let cond = inputs.condition.as_deref().ok_or("no condition")?;
        let truth = eval_condition(cond).ok_or_else(|| format!("cannot evaluate `{cond}`"))?;
        let kind = if truth { yes } else { no };
        pick(menu, kind)
            .map(|e| (e.clone(), format!("`{cond}` is {truth}")))
            .ok_or_else(|| format!("{kind} is not on the menu"))
    };
    match policy {
        Policy::OnlyMove => match menu.as_slice() {
            [only] => Ok((only.clone(), String::new())),
            [] => Err("empty menu".into()),
            _ => Err(format!("{} moves to choose from", menu.len())),
        },
        Policy::IterateByCount => {
            let p = inputs.loop_progress.ok_or("no loop progress")?;
            let more = p.total.is_some_and(|t| p.iteration < t);
            let kind = if more { EdgeKind::EnterBlock } else { EdgeKind::ExitLoop };
            let total = p.total.map(|t| t.to_string()).unwrap_or_else(|| "?".into());
            pick(menu, kind)
                .map(|e| (e.clone(), format!("{} of {total} iterations done", p.iteration)))
                .ok_or_else(|| format!("{kind} is not on the menu"))
        }
        Policy::BranchByCondition => by_condition(EdgeKind::TakeBranch, EdgeKind::SkipBranch),
        Policy::WhileByCondition => by_condition(EdgeKind::EnterBlock, EdgeKind::ExitLoop),
    }
}

fn judge(j: Judge, caps: &Captures, obs: Option<&Observation>) -> (Judgment, String) {
    let Some(obs) = obs else {
        return (Judgment::Unobservable, "no screen".into());
    };
    match j {
        Judge::Unobservable => (Judgment::Unobservable, "not shown on screen".into()),
        Judge::Foreground => {
            let app = get(caps, "app").unwrap_or("");
            if obs.foreground.eq_ignore_ascii_case(app) {
                (Judgment::Consistent, format!("{} is in front", obs.foreground))
            } else {
                (Judgment::Contradicted, format!("screen shows {}/{}", obs.foreground, obs.view))
            }
        }
        Judge::FieldValue => {
            let field = get(caps, "field").unwrap_or("");
            let want = get(caps, "value").unwrap_or("");
            match obs.field_value(field) {
                None => (Judgment::Unobservable, format!("no {field} field on screen")),
                Some(v) if v == want => (Judgment::Consistent, format!("{field} = {v:?}")),
                Some(v) => (Judgment::Contradicted, format!("{field} = {v:?}")),
            }
        }
    }
}

/// The deterministic backend.
#[derive(Debug)]
pub struct ScriptedBackend {
    table: RuleTable,
}

impl ScriptedBackend {
    pub fn new(table: RuleTable) -> Self {
        ScriptedBackend { table }
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    fn no_rule(purpose: Purpose, detail: impl Into<String>) -> BackendError {
        BackendError::NoRule { purpose, detail: detail.into() }
    }

    fn script(&self, purpose: Purpose, inputs: &Inputs) -> Result<String, BackendError> {
        let subject = match purpose {
            Purpose::Recover => inputs.gap_note.as_deref().unwrap_or(""),
            _ => inputs.instruction.as_deref().unwrap_or(""),
        };
        let (i, caps) = self
            .table
            .find(purpose, subject, inputs)
            .ok_or_else(|| Self::no_rule(purpose, subject))?;
        self.table.hit(i);
        let rule = &self.table.rules[i];
        if let Some(reason) = &rule.fail {
            return Err(Self::no_rule(purpose, format!("{reason}: {subject}")));
        }
        let escaped: Captures = caps.iter().map(|(k, v)| (k.clone(), escape(v))).collect();
        let text = fill_template(rule.script.as_deref().unwrap_or(""), &escaped);
        let mut script = ActionScript::parse(&text)
            .map_err(|e| Self::no_rule(purpose, format!("rule {} renders a bad script: {e}", rule.id)))?;
        if rule.replay_inputs {
            if let Some(last) = &inputs.last_script {
                script
                    .commands
                    .extend(last.commands.iter().filter(|c| matches!(c, Command::Input { .. })).cloned());
            }
        }
        script.rationale = format!("rule {}", rule.id);
        Ok(render_script_reply(&script))
    }

    fn program(&self, inputs: &Inputs) -> Result<String, BackendError> {
        let purpose = Purpose::GenerateProgram;
        let task = inputs.task.as_deref().unwrap_or("");
        let (i, _) = self.table.find(purpose, task, inputs).ok_or_else(|| Self::no_rule(purpose, task))?;
        self.table.hit(i);
        let rule = &self.table.rules[i];
        match &rule.program {
            Some(src) => Ok(fence(purpose, src)),
            None => Err(Self::no_rule(purpose, rule.fail.clone().unwrap_or_default())),
        }
    }

    fn pc_move(&self, inputs: &Inputs) -> Result<String, BackendError> {
        let purpose = Purpose::UpdatePc;
        let subject = inputs.instruction.as_deref().unwrap_or("");
        let (i, _) = self.table.find(purpose, subject, inputs).ok_or_else(|| Self::no_rule(purpose, subject))?;
        self.table.hit(i);
        let rule = &self.table.rules[i];
        let Some(policy) = rule.policy else {
            return Err(Self::no_rule(purpose, rule.fail.clone().unwrap_or_default()));
        };
        let (edge, note) = choose(policy, inputs).map_err(|e| Self::no_rule(purpose, format!("{}: {e}", rule.id)))?;
        let mut m = PcMove::new(&edge);
        m.note = note;
        Ok(render_move_reply(&m))
    }

    fn propose(&self, inputs: &Inputs) -> Result<String, BackendError> {
        let purpose = Purpose::ProposeBeliefs;
        let subject = inputs.instruction.as_deref().unwrap_or("");
        let (i, caps) = self.table.find(purpose, subject, inputs).ok_or_else(|| Self::no_rule(purpose, subject))?;
        self.table.hit(i);
        let rule = &self.table.rules[i];
        let Some(templates) = &rule.beliefs else {
            return Err(Self::no_rule(purpose, rule.fail.clone().unwrap_or_default()));
        };
        let drafts: Vec<HypothesisDraft> = templates
            .iter()
            .map(|t| HypothesisDraft {
                op: t.op,
                subject: fill_template(&t.subject, &caps),
                claim: t.claim.as_ref().map(|c| fill_template(c, &caps)),
                gap_note: t.gap_note.as_ref().map(|n| fill_template(n, &caps)),
            })
            .collect();
        Ok(render_drafts_reply(&drafts))
    }

    fn check(&self, inputs: &Inputs) -> Result<String, BackendError> {
        let purpose = Purpose::CheckBeliefs;
        let mut verdicts = Vec::new();
        for h in &inputs.hypotheses {
            let (i, caps) = self
                .table
                .find(purpose, &h.claim, inputs)
                .ok_or_else(|| Self::no_rule(purpose, h.claim.clone()))?;
            self.table.hit(i);
            let rule = &self.table.rules[i];
            let Some(j) = rule.judge else {
                return Err(Self::no_rule(purpose, rule.fail.clone().unwrap_or_default()));
            };
            let (judgment, evidence) = judge(j, &caps, inputs.observation.as_ref());
            verdicts.push(Verdict { id: h.id, judgment, evidence });
        }
        Ok(render_verdicts_reply(&verdicts))
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendReply, BackendError> {
        let inputs = &request.inputs;
        let text = match request.purpose {
            Purpose::GenerateProgram => self.program(inputs)?,
            Purpose::GroundInstruction | Purpose::Recover => self.script(request.purpose, inputs)?,
            Purpose::UpdatePc => self.pc_move(inputs)?,
            Purpose::ProposeBeliefs => self.propose(inputs)?,
            Purpose::CheckBeliefs => self.check(inputs)?,
        };
        Ok(BackendReply::new(text))
    }
}
