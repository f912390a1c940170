use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::device::{Device, DeviceState};
use super::generate::{build_data, Generator};
use super::{AppData, Contact, Event, Expense};
use crate::template::{get, match_template};
use crate::value::Decimal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Compositional,
    Iterative,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Compositional => "compositional",
            Category::Iterative => "iterative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PerturbationKind {
    CrashToHome,
    PopupDialog,
    StaleToast,
}

/// Fires once `at` device commands have been applied: `at = k` lands right
/// after command `k - 1`, and `at = 0` before the first command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub at: u64,
    pub kind: PerturbationKind,
}

/// Predicates over the final device data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    ContactExists {
        name: String,
        #[serde(default)]
        phone: Option<String>,
        #[serde(default)]
        email: Option<String>,
    },
    EventExists {
        title: String,
        date: String,
        #[serde(default)]
        time: Option<String>,
    },
    ExpenseExists {
        label: String,
        #[serde(default)]
        amount: Option<Decimal>,
    },
    ExpenseAbsent {
        label: String,
    },
    ThreadContains {
        contact: String,
        text: String,
    },
    AnswerContains {
        text: String,
    },
    /// Each line of the note is a to-do item in one of the fan-out forms.
    TodoItemsDone {
        note: String,
    },
    /// Every expense label listed in the note is gone and nothing else is.
    NoteExpensesDeleted {
        note: String,
    },
    /// Lines of the form `<title> on <date> at <time>` exist as events.
    NoteEventsCreated {
        note: String,
    },
    /// Lines of the form `<label> <amount>` exist as expenses.
    NoteExpensesAdded {
        note: String,
    },
    /// The answer mentions the sum of the trailing amounts in the note.
    AnswerContainsSum {
        note: String,
    },
    /// Every name listed in the note received `text`.
    NoteContactsMessaged {
        note: String,
        text: String,
    },
    /// The note's first line was sent to `contact`.
    NoteLineSent {
        note: String,
        contact: String,
    },
    /// No event remains on `date`; events on other dates are untouched.
    EventsOnDateDeleted {
        date: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub success: bool,
    pub passed: usize,
    pub total: usize,
    pub subtasks: Vec<SubtaskResult>,
    /// Collateral-damage violations; any entry fails the task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: Category,
    #[serde(default)]
    pub n: u32,
    /// Groups size variants of one task (e.g. `expense_delete`).
    #[serde(default)]
    pub family: Option<String>,
    pub instruction: String,
    #[serde(default)]
    pub data: AppData,
    #[serde(default)]
    pub generators: Vec<Generator>,
    pub checks: Vec<Check>,
    #[serde(default)]
    pub perturbations: Vec<Perturbation>,
    #[serde(default = "default_date")]
    pub date: String,
    #[serde(default = "default_time")]
    pub time: String,
}

fn default_date() -> String {
    "2024-10-16".to_string()
}

fn default_time() -> String {
    "09:00".to_string()
}

impl Scenario {
    pub fn family(&self) -> &str {
        self.family.as_deref().unwrap_or(&self.id)
    }

    pub fn initial_data(&self, seed: u64) -> AppData {
        build_data(&self.id, &self.data, &self.generators, seed)
    }

    /// Fresh device for an episode.
    pub fn reset(&self, seed: u64) -> Device {
        self.reset_with(seed, self.perturbations.clone())
    }

    pub fn reset_with(&self, seed: u64, schedule: Vec<Perturbation>) -> Device {
        Device::new(self.initial_data(seed), &self.date, &self.time, schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scenario `{0}`")]
pub struct UnknownScenario(pub String);

#[derive(Debug, Clone, Default)]
pub struct ScenarioRegistry {
    scenarios: BTreeMap<String, Scenario>,
}

impl ScenarioRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: Scenario) {
        self.scenarios.insert(s.id.clone(), s);
    }

    pub fn get(&self, id: &str) -> Result<&Scenario, UnknownScenario> {
        self.scenarios.get(id).ok_or_else(|| UnknownScenario(id.to_string()))
    }

    pub fn reset(&self, id: &str, seed: u64) -> Result<Device, UnknownScenario> {
        Ok(self.get(id)?.reset(seed))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.values()
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

fn note_lines<'a>(data: &'a AppData, note: &str) -> Vec<&'a str> {
    data.note(note).map(|n| n.lines().collect()).unwrap_or_default()
}

fn contact_ok(d: &AppData, name: &str, phone: Option<&str>, email: Option<&str>) -> bool {
    d.contacts.iter().any(|c: &Contact| {
        c.name == name && phone.is_none_or(|p| c.phone == p) && email.is_none_or(|e| c.email == e)
    })
}

fn event_ok(d: &AppData, title: &str, date: &str, time: Option<&str>) -> bool {
    d.events
        .iter()
        .any(|e: &Event| e.title == title && e.date == date && time.is_none_or(|t| e.time == t))
}

fn expense_ok(d: &AppData, label: &str, amount: Option<&Decimal>) -> bool {
    d.expenses
        .iter()
        .any(|e: &Expense| e.label == label && amount.is_none_or(|a| &e.amount == a))
}

fn thread_has(d: &AppData, contact: &str, text: &str) -> bool {
    d.threads
        .iter()
        .any(|t| t.contact == contact && t.messages.iter().any(|m| m.contains(text)))
}

/// Trailing number of a `<label> <amount>` line.
pub(crate) fn split_amount(line: &str) -> Option<(&str, Decimal)> {
    let (label, amount) = line.trim().rsplit_once(' ')?;
    Some((label.trim(), amount.trim_start_matches('$').parse().ok()?))
}

/// Scores a finished episode. `initial` is the data the device started with.
pub fn evaluate_task(scenario: &Scenario, initial: &AppData, state: &DeviceState) -> Evaluation {
    let d = &state.data;
    let mut subtasks = Vec::new();
    let mut violations = Vec::new();
    let mut push = |name: String, passed: bool| subtasks.push(SubtaskResult { name, passed });
    for check in &scenario.checks {
        match check {
            Check::ContactExists { name, phone, email } => push(
                format!("contact {name}"),
                contact_ok(d, name, phone.as_deref(), email.as_deref()),
            ),
            Check::EventExists { title, date, time } => {
                push(format!("event {title}"), event_ok(d, title, date, time.as_deref()))
            }
            Check::ExpenseExists { label, amount } => {
                push(format!("expense {label}"), expense_ok(d, label, amount.as_ref()))
            }
            Check::ExpenseAbsent { label } => {
                push(format!("no expense {label}"), !d.expenses.iter().any(|e| &e.label == label))
            }
            Check::ThreadContains { contact, text } => {
                push(format!("message to {contact}"), thread_has(d, contact, text))
            }
            Check::AnswerContains { text } => {
                push("answer".to_string(), state.answers.iter().any(|a| a.contains(text.as_str())))
            }
            Check::TodoItemsDone { note } => {
                for line in note_lines(initial, note) {
                    let ok = if let Some(c) = match_template("Add contact {name} with phone {phone}", line) {
                        contact_ok(d, get(&c, "name").unwrap_or(""), get(&c, "phone"), None)
                    } else if let Some(c) = match_template("Schedule {title} on {date} at {time}", line) {
                        event_ok(d, get(&c, "title").unwrap_or(""), get(&c, "date").unwrap_or(""), get(&c, "time"))
                    } else if let Some(c) = match_template("Log expense {label} of {amount}", line) {
                        let amount = get(&c, "amount").and_then(|a| a.parse::<Decimal>().ok());
                        expense_ok(d, get(&c, "label").unwrap_or(""), amount.as_ref())
                    } else {
                        false
                    };
                    push(line.to_string(), ok);
                }
            }
            Check::NoteExpensesDeleted { note } => {
                let listed = note_lines(initial, note);
                for label in &listed {
                    push(format!("delete {label}"), !d.expenses.iter().any(|e| e.label == *label));
                }
                for e in &initial.expenses {
                    if !listed.contains(&e.label.as_str()) && !d.expenses.contains(e) {
                        violations.push(format!("expense {} was removed", e.label));
                    }
                }
            }
            Check::NoteEventsCreated { note } => {
                for line in note_lines(initial, note) {
                    let ok = match_template("{title} on {date} at {time}", line).is_some_and(|c| {
                        event_ok(d, get(&c, "title").unwrap_or(""), get(&c, "date").unwrap_or(""), get(&c, "time"))
                    });
                    push(line.to_string(), ok);
                }
            }
            Check::NoteExpensesAdded { note } => {
                for line in note_lines(initial, note) {
                    let ok = split_amount(line).is_some_and(|(label, amount)| expense_ok(d, label, Some(&amount)));
                    push(line.to_string(), ok);
                }
            }
            Check::AnswerContainsSum { note } => {
                let total: Decimal = note_lines(initial, note)
                    .into_iter()
                    .filter_map(split_amount)
                    .map(|(_, a)| a)
                    .sum();
                let t = total.to_string();
                push(format!("answer {t}"), state.answers.iter().any(|a| a.contains(t.as_str())));
            }
            Check::NoteContactsMessaged { note, text } => {
                for name in note_lines(initial, note) {
                    push(format!("message to {name}"), thread_has(d, name, text));
                }
            }
            Check::NoteLineSent { note, contact } => {
                let line = note_lines(initial, note).first().copied().unwrap_or("");
                push(format!("reply to {contact}"), !line.is_empty() && thread_has(d, contact, line));
            }
            Check::EventsOnDateDeleted { date } => {
                for e in initial.events.iter().filter(|e| &e.date == date) {
                    let gone = !d.events.iter().any(|x| x.title == e.title && &x.date == date);
                    push(format!("delete {} on {date}", e.title), gone);
                }
                for e in initial.events.iter().filter(|e| &e.date != date) {
                    if !d.events.contains(e) {
                        violations.push(format!("event {} on {} was removed", e.title, e.date));
                    }
                }
            }
        }
    }
    let passed = subtasks.iter().filter(|s| s.passed).count();
    let total = subtasks.len();
    Evaluation {
        success: total > 0 && passed == total && violations.is_empty(),
        passed,
        total,
        subtasks,
        violations,
    }
}
