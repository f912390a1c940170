//! Deterministic, partially observable phone with five apps.

mod date;
mod device;
mod generate;
mod observation;
mod scenario;

pub use date::{parse_date, this_weekday, weekday_name};
pub use device::{Device, DeviceState, SimError};
pub use generate::Generator;
pub use observation::{Element, ElementKind, Observation, ScrollInfo};
pub use scenario::{
    evaluate_task, Category, Check, Evaluation, Perturbation, PerturbationKind, Scenario,
    ScenarioRegistry, SubtaskResult, UnknownScenario,
};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::value::Decimal;

/// Page size of every scrollable list.
pub const LIST_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum App {
    Markor,
    Contacts,
    Calendar,
    Messages,
    Expenses,
}

impl App {
    pub const ALL: [App; 5] = [App::Markor, App::Contacts, App::Calendar, App::Messages, App::Expenses];

    pub fn label(self) -> &'static str {
        match self {
            App::Markor => "Markor",
            App::Contacts => "Contacts",
            App::Calendar => "Calendar",
            App::Messages => "Messages",
            App::Expenses => "Expenses",
        }
    }

    /// Accepts the label or a common alias, case-insensitively.
    pub fn parse(name: &str) -> Option<App> {
        let n = name.trim().to_ascii_lowercase();
        match n.as_str() {
            "markor" | "notes" => Some(App::Markor),
            "contacts" => Some(App::Contacts),
            "calendar" => Some(App::Calendar),
            "messages" | "sms" => Some(App::Messages),
            "expenses" | "expense" => Some(App::Expenses),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub name: String,
    pub body: String,
}

impl Note {
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.body.lines().map(str::trim).filter(|l| !l.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub name: String,
    #[serde(default)]
    pub phone: String,
    #[serde(default)]
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub title: String,
    pub date: String,
    #[serde(default)]
    pub time: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub contact: String,
    #[serde(default)]
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expense {
    pub label: String,
    pub amount: Decimal,
    #[serde(default)]
    pub date: String,
}

/// Persistent app data; everything an evaluator may look at.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppData {
    pub notes: Vec<Note>,
    pub contacts: Vec<Contact>,
    pub events: Vec<Event>,
    pub threads: Vec<Thread>,
    pub expenses: Vec<Expense>,
}

impl AppData {
    pub fn note(&self, name: &str) -> Option<&Note> {
        self.notes.iter().find(|n| n.name == name)
    }

    pub fn extend(&mut self, other: AppData) {
        self.notes.extend(other.notes);
        self.contacts.extend(other.contacts);
        self.events.extend(other.events);
        self.threads.extend(other.threads);
        self.expenses.extend(other.expenses);
    }
}
