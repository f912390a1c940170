//! The built-in scenario suite, its reference programs and the rule table
//! for the scripted backend.

use stp_core::sim::{Scenario, ScenarioRegistry};

use crate::scripted::{RuleError, RuleTable, ScriptedBackend};

macro_rules! embed {
    ($dir:literal; $($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../suite/", $dir, "/", $name)))),*]
    };
}

pub const PROGRAMS: &[(&str, &str)] = embed!("programs";
    "broadcast.stp",
    "calendar_add.stp",
    "contact_form.stp",
    "expense_delete.stp",
    "expense_from_note.stp",
    "note_reply.stp",
    "saturday_cleanup.stp",
    "todo_fanout.stp",
);

pub const SCENARIOS: &[(&str, &str)] = embed!("scenarios";
    "todo_fanout.json",
    "note_reply.json",
    "broadcast.json",
    "contact_form.json",
    "expense_from_note.json",
    "saturday_cleanup.json",
    "expense_delete_3.json",
    "expense_delete_10.json",
    "expense_delete_20.json",
    "calendar_add_3.json",
    "calendar_add_10.json",
    "calendar_add_20.json",
);

pub const RULES: &str = include_str!("../suite/rules.json");

/// Apps and capabilities of the simulated device, as told to the
/// program generator.
pub const DEVICE_PROFILE: &str = "Android phone with the apps Markor (notes), Contacts, Calendar, \
Expenses and Messages. Lists show five items at a time and scroll with swipes. \
Forms are opened with an Add button and committed with Save.";

pub fn program(name: &str) -> Option<&'static str> {
    PROGRAMS.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

/// The scenarios in suite order.
pub fn scenarios() -> Vec<Scenario> {
    SCENARIOS
        .iter()
        .map(|(name, json)| serde_json::from_str(json).unwrap_or_else(|e| panic!("suite scenario {name}: {e}")))
        .collect()
}

pub fn registry() -> ScenarioRegistry {
    let mut reg = ScenarioRegistry::new();
    for s in scenarios() {
        reg.insert(s);
    }
    reg
}

pub fn scenario_ids() -> Vec<String> {
    scenarios().into_iter().map(|s| s.id).collect()
}

pub fn rule_table() -> Result<RuleTable, RuleError> {
    RuleTable::from_json(RULES, |name| program(name).map(String::from))
}

/// A scripted backend over the built-in rule table.
pub fn scripted_backend() -> ScriptedBackend {
    ScriptedBackend::new(rule_table().expect("built-in rule table is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_scenarios_with_unique_ids() {
        let ids = scenario_ids();
        assert_eq!(ids.len(), 12);
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
    }

    #[test]
    fn programs_parse() {
        for (name, src) in PROGRAMS {
            stp_core::parse_program(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn rules_load() {
        rule_table().unwrap();
    }
}
