use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::hash::hex_prefix;
use crate::tree::clip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Button,
    Text,
    Field,
    ListItem,
    Checkbox,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Button => "button",
            ElementKind::Text => "text",
            ElementKind::Field => "field",
            ElementKind::ListItem => "item",
            ElementKind::Checkbox => "checkbox",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub enabled: bool,
}

impl Element {
    /// Ids hash the element's identity, not its field value, so they stay
    /// stable while a field is being edited.
    pub(crate) fn new(scope: &str, kind: ElementKind, text: &str, occurrence: usize) -> Self {
        let key = format!("{scope}|{}|{text}|{occurrence}", kind.as_str());
        Element {
            id: format!("e{}", hex_prefix(key.as_bytes(), 4)),
            kind,
            text: text.to_string(),
            value: None,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrollInfo {
    /// 1-based index of the first visible item; 0 when the list is empty.
    pub first: usize,
    pub last: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub foreground: String,
    pub view: String,
    pub clock: String,
    pub elements: Vec<Element>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scroll: Option<ScrollInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialog_title: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dialog: Vec<Element>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toast: Option<String>,
}

fn find_in<'a>(elements: &'a [Element], selector: &str) -> Option<&'a Element> {
    let sel = selector.trim();
    elements
        .iter()
        .find(|e| e.id == sel)
        .or_else(|| elements.iter().find(|e| e.text == sel))
        .or_else(|| elements.iter().find(|e| e.text.eq_ignore_ascii_case(sel)))
}

impl Observation {
    pub fn is_home(&self) -> bool {
        self.foreground == "Home"
    }

    pub fn has_dialog(&self) -> bool {
        self.dialog_title.is_some()
    }

    /// Resolves a selector against the background screen: element id first,
    /// then exact visible text, then case-insensitive text.
    pub fn find(&self, selector: &str) -> Option<&Element> {
        find_in(&self.elements, selector)
    }

    pub fn find_in_dialog(&self, selector: &str) -> Option<&Element> {
        find_in(&self.dialog, selector)
    }

    /// Visible on the background screen or in the dialog.
    pub fn is_visible(&self, selector: &str) -> bool {
        self.find(selector).is_some() || self.find_in_dialog(selector).is_some()
    }

    pub fn field_value(&self, label: &str) -> Option<&str> {
        self.elements
            .iter()
            .find(|e| e.kind == ElementKind::Field && e.text.eq_ignore_ascii_case(label))
            .map(|e| e.value.as_deref().unwrap_or(""))
    }

    /// What `read_screen` captures: list items when the screen has any,
    /// otherwise its text elements.
    pub fn content_texts(&self) -> Vec<String> {
        let items: Vec<String> = self
            .elements
            .iter()
            .filter(|e| e.kind == ElementKind::ListItem)
            .map(|e| e.text.clone())
            .collect();
        if !items.is_empty() {
            return items;
        }
        self.elements
            .iter()
            .filter(|e| e.kind == ElementKind::Text)
            .map(|e| e.text.clone())
            .collect()
    }

    /// Full multi-line rendering used in prompts and records.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "screen: {} / {} | {}", self.foreground, self.view, self.clock);
        for e in &self.elements {
            render_element(&mut out, e, "");
        }
        if let Some(s) = self.scroll {
            let _ = writeln!(out, "list: {}-{} of {}", s.first, s.last, s.total);
        }
        if let Some(t) = &self.dialog_title {
            let _ = writeln!(out, "dialog: {t}");
            for e in &self.dialog {
                render_element(&mut out, e, "  ");
            }
        }
        if let Some(t) = &self.toast {
            let _ = writeln!(out, "toast: {t}");
        }
        out
    }

    /// One line, at most 200 characters.
    pub fn digest(&self) -> String {
        let mut s = format!("{}/{}", self.foreground, self.view);
        if let Some(t) = &self.dialog_title {
            s.push_str(" [dialog: ");
            s.push_str(t);
            s.push(']');
        }
        let texts: Vec<&str> = self
            .elements
            .iter()
            .filter(|e| matches!(e.kind, ElementKind::ListItem | ElementKind::Text))
            .map(|e| e.text.as_str())
            .collect();
        if !texts.is_empty() {
            s.push_str(": ");
            s.push_str(&texts.join(", "));
        }
        if let Some(sc) = self.scroll {
            let _ = write!(s, " ({}-{} of {})", sc.first, sc.last, sc.total);
        }
        clip(&s, 200)
    }
}

fn render_element(out: &mut String, e: &Element, indent: &str) {
    let _ = write!(out, "{indent}[{} {}] {}", e.kind.as_str(), e.id, e.text);
    if let Some(v) = &e.value {
        let _ = write!(out, " = {}", serde_json::to_string(v).unwrap_or_default());
    }
    if !e.enabled {
        out.push_str(" (disabled)");
    }
    out.push('\n');
}
