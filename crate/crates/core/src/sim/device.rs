use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::date::{parse_date, weekday_name};
use super::observation::{Element, ElementKind, Observation, ScrollInfo};
use super::scenario::{Perturbation, PerturbationKind};
use super::{App, AppData, Contact, Event, Expense, Thread, LIST_WINDOW};
use crate::script::{Command, Direction};
use crate::value::Decimal;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SimError {
    #[error("no element matches `{target}`")]
    TargetNotFound { target: String },
    #[error("illegal action: {reason}")]
    IllegalAction { reason: String },
    #[error("{command} is handled by the interpreter, not the device")]
    NotADeviceCommand { command: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
enum Screen {
    List { scroll: usize, search: String },
    Note { name: String },
    Detail { index: usize },
    Form { fields: Vec<(String, String)> },
    Thread { contact: String, draft: String },
    Compose { to: String, message: String },
}

impl Screen {
    fn label(&self) -> &'static str {
        match self {
            Screen::List { .. } => "list",
            Screen::Note { .. } => "note",
            Screen::Detail { .. } => "detail",
            Screen::Form { .. } => "form",
            Screen::Thread { .. } => "thread",
            Screen::Compose { .. } => "compose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Dialog {
    title: String,
    buttons: Vec<String>,
}

/// Everything that makes up the device at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub data: AppData,
    foreground: Option<App>,
    stacks: BTreeMap<App, Vec<Screen>>,
    clipboard: Option<String>,
    dialog: Option<Dialog>,
    toast: Option<String>,
    pub date: String,
    pub time: String,
    pub answers: Vec<String>,
    pub done: Option<String>,
    commands_applied: u64,
    pending: Vec<Perturbation>,
    pub fired: Vec<Perturbation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    None,
    OpenApp(App),
    OpenItem(usize),
    OpenThread(usize),
    AddNew,
    NewMessage,
    Save,
    Delete,
    Send,
    Dismiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FieldKey {
    Search,
    Form(usize),
    Draft,
    ComposeTo,
    ComposeMessage,
}

struct Widget {
    kind: ElementKind,
    text: String,
    value: Option<String>,
    act: Act,
    field: Option<FieldKey>,
}

impl Widget {
    fn button(text: &str, act: Act) -> Self {
        Widget { kind: ElementKind::Button, text: text.to_string(), value: None, act, field: None }
    }

    fn text(text: String) -> Self {
        Widget { kind: ElementKind::Text, text, value: None, act: Act::None, field: None }
    }

    fn item(text: String, act: Act) -> Self {
        Widget { kind: ElementKind::ListItem, text, value: None, act, field: None }
    }

    fn field(label: &str, value: &str, key: FieldKey) -> Self {
        Widget {
            kind: ElementKind::Field,
            text: label.to_string(),
            value: Some(value.to_string()),
            act: Act::None,
            field: Some(key),
        }
    }
}

fn form_labels(app: App) -> &'static [&'static str] {
    match app {
        App::Contacts => &["Name", "Phone", "Email"],
        App::Calendar => &["Title", "Date", "Time"],
        App::Expenses => &["Label", "Amount", "Date"],
        App::Markor | App::Messages => &[],
    }
}

fn add_label(app: App) -> Option<&'static str> {
    match app {
        App::Contacts => Some("Add contact"),
        App::Calendar => Some("Add event"),
        App::Expenses => Some("Add expense"),
        App::Messages => Some("New message"),
        App::Markor => None,
    }
}

fn illegal(reason: impl Into<String>) -> SimError {
    SimError::IllegalAction { reason: reason.into() }
}

fn contains_ci(hay: &str, needle: &str) -> bool {
    hay.to_ascii_lowercase().contains(&needle.to_ascii_lowercase())
}

/// One simulated device. Deterministic: the same initial state and command
/// stream always produce the same observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Device {
    state: DeviceState,
}

impl Device {
    pub fn new(data: AppData, date: &str, time: &str, schedule: Vec<Perturbation>) -> Self {
        let mut state = DeviceState {
            data,
            foreground: None,
            stacks: BTreeMap::new(),
            clipboard: None,
            dialog: None,
            toast: None,
            date: date.to_string(),
            time: time.to_string(),
            answers: Vec::new(),
            done: None,
            commands_applied: 0,
            pending: schedule,
            fired: Vec::new(),
        };
        state.pending.sort_by_key(|p| p.at);
        let mut d = Device { state };
        d.fire_due();
        d
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn data(&self) -> &AppData {
        &self.state.data
    }

    /// Hidden from every observation.
    pub fn clipboard(&self) -> Option<&str> {
        self.state.clipboard.as_deref()
    }

    pub fn commands_applied(&self) -> u64 {
        self.state.commands_applied
    }

    pub fn clock_label(&self) -> String {
        let wd = parse_date(&self.state.date).map(weekday_name).unwrap_or("");
        format!("{wd} {} {}", self.state.date, self.state.time).trim().to_string()
    }

    fn fire_due(&mut self) {
        let now = self.state.commands_applied;
        while self.state.pending.first().is_some_and(|p| p.at <= now) {
            let p = self.state.pending.remove(0);
            self.perturb(p.kind);
            self.state.fired.push(p);
        }
    }

    /// Applies a perturbation immediately.
    pub fn perturb(&mut self, kind: PerturbationKind) {
        match kind {
            PerturbationKind::CrashToHome => {
                self.state.foreground = None;
                self.state.stacks.clear();
                self.state.dialog = None;
            }
            PerturbationKind::PopupDialog => {
                self.state.dialog = Some(Dialog {
                    title: "Rate this app?".to_string(),
                    buttons: alloc::vec!["Dismiss".to_string()],
                });
            }
            PerturbationKind::StaleToast => {
                self.state.toast = Some("Sync completed".to_string());
            }
        }
    }

    /// Applies one device command. Perturbations scheduled for the next
    /// command index fire right after this command, so the returned
    /// observation already reflects them.
    pub fn apply(&mut self, cmd: &Command) -> Result<String, SimError> {
        if cmd.is_store_only() {
            return Err(SimError::NotADeviceCommand { command: cmd.name().to_string() });
        }
        self.state.toast = None;
        let result = self.dispatch(cmd);
        self.state.commands_applied += 1;
        self.fire_due();
        result
    }

    fn dispatch(&mut self, cmd: &Command) -> Result<String, SimError> {
        if self.state.dialog.is_some() {
            match cmd {
                Command::Click { target } => return self.click_dialog(target),
                Command::Wait { .. } | Command::Answer { .. } | Command::Done { .. } => {}
                _ => return Err(illegal("a dialog is open")),
            }
        }
        match cmd {
            Command::StartApp { name } => {
                let app = App::parse(name).ok_or_else(|| SimError::TargetNotFound { target: name.clone() })?;
                self.launch(app);
                Ok(format!("opened {}", app.label()))
            }
            Command::Click { target } => self.click(target),
            Command::LongClick { target } => {
                let (w, _) = self.resolve(target)?;
                let copied = w.value.clone().unwrap_or(w.text);
                self.state.clipboard = Some(copied);
                Ok("copied to clipboard".to_string())
            }
            Command::Input { target, text } => self.input(target, text),
            Command::Swipe { direction } => Ok(self.swipe(*direction)),
            Command::Back => Ok(self.back()),
            Command::Home => {
                self.state.foreground = None;
                Ok("home".to_string())
            }
            Command::Wait { seconds } => Ok(format!("waited {seconds}s")),
            Command::Answer { text } => {
                self.state.answers.push(text.clone());
                Ok("answered".to_string())
            }
            Command::Done { status } => {
                self.state.done = Some(status.clone());
                Ok(format!("done: {status}"))
            }
            Command::ReadScreen { .. } | Command::Assign { .. } => unreachable!("filtered in apply"),
        }
    }

    fn launch(&mut self, app: App) {
        self.state.foreground = Some(app);
        self.state
            .stacks
            .insert(app, alloc::vec![Screen::List { scroll: 0, search: String::new() }]);
    }

    fn top(&self) -> Option<(App, &Screen)> {
        let app = self.state.foreground?;
        Some((app, self.state.stacks.get(&app)?.last()?))
    }

    fn top_mut(&mut self) -> Option<&mut Screen> {
        let app = self.state.foreground?;
        self.state.stacks.get_mut(&app)?.last_mut()
    }

    fn pop(&mut self) {
        if let Some(app) = self.state.foreground {
            if let Some(stack) = self.state.stacks.get_mut(&app) {
                stack.pop();
                if stack.is_empty() {
                    self.state.stacks.remove(&app);
                    self.state.foreground = None;
                }
            }
        }
    }

    fn push(&mut self, s: Screen) {
        if let Some(app) = self.state.foreground {
            self.state.stacks.entry(app).or_default().push(s);
        }
    }

    /// (item text, searchable text) for each entry of an app's list.
    fn list_entries(&self, app: App) -> Vec<(String, String)> {
        let d = &self.state.data;
        match app {
            App::Markor => d.notes.iter().map(|n| (n.name.clone(), n.name.clone())).collect(),
            App::Contacts => d
                .contacts
                .iter()
                .map(|c| (c.name.clone(), format!("{} {} {}", c.name, c.phone, c.email)))
                .collect(),
            App::Calendar => d
                .events
                .iter()
                .map(|e| (e.title.clone(), format!("{} {} {}", e.title, e.date, e.time)))
                .collect(),
            App::Messages => d.threads.iter().map(|t| (t.contact.clone(), t.contact.clone())).collect(),
            App::Expenses => d
                .expenses
                .iter()
                .map(|e| (e.label.clone(), format!("{} {} {}", e.label, e.amount, e.date)))
                .collect(),
        }
    }

    /// Indices into the app's data that pass the search filter.
    fn filtered(&self, app: App, search: &str) -> Vec<(usize, String)> {
        self.list_entries(app)
            .into_iter()
            .enumerate()
            .filter(|(_, (_, hay))| search.is_empty() || contains_ci(hay, search))
            .map(|(i, (text, _))| (i, text))
            .collect()
    }

    fn widgets(&self) -> (Vec<Widget>, Option<ScrollInfo>) {
        let Some((app, screen)) = self.top() else {
            return (App::ALL.iter().map(|a| Widget::button(a.label(), Act::OpenApp(*a))).collect(), None);
        };
        let d = &self.state.data;
        let mut w = Vec::new();
        let mut scroll = None;
        match screen {
            Screen::List { scroll: offset, search } => {
                if app != App::Markor {
                    w.push(Widget::field("Search", search, FieldKey::Search));
                }
                if let Some(l) = add_label(app) {
                    let act = if app == App::Messages { Act::NewMessage } else { Act::AddNew };
                    w.push(Widget::button(l, act));
                }
                let items = self.filtered(app, search);
                let total = items.len();
                let start = (*offset).min(total.saturating_sub(1));
                let end = (start + LIST_WINDOW).min(total);
                for (idx, text) in items.into_iter().skip(start).take(end - start) {
                    let act = if app == App::Messages { Act::OpenThread(idx) } else { Act::OpenItem(idx) };
                    w.push(Widget::item(text, act));
                }
                scroll = Some(ScrollInfo {
                    first: if total == 0 { 0 } else { start + 1 },
                    last: end,
                    total,
                });
            }
            Screen::Note { name } => {
                if let Some(n) = d.note(name) {
                    w.extend(n.lines().map(|l| Widget::text(l.to_string())));
                }
            }
            Screen::Detail { index } => {
                let i = *index;
                match app {
                    App::Contacts => {
                        if let Some(c) = d.contacts.get(i) {
                            w.push(Widget::text(c.name.clone()));
                            w.push(Widget::text(format!("Phone: {}", c.phone)));
                            w.push(Widget::text(format!("Email: {}", c.email)));
                        }
                    }
                    App::Calendar => {
                        if let Some(e) = d.events.get(i) {
                            w.push(Widget::text(e.title.clone()));
                            w.push(Widget::text(format!("Date: {}", e.date)));
                            w.push(Widget::text(format!("Time: {}", e.time)));
                        }
                    }
                    App::Expenses => {
                        if let Some(e) = d.expenses.get(i) {
                            w.push(Widget::text(e.label.clone()));
                            w.push(Widget::text(format!("Amount: {}", e.amount)));
                            w.push(Widget::text(format!("Date: {}", e.date)));
                        }
                    }
                    App::Markor | App::Messages => {}
                }
                w.push(Widget::button("Delete", Act::Delete));
            }
            Screen::Form { fields } => {
                for (i, (label, value)) in fields.iter().enumerate() {
                    w.push(Widget::field(label, value, FieldKey::Form(i)));
                }
                w.push(Widget::button("Save", Act::Save));
            }
            Screen::Thread { contact, draft } => {
                if let Some(t) = d.threads.iter().find(|t| &t.contact == contact) {
                    w.extend(t.messages.iter().map(|m| Widget::text(m.clone())));
                }
                w.push(Widget::field("Message", draft, FieldKey::Draft));
                w.push(Widget::button("Send", Act::Send));
            }
            Screen::Compose { to, message } => {
                w.push(Widget::field("To", to, FieldKey::ComposeTo));
                w.push(Widget::field("Message", message, FieldKey::ComposeMessage));
                w.push(Widget::button("Send", Act::Send));
            }
        }
        (w, scroll)
    }

    fn scope(&self) -> String {
        match self.top() {
            Some((app, s)) => format!("{}/{}", app.label(), s.label()),
            None => "Home/home".to_string(),
        }
    }

    fn elements(&self, widgets: &[Widget]) -> Vec<Element> {
        let scope = self.scope();
        let mut seen: BTreeMap<(ElementKind, &str), usize> = BTreeMap::new();
        widgets
            .iter()
            .map(|w| {
                let n = seen.entry((w.kind, w.text.as_str())).or_insert(0);
                let mut e = Element::new(&scope, w.kind, &w.text, *n);
                *n += 1;
                e.value = w.value.clone();
                e
            })
            .collect()
    }

    pub fn observe(&self) -> Observation {
        let (widgets, scroll) = self.widgets();
        let (foreground, view) = match self.top() {
            Some((app, s)) => (app.label().to_string(), s.label().to_string()),
            None => ("Home".to_string(), "home".to_string()),
        };
        let (dialog_title, dialog) = match &self.state.dialog {
            Some(d) => {
                let ws: Vec<Widget> = d.buttons.iter().map(|b| Widget::button(b, Act::Dismiss)).collect();
                (Some(d.title.clone()), self.elements(&ws).into_iter().map(|mut e| {
                    e.id = format!("d{}", &e.id[1..]);
                    e
                }).collect())
            }
            None => (None, Vec::new()),
        };
        Observation {
            foreground,
            view,
            clock: self.clock_label(),
            elements: self.elements(&widgets),
            scroll,
            dialog_title,
            dialog,
            toast: self.state.toast.clone(),
        }
    }

    /// Finds the widget a selector refers to on the background screen.
    fn resolve(&self, selector: &str) -> Result<(Widget, usize), SimError> {
        let (widgets, _) = self.widgets();
        let elements = self.elements(&widgets);
        let sel = selector.trim();
        let pos = elements
            .iter()
            .position(|e| e.id == sel)
            .or_else(|| elements.iter().position(|e| e.text == sel))
            .or_else(|| elements.iter().position(|e| e.text.eq_ignore_ascii_case(sel)))
            .ok_or_else(|| SimError::TargetNotFound { target: selector.to_string() })?;
        let w = widgets.into_iter().nth(pos).expect("same length");
        Ok((w, pos))
    }

    fn click_dialog(&mut self, target: &str) -> Result<String, SimError> {
        let obs = self.observe();
        if obs.find_in_dialog(target).is_some() {
            self.state.dialog = None;
            return Ok("dialog dismissed".to_string());
        }
        if obs.find(target).is_some() {
            return Err(illegal("a dialog is open"));
        }
        Err(SimError::TargetNotFound { target: target.to_string() })
    }

    fn click(&mut self, target: &str) -> Result<String, SimError> {
        let (w, _) = self.resolve(target)?;
        let app = self.state.foreground;
        match w.act {
            Act::None => Ok(if w.field.is_some() { "focused" } else { "nothing happened" }.to_string()),
            Act::OpenApp(a) => {
                self.launch(a);
                Ok(format!("opened {}", a.label()))
            }
            Act::OpenItem(i) => {
                if app == Some(App::Markor) {
                    let name = self.state.data.notes[i].name.clone();
                    self.push(Screen::Note { name });
                } else {
                    self.push(Screen::Detail { index: i });
                }
                Ok(format!("opened {}", w.text))
            }
            Act::OpenThread(i) => {
                let contact = self.state.data.threads[i].contact.clone();
                self.push(Screen::Thread { contact, draft: String::new() });
                Ok(format!("opened conversation with {}", w.text))
            }
            Act::AddNew => {
                let fields = form_labels(app.expect("in an app"))
                    .iter()
                    .map(|l| (l.to_string(), String::new()))
                    .collect();
                self.push(Screen::Form { fields });
                Ok("new form".to_string())
            }
            Act::NewMessage => {
                self.push(Screen::Compose { to: String::new(), message: String::new() });
                Ok("new message".to_string())
            }
            Act::Save => self.save(app.expect("in an app")),
            Act::Delete => self.delete(app.expect("in an app")),
            Act::Send => self.send(),
            Act::Dismiss => Ok("dismissed".to_string()),
        }
    }

    fn input(&mut self, target: &str, text: &str) -> Result<String, SimError> {
        let (w, _) = self.resolve(target)?;
        let key = w.field.ok_or_else(|| illegal(format!("`{}` is not a text field", w.text)))?;
        let top = self.top_mut().ok_or_else(|| illegal("no field is focused"))?;
        match (key, top) {
            (FieldKey::Search, Screen::List { scroll, search }) => {
                *search = text.to_string();
                *scroll = 0;
            }
            (FieldKey::Form(i), Screen::Form { fields }) => fields[i].1 = text.to_string(),
            (FieldKey::Draft, Screen::Thread { draft, .. }) => *draft = text.to_string(),
            (FieldKey::ComposeTo, Screen::Compose { to, .. }) => *to = text.to_string(),
            (FieldKey::ComposeMessage, Screen::Compose { message, .. }) => *message = text.to_string(),
            _ => return Err(illegal("field does not belong to this screen")),
        }
        Ok(format!("typed into {}", w.text))
    }

    fn swipe(&mut self, dir: Direction) -> String {
        let Some(app) = self.state.foreground else {
            return "nothing to scroll".to_string();
        };
        let search = match self.top() {
            Some((_, Screen::List { search, .. })) => search.clone(),
            _ => return "nothing to scroll".to_string(),
        };
        let total = self.filtered(app, &search).len();
        let max_start = total.saturating_sub(LIST_WINDOW);
        if let Some(Screen::List { scroll, .. }) = self.top_mut() {
            *scroll = match dir {
                Direction::Down => (*scroll + LIST_WINDOW).min(max_start),
                Direction::Up => scroll.saturating_sub(LIST_WINDOW),
            };
            return format!("scrolled {}", dir.as_str());
        }
        "nothing to scroll".to_string()
    }

    fn back(&mut self) -> String {
        if self.state.foreground.is_none() {
            return "already home".to_string();
        }
        self.pop();
        "back".to_string()
    }

    fn save(&mut self, app: App) -> Result<String, SimError> {
        let Some((_, Screen::Form { fields })) = self.top() else {
            return Err(illegal("nothing to save"));
        };
        let get = |l: &str| {
            fields
                .iter()
                .find(|(k, _)| k == l)
                .map(|(_, v)| v.trim().to_string())
                .unwrap_or_default()
        };
        let today = self.state.date.clone();
        match app {
            App::Contacts => {
                let name = get("Name");
                if name.is_empty() {
                    return Err(illegal("Name is required"));
                }
                let c = Contact { name, phone: get("Phone"), email: get("Email") };
                self.state.data.contacts.push(c);
            }
            App::Calendar => {
                let title = get("Title");
                let date = get("Date");
                if title.is_empty() || parse_date(&date).is_none() {
                    return Err(illegal("Title and a valid Date are required"));
                }
                let e = Event { title, date, time: get("Time") };
                self.state.data.events.push(e);
            }
            App::Expenses => {
                let label = get("Label");
                let amount: Decimal = get("Amount")
                    .trim_start_matches('$')
                    .parse()
                    .map_err(|_| illegal("Amount must be a number"))?;
                if label.is_empty() {
                    return Err(illegal("Label is required"));
                }
                let date = match get("Date") {
                    d if d.is_empty() => today,
                    d => d,
                };
                self.state.data.expenses.push(Expense { label, amount, date });
            }
            App::Markor | App::Messages => return Err(illegal("nothing to save")),
        }
        self.pop();
        self.state.toast = Some("Saved".to_string());
        Ok("saved".to_string())
    }

    fn delete(&mut self, app: App) -> Result<String, SimError> {
        let Some((_, Screen::Detail { index })) = self.top() else {
            return Err(illegal("nothing to delete"));
        };
        let i = *index;
        let d = &mut self.state.data;
        let removed = match app {
            App::Contacts if i < d.contacts.len() => d.contacts.remove(i).name,
            App::Calendar if i < d.events.len() => d.events.remove(i).title,
            App::Expenses if i < d.expenses.len() => d.expenses.remove(i).label,
            _ => return Err(illegal("nothing to delete")),
        };
        self.pop();
        self.state.toast = Some("Deleted".to_string());
        Ok(format!("deleted {removed}"))
    }

    fn send(&mut self) -> Result<String, SimError> {
        match self.top() {
            Some((_, Screen::Thread { contact, draft })) => {
                if draft.trim().is_empty() {
                    return Err(illegal("message is empty"));
                }
                let (contact, text) = (contact.clone(), draft.clone());
                self.post(&contact, text);
                if let Some(Screen::Thread { draft, .. }) = self.top_mut() {
                    draft.clear();
                }
                Ok(format!("sent to {contact}"))
            }
            Some((_, Screen::Compose { to, message })) => {
                if to.trim().is_empty() || message.trim().is_empty() {
                    return Err(illegal("recipient and message are required"));
                }
                let (to, text) = (to.trim().to_string(), message.clone());
                self.post(&to, text);
                self.pop();
                Ok(format!("sent to {to}"))
            }
            _ => Err(illegal("nothing to send")),
        }
    }

    fn post(&mut self, contact: &str, text: String) {
        let threads = &mut self.state.data.threads;
        match threads.iter_mut().find(|t| t.contact == contact) {
            Some(t) => t.messages.push(text),
            None => threads.push(Thread { contact: contact.to_string(), messages: alloc::vec![text] }),
        }
    }
}
