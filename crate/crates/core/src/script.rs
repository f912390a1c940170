//! The closed command vocabulary that grounded instructions compile to.
//!
//! Text form is a sequence of calls separated by `;` or newlines:
//!
//! ```text
//! start_app("Markor"); click("todo_list.md"); read_screen(task_list)
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::is_var_path;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    StartApp { name: String },
    Click { target: String },
    LongClick { target: String },
    Input { target: String, text: String },
    Swipe { direction: Direction },
    Back,
    Home,
    Wait { seconds: u64 },
    ReadScreen { into: String },
    Assign { path: String, value: Value },
    Answer { text: String },
    Done { status: String },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::StartApp { .. } => "start_app",
            Command::Click { .. } => "click",
            Command::LongClick { .. } => "long_click",
            Command::Input { .. } => "input",
            Command::Swipe { .. } => "swipe",
            Command::Back => "back",
            Command::Home => "home",
            Command::Wait { .. } => "wait",
            Command::ReadScreen { .. } => "read_screen",
            Command::Assign { .. } => "assign",
            Command::Answer { .. } => "answer",
            Command::Done { .. } => "done",
        }
    }

    /// Commands that touch only the variable store, never the device.
    pub fn is_store_only(&self) -> bool {
        matches!(self, Command::ReadScreen { .. } | Command::Assign { .. })
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_default()
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::StartApp { name } => write!(f, "start_app({})", quote(name)),
            Command::Click { target } => write!(f, "click({})", quote(target)),
            Command::LongClick { target } => write!(f, "long_click({})", quote(target)),
            Command::Input { target, text } => write!(f, "input({}, {})", quote(target), quote(text)),
            Command::Swipe { direction } => write!(f, "swipe({})", direction.as_str()),
            Command::Back => f.write_str("back()"),
            Command::Home => f.write_str("home()"),
            Command::Wait { seconds } => write!(f, "wait({seconds})"),
            Command::ReadScreen { into } => write!(f, "read_screen({into})"),
            Command::Assign { path, value } => write!(f, "assign({path}, {})", value.to_json()),
            Command::Answer { text } => write!(f, "answer({})", quote(text)),
            Command::Done { status } => write!(f, "done({status})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionScript {
    pub commands: Vec<Command>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("command {index}: {reason}")]
    Syntax { index: usize, reason: String },
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("done() must be the last command and may appear once")]
    MisplacedDone,
    #[error("`{0}` is not a variable path")]
    BadPath(String),
}

impl ActionScript {
    pub fn new(commands: Vec<Command>) -> Self {
        ActionScript { commands, rationale: String::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        let dones = self.commands.iter().filter(|c| matches!(c, Command::Done { .. })).count();
        let last_is_done = matches!(self.commands.last(), Some(Command::Done { .. }));
        if dones > 1 || (dones == 1 && !last_is_done) {
            return Err(ScriptError::MisplacedDone);
        }
        for c in &self.commands {
            match c {
                Command::ReadScreen { into: p } | Command::Assign { path: p, .. } if !is_var_path(p) => {
                    return Err(ScriptError::BadPath(p.clone()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn has_done(&self) -> bool {
        matches!(self.commands.last(), Some(Command::Done { .. }))
    }

    /// Parses the text form. `#` lines become the rationale.
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut p = Parser { src: text, pos: 0, index: 0 };
        let mut commands = Vec::new();
        let mut rationale = String::new();
        loop {
            p.skip_separators();
            if p.eat("#") {
                let line = p.take_line().trim();
                if !rationale.is_empty() {
                    rationale.push(' ');
                }
                rationale.push_str(line);
                continue;
            }
            if p.at_end() {
                break;
            }
            commands.push(p.command()?);
            p.index += 1;
        }
        let script = ActionScript { commands, rationale };
        script.validate()?;
        Ok(script)
    }

    /// Single-line text form.
    pub fn to_text(&self) -> String {
        self.commands.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
    }
}

impl fmt::Display for ActionScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    index: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.rest().trim().is_empty()
    }

    fn err(&self, reason: impl Into<String>) -> ScriptError {
        ScriptError::Syntax { index: self.index, reason: reason.into() }
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start_matches([' ', '\t']).len();
    }

    fn skip_separators(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start_matches(|c: char| c.is_whitespace() || c == ';').len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn take_line(&mut self) -> &'a str {
        let r = self.rest();
        let end = r.find('\n').unwrap_or(r.len());
        self.pos += end;
        &r[..end]
    }

    fn ident(&mut self) -> &'a str {
        let r = self.rest();
        let end = r
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.'))
            .unwrap_or(r.len());
        self.pos += end;
        &r[..end]
    }

    fn expect(&mut self, tok: &str) -> Result<(), ScriptError> {
        self.skip_ws();
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{tok}`")))
        }
    }

    /// A JSON value (strings, numbers, objects, ...) at the cursor.
    fn json(&mut self) -> Result<Value, ScriptError> {
        self.skip_ws();
        let r = self.rest();
        if r.starts_with(|c: char| c == '-' || c.is_ascii_digit()) {
            // The stream reader insists on a separator after numbers.
            let end = r
                .find(|c: char| !(c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E')))
                .unwrap_or(r.len());
            let n = crate::value::parse_json_number(&r[..end])
                .map_err(|_| self.err("malformed number"))?;
            self.pos += end;
            return Ok(Value::Number(n));
        }
        let mut stream = serde_json::Deserializer::from_str(self.rest()).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => {
                self.pos += stream.byte_offset();
                Ok(v)
            }
            _ => Err(self.err("expected a literal")),
        }
    }

    fn string(&mut self) -> Result<String, ScriptError> {
        self.skip_ws();
        if !self.rest().starts_with('"') {
            return Err(self.err("expected a quoted string"));
        }
        match self.json()? {
            Value::Text(s) => Ok(s),
            _ => Err(self.err("expected a quoted string")),
        }
    }

    fn word(&mut self) -> Result<&'a str, ScriptError> {
        self.skip_ws();
        let w = self.ident();
        if w.is_empty() {
            Err(self.err("expected a name"))
        } else {
            Ok(w)
        }
    }

    fn command(&mut self) -> Result<Command, ScriptError> {
        let name = self.word()?;
        self.expect("(")?;
        let cmd = match name {
            "start_app" => Command::StartApp { name: self.string()? },
            "click" => Command::Click { target: self.string()? },
            "long_click" => Command::LongClick { target: self.string()? },
            "input" => {
                let target = self.string()?;
                self.expect(",")?;
                Command::Input { target, text: self.string()? }
            }
            "swipe" => {
                self.skip_ws();
                let quoted = self.rest().starts_with('"');
                let dir = if quoted { self.string()? } else { self.word()?.to_string() };
                let direction = match dir.as_str() {
                    "up" => Direction::Up,
                    "down" => Direction::Down,
                    other => return Err(self.err(format!("unknown direction `{other}`"))),
                };
                Command::Swipe { direction }
            }
            "back" => Command::Back,
            "home" => Command::Home,
            "wait" => match self.json()? {
                Value::Number(n) => Command::Wait {
                    seconds: n.to_u64().ok_or_else(|| self.err("wait needs whole seconds"))?,
                },
                _ => return Err(self.err("wait needs a number")),
            },
            "read_screen" => Command::ReadScreen { into: self.path()? },
            "assign" => {
                let path = self.path()?;
                self.expect(",")?;
                Command::Assign { path, value: self.json()? }
            }
            "answer" => Command::Answer { text: self.string()? },
            "done" => {
                self.skip_ws();
                let status = if self.rest().starts_with(')') {
                    "success".to_string()
                } else if self.rest().starts_with('"') {
                    self.string()?
                } else {
                    self.word()?.to_string()
                };
                Command::Done { status }
            }
            other => return Err(ScriptError::UnknownCommand(other.to_string())),
        };
        self.expect(")")?;
        Ok(cmd)
    }

    fn path(&mut self) -> Result<String, ScriptError> {
        self.skip_ws();
        let quoted = self.rest().starts_with('"');
        let p = if quoted { self.string()? } else { self.word()?.to_string() };
        let p = p.trim_start_matches('{').trim_end_matches('}').to_string();
        if is_var_path(&p) {
            Ok(p)
        } else {
            Err(ScriptError::BadPath(p))
        }
    }
}
