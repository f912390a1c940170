use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Object, Value, ValueError};
use crate::lang::refs::ref_spans;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopFrame {
    /// 1-based.
    pub iteration: u64,
    pub item: Value,
}

/// Bindings for one episode.
///
/// Names declared by the program (anchors) always live in the global map,
/// even when assigned from inside a function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableStore {
    globals: BTreeMap<String, Value>,
    anchors: BTreeSet<String>,
    scopes: Vec<BTreeMap<String, Value>>,
    loop_frames: Vec<LoopFrame>,
}

fn split_path(path: &str) -> Result<Vec<&str>, ValueError> {
    let path = path.trim();
    if path.is_empty() {
        return Err(ValueError::EmptyPath);
    }
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(ValueError::EmptyPath);
    }
    Ok(segs)
}

fn lookup<'a>(root: &'a Value, rest: &[&str], path: &str) -> Result<&'a Value, ValueError> {
    let mut cur = root;
    for seg in rest {
        cur = match cur {
            Value::Object(o) => o.get(seg).ok_or_else(|| ValueError::UnboundVariable {
                name: path.to_string(),
            })?,
            _ => {
                return Err(ValueError::PathThroughNonObject {
                    path: path.to_string(),
                })
            }
        };
    }
    Ok(cur)
}

fn assign(slot: &mut Value, rest: &[&str], value: Value, path: &str) -> Result<(), ValueError> {
    let Some((head, tail)) = rest.split_first() else {
        *slot = value;
        return Ok(());
    };
    if matches!(slot, Value::Null) {
        *slot = Value::Object(Object::new());
    }
    match slot {
        Value::Object(o) => {
            if !o.contains_key(head) {
                o.insert(*head, Value::Null);
            }
            let next = o.get_mut(head).expect("inserted above");
            assign(next, tail, value, path)
        }
        _ => Err(ValueError::PathThroughNonObject {
            path: path.to_string(),
        }),
    }
}

impl VariableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_anchors<I, S>(anchors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self::new();
        for a in anchors {
            s.declare_anchor(a);
        }
        s
    }

    /// Marks a root name as persistent. Only the first path segment counts.
    pub fn declare_anchor(&mut self, name: impl Into<String>) {
        let name = name.into();
        let root = name.split('.').next().unwrap_or_default().to_string();
        if !root.is_empty() {
            self.anchors.insert(root);
        }
    }

    pub fn is_anchor(&self, name: &str) -> bool {
        self.anchors.contains(name.split('.').next().unwrap_or_default())
    }

    pub fn anchors(&self) -> impl Iterator<Item = &str> {
        self.anchors.iter().map(String::as_str)
    }

    /// Global bindings in name order.
    pub fn globals(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.globals.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_var(&mut self, path: &str, value: Value) -> Result<(), ValueError> {
        let segs = split_path(path)?;
        let root = segs[0];
        let frame = if self.anchors.contains(root) {
            &mut self.globals
        } else {
            match self.scopes.last_mut() {
                Some(s) => s,
                None => &mut self.globals,
            }
        };
        if segs.len() > 1 {
            // Validate before creating the root so failures leave no trace.
            if let Some(existing) = frame.get(root) {
                let mut probe = existing;
                for seg in &segs[1..segs.len() - 1] {
                    match probe {
                        Value::Object(o) => match o.get(seg) {
                            Some(v) => probe = v,
                            None => break,
                        },
                        Value::Null => break,
                        _ => {
                            return Err(ValueError::PathThroughNonObject {
                                path: path.to_string(),
                            })
                        }
                    }
                }
                if !matches!(probe, Value::Object(_) | Value::Null) {
                    return Err(ValueError::PathThroughNonObject {
                        path: path.to_string(),
                    });
                }
            }
        }
        let slot = frame.entry(root.to_string()).or_insert(Value::Null);
        assign(slot, &segs[1..], value, path)
    }

    /// Resolves loop specials, then function scopes innermost-out, then
    /// globals.
    pub fn get_var(&self, path: &str) -> Result<Value, ValueError> {
        let segs = split_path(path)?;
        if segs[0] == "loop" && segs.len() == 2 {
            if let Some(f) = self.loop_frames.last() {
                match segs[1] {
                    "iteration" => return Ok(Value::Number(f.iteration.into())),
                    "item" => return Ok(f.item.clone()),
                    _ => {}
                }
            }
        }
        self.binding(&segs, path).cloned()
    }

    fn binding(&self, segs: &[&str], path: &str) -> Result<&Value, ValueError> {
        let root = segs[0];
        for scope in self.scopes.iter().rev() {
            if let Some(v) = scope.get(root) {
                return lookup(v, &segs[1..], path);
            }
        }
        match self.globals.get(root) {
            Some(v) => lookup(v, &segs[1..], path),
            None => Err(ValueError::UnboundVariable {
                name: path.to_string(),
            }),
        }
    }

    pub fn is_bound(&self, path: &str) -> bool {
        self.get_var(path).is_ok()
    }

    pub fn unset(&mut self, name: &str) {
        for scope in self.scopes.iter_mut().rev() {
            if scope.remove(name).is_some() {
                return;
            }
        }
        self.globals.remove(name);
    }

    pub fn push_scope(&mut self, bindings: impl IntoIterator<Item = (String, Value)>) {
        self.scopes.push(bindings.into_iter().collect());
    }

    pub fn pop_scope(&mut self) -> Result<BTreeMap<String, Value>, ValueError> {
        self.scopes.pop().ok_or(ValueError::EmptyScopeStack)
    }

    pub fn scope_depth(&self) -> usize {
        self.scopes.len()
    }

    pub fn push_loop(&mut self, item: Value) {
        self.loop_frames.push(LoopFrame { iteration: 1, item });
    }

    /// Advances the innermost loop to its next iteration.
    pub fn next_iteration(&mut self, item: Value) -> Result<u64, ValueError> {
        let f = self.loop_frames.last_mut().ok_or(ValueError::EmptyLoopStack)?;
        f.iteration += 1;
        f.item = item;
        Ok(f.iteration)
    }

    pub fn pop_loop(&mut self) -> Result<LoopFrame, ValueError> {
        self.loop_frames.pop().ok_or(ValueError::EmptyLoopStack)
    }

    pub fn loop_frames(&self) -> &[LoopFrame] {
        &self.loop_frames
    }

    /// Current values of every bound anchor, in name order.
    pub fn anchor_values(&self) -> Vec<(String, Value)> {
        self.anchors
            .iter()
            .filter_map(|a| self.globals.get(a).map(|v| (a.clone(), v.clone())))
            .collect()
    }

    /// Drops every non-anchor global and every scope. Anchors and loop
    /// frames are kept.
    pub fn prune(&mut self) {
        let anchors = &self.anchors;
        self.globals
            .retain(|k, _| anchors.contains(k));
        self.scopes.clear();
    }
}

/// Replaces every `{path}` reference with the canonical print of its value.
pub fn interpolate(template: &str, store: &VariableStore) -> Result<String, ValueError> {
    let spans = ref_spans(template)?;
    let mut out = String::with_capacity(template.len());
    let mut pos = 0;
    for (start, end, path) in spans {
        out.push_str(&template[pos..start]);
        out.push_str(&store.get_var(&path)?.print());
        pos = end;
    }
    out.push_str(&template[pos..]);
    Ok(out)
}

/// Like [`interpolate`] but leaves unbound references in place. Unbalanced
/// braces leave the template unchanged.
pub fn interpolate_partial(template: &str, store: &VariableStore) -> String {
    let Ok(spans) = ref_spans(template) else {
        return template.to_string();
    };
    let mut out = String::with_capacity(template.len());
    let mut pos = 0;
    for (start, end, path) in spans {
        out.push_str(&template[pos..start]);
        match store.get_var(&path) {
            Ok(v) => out.push_str(&v.print()),
            Err(_) => out.push_str(&template[start..end]),
        }
        pos = end;
    }
    out.push_str(&template[pos..]);
    out
}
