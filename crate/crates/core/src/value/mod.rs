//! Dynamic values and the per-episode variable store.

mod decimal;
mod store;

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lang::RefError;

pub use decimal::{Decimal, DecimalParseError};
pub use store::{interpolate, interpolate_partial, LoopFrame, VariableStore};

pub(crate) use decimal::parse_json_number;

const TABLE_MARKER: &str = "$table";
const COLUMNS_MARKER: &str = "$columns";
// serde_json hands arbitrary-precision numbers to visitors as a one-entry map
// under this key.
const JSON_NUMBER_TOKEN: &str = "$serde_json::private::Number";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("`{path}` passes through a value that is not an object")]
    PathThroughNonObject { path: String },
    #[error("variable `{name}` is not bound")]
    UnboundVariable { name: String },
    #[error("cannot convert {from} to {to}: {reason}")]
    CoercionFailed {
        from: ValueKind,
        to: ValueKind,
        reason: String,
    },
    #[error("empty variable path")]
    EmptyPath,
    #[error("no function scope to pop")]
    EmptyScopeStack,
    #[error("no loop frame to pop")]
    EmptyLoopStack,
    #[error("table rows do not share a column set: {0}")]
    TableShape(String),
    #[error(transparent)]
    Refs(#[from] RefError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Null,
    Boolean,
    Number,
    Text,
    List,
    Object,
    Table,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Null => "null",
            ValueKind::Boolean => "boolean",
            ValueKind::Number => "number",
            ValueKind::Text => "text",
            ValueKind::List => "list",
            ValueKind::Object => "object",
            ValueKind::Table => "table",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Insertion-ordered map from names to values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Object(Vec<(String, Value)>);

impl Object {
    pub fn new() -> Self {
        Object(Vec::new())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Value> {
        self.0.iter_mut().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Replaces in place when the key exists, appends otherwise.
    pub fn insert(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        match self.get_mut(&key) {
            Some(slot) => *slot = value,
            None => self.0.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        let i = self.0.iter().position(|(k, _)| k == key)?;
        Some(self.0.remove(i).1)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn same_keys(&self, columns: &[String]) -> bool {
        self.len() == columns.len() && columns.iter().all(|c| self.contains_key(c))
    }
}

impl<K: Into<String>> FromIterator<(K, Value)> for Object {
    fn from_iter<T: IntoIterator<Item = (K, Value)>>(iter: T) -> Self {
        let mut o = Object::new();
        for (k, v) in iter {
            o.insert(k, v);
        }
        o
    }
}

/// Rows of objects that all expose the same columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Object>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    /// Builds a table from objects; column order follows the first row.
    pub fn from_rows(rows: Vec<Object>) -> Result<Self, ValueError> {
        let columns: Vec<String> = match rows.first() {
            Some(r) => r.keys().map(ToOwned::to_owned).collect(),
            None => Vec::new(),
        };
        let mut t = Table::new(columns);
        for r in rows {
            t.push_row(r)?;
        }
        Ok(t)
    }

    /// Builds a table of text cells from a header and string records.
    pub fn from_records(header: Vec<String>, records: Vec<Vec<String>>) -> Result<Self, ValueError> {
        let mut t = Table::new(header);
        for (i, rec) in records.into_iter().enumerate() {
            if rec.len() != t.columns.len() {
                return Err(ValueError::TableShape(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    rec.len(),
                    t.columns.len()
                )));
            }
            let row = t.columns.iter().cloned().zip(rec.into_iter().map(Value::Text)).collect();
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn push_row(&mut self, row: Object) -> Result<(), ValueError> {
        if !row.same_keys(&self.columns) {
            return Err(ValueError::TableShape(format!(
                "row keys [{}] differ from columns [{}]",
                row.keys().collect::<Vec<_>>().join(", "),
                self.columns.join(", ")
            )));
        }
        // Keep cells in column order.
        let ordered = self
            .columns
            .iter()
            .map(|c| (c.clone(), row.get(c).cloned().unwrap_or(Value::Null)))
            .collect();
        self.rows.push(ordered);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Object] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub enum Value {
    #[default]
    Null,
    Boolean(bool),
    Number(Decimal),
    Text(String),
    List(Vec<Value>),
    Object(Object),
    Table(Table),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn number(n: impl Into<Decimal>) -> Self {
        Value::Number(n.into())
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Null => ValueKind::Null,
            Value::Boolean(_) => ValueKind::Boolean,
            Value::Number(_) => ValueKind::Number,
            Value::Text(_) => ValueKind::Text,
            Value::List(_) => ValueKind::List,
            Value::Object(_) => ValueKind::Object,
            Value::Table(_) => ValueKind::Table,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<&Decimal> {
        match self {
            Value::Number(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&Object> {
        match self {
            Value::Object(o) => Some(o),
            _ => None,
        }
    }

    /// Items of a list, or the rows of a table as objects.
    pub fn items(&self) -> Option<Vec<Value>> {
        match self {
            Value::List(l) => Some(l.clone()),
            Value::Table(t) => Some(t.rows.iter().cloned().map(Value::Object).collect()),
            _ => None,
        }
    }

    /// Loose truthiness used by branch conditions.
    pub fn truthy(&self) -> bool {
        match self {
            Value::Null => false,
            Value::Boolean(b) => *b,
            Value::Number(n) => !n.is_zero(),
            Value::Text(s) => !s.is_empty(),
            Value::List(l) => !l.is_empty(),
            Value::Object(o) => !o.is_empty(),
            Value::Table(t) => !t.is_empty(),
        }
    }

    /// Canonical text form: text is printed raw, numbers in canonical decimal
    /// form, everything else as compact JSON.
    pub fn print(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Boolean(b) => b.to_string(),
            Value::Null => "null".to_string(),
            _ => self.to_json(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Value, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn coerce(&self, target: ValueKind) -> Result<Value, ValueError> {
        coerce(self, target)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Boolean(b)
    }
}

impl From<Decimal> for Value {
    fn from(n: Decimal) -> Self {
        Value::Number(n)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Number(n.into())
    }
}

impl From<Object> for Value {
    fn from(o: Object) -> Self {
        Value::Object(o)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}

fn parse_number_text(s: &str) -> Option<Decimal> {
    let t = s.trim();
    let t = t.strip_prefix('$').unwrap_or(t);
    t.parse().ok()
}

pub fn coerce(value: &Value, target: ValueKind) -> Result<Value, ValueError> {
    let from = value.kind();
    if from == target {
        return Ok(value.clone());
    }
    let fail = |reason: String| ValueError::CoercionFailed { from, to: target, reason };
    match (value, target) {
        (_, ValueKind::Text) => Ok(Value::Text(value.print())),
        (Value::Text(s), ValueKind::Number) => parse_number_text(s)
            .map(Value::Number)
            .ok_or_else(|| fail(format!("the text \"{s}\" is not a number"))),
        (Value::Boolean(b), ValueKind::Number) => Ok(Value::number(i64::from(*b))),
        (Value::Number(n), ValueKind::Boolean) => Ok(Value::Boolean(!n.is_zero())),
        (Value::Text(s), ValueKind::Boolean) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Ok(Value::Boolean(true)),
            "false" | "no" => Ok(Value::Boolean(false)),
            _ => Err(fail(format!("the text \"{s}\" is neither true nor false"))),
        },
        (Value::Text(s), ValueKind::List | ValueKind::Object | ValueKind::Table) => {
            let parsed = Value::from_json(s)
                .map_err(|_| fail(format!("the text \"{s}\" is not structured data")))?;
            if parsed.kind() == ValueKind::Text {
                return Err(fail(format!("the text \"{s}\" is not structured data")));
            }
            coerce(&parsed, target)
        }
        (Value::List(items), ValueKind::Table) => {
            let mut rows = Vec::with_capacity(items.len());
            for (i, it) in items.iter().enumerate() {
                match it {
                    Value::Object(o) => rows.push(o.clone()),
                    other => {
                        return Err(fail(format!("item {} is a {}, not an object", i + 1, other.kind())))
                    }
                }
            }
            Table::from_rows(rows)
                .map(Value::Table)
                .map_err(|e| fail(e.to_string()))
        }
        (Value::Table(t), ValueKind::List) => {
            Ok(Value::List(t.rows.iter().cloned().map(Value::Object).collect()))
        }
        (Value::Null, _) => Err(fail("the value is empty".to_string())),
        _ => Err(fail(format!("a {from} has no {target} form"))),
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_unit(),
            Value::Boolean(b) => serializer.serialize_bool(*b),
            Value::Number(n) => n.serialize(serializer),
            Value::Text(s) => serializer.serialize_str(s),
            Value::List(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for it in items {
                    seq.serialize_element(it)?;
                }
                seq.end()
            }
            Value::Object(o) => o.serialize(serializer),
            Value::Table(t) => {
                let with_columns = t.rows.is_empty() && !t.columns.is_empty();
                let mut map = serializer.serialize_map(Some(1 + usize::from(with_columns)))?;
                map.serialize_entry(TABLE_MARKER, &t.rows)?;
                if with_columns {
                    map.serialize_entry(COLUMNS_MARKER, &t.columns)?;
                }
                map.end()
            }
        }
    }
}

impl Serialize for Object {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

struct ValueVisitor;

impl<'de> Visitor<'de> for ValueVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
        Value::deserialize(d)
    }

    fn visit_bool<E>(self, b: bool) -> Result<Value, E> {
        Ok(Value::Boolean(b))
    }

    fn visit_i64<E>(self, n: i64) -> Result<Value, E> {
        Ok(Value::number(n))
    }

    fn visit_u64<E>(self, n: u64) -> Result<Value, E> {
        Ok(Value::Number(n.into()))
    }

    fn visit_f64<E: de::Error>(self, n: f64) -> Result<Value, E> {
        parse_json_number(&format!("{n}"))
            .map(Value::Number)
            .map_err(E::custom)
    }

    fn visit_str<E>(self, s: &str) -> Result<Value, E> {
        Ok(Value::Text(s.to_string()))
    }

    fn visit_string<E>(self, s: String) -> Result<Value, E> {
        Ok(Value::Text(s))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut items = Vec::new();
        while let Some(v) = seq.next_element::<Value>()? {
            items.push(v);
        }
        Ok(Value::List(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut obj = Object::new();
        while let Some(key) = map.next_key::<String>()? {
            if key == JSON_NUMBER_TOKEN {
                let text: String = map.next_value()?;
                return parse_json_number(&text)
                    .map(Value::Number)
                    .map_err(de::Error::custom);
            }
            let v: Value = map.next_value()?;
            obj.insert(key, v);
        }
        if let Some(Value::List(rows)) = obj.get(TABLE_MARKER) {
            let mut objects = Vec::with_capacity(rows.len());
            for r in rows {
                match r {
                    Value::Object(o) => objects.push(o.clone()),
                    _ => return Err(de::Error::custom("table rows must be objects")),
                }
            }
            let mut table = Table::from_rows(objects).map_err(de::Error::custom)?;
            if table.rows.is_empty() {
                if let Some(Value::List(cols)) = obj.get(COLUMNS_MARKER) {
                    table.columns = cols.iter().map(Value::print).collect();
                }
            }
            return Ok(Value::Table(table));
        }
        Ok(Value::Object(obj))
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(ValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn num(s: &str) -> Value {
        Value::Number(s.parse().unwrap())
    }

    #[test]
    fn coerce_examples() {
        assert_eq!(coerce(&Value::text("123"), ValueKind::Number).unwrap(), num("123"));
        assert_eq!(coerce(&num("5"), ValueKind::Text).unwrap(), Value::text("5"));
        let err = coerce(&Value::text("abc"), ValueKind::Number).unwrap_err();
        assert!(matches!(err, ValueError::CoercionFailed { .. }));
        assert!(err.to_string().contains("\"abc\" is not a number"));
        assert_eq!(coerce(&num("0"), ValueKind::Boolean).unwrap(), Value::Boolean(false));
        assert_eq!(coerce(&num("2.5"), ValueKind::Boolean).unwrap(), Value::Boolean(true));
    }

    #[test]
    fn list_of_objects_to_table() {
        let row = |a: &str| -> Value {
            Value::Object([("name", Value::text(a)), ("qty", num("1"))].into_iter().collect())
        };
        let list = Value::List(vec![row("a"), row("b")]);
        let t = coerce(&list, ValueKind::Table).unwrap();
        match &t {
            Value::Table(t) => {
                assert_eq!(t.columns(), ["name", "qty"]);
                assert_eq!(t.len(), 2);
            }
            _ => panic!(),
        }
        let bad = Value::List(vec![row("a"), Value::Object(Object::new())]);
        assert!(coerce(&bad, ValueKind::Table).is_err());
    }

    #[test]
    fn object_order_preserved_in_json() {
        let o: Object = [("zeta", num("1")), ("alpha", Value::text("x"))].into_iter().collect();
        let v = Value::Object(o);
        assert_eq!(v.to_json(), r#"{"zeta":1,"alpha":"x"}"#);
        let back = Value::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn table_marker_round_trip() {
        let t = Table::from_records(
            vec!["region".into(), "amount".into()],
            vec![vec!["north".into(), "10".into()]],
        )
        .unwrap();
        let v = Value::Table(t);
        let json = v.to_json();
        assert_eq!(json, r#"{"$table":[{"region":"north","amount":"10"}]}"#);
        assert_eq!(Value::from_json(&json).unwrap(), v);
        let empty = Value::Table(Table::new(vec!["a".into()]));
        assert_eq!(Value::from_json(&empty.to_json()).unwrap(), empty);
    }

    #[test]
    fn big_numbers_survive_json() {
        let v = Value::from_json("[0.1, 123456789012345678901234567890.5]").unwrap();
        assert_eq!(v.to_json(), "[0.1,123456789012345678901234567890.5]");
    }

    #[test]
    fn print_forms() {
        assert_eq!(Value::text("hi").print(), "hi");
        assert_eq!(num("1.50").print(), "1.5");
        assert_eq!(Value::Null.print(), "null");
        assert_eq!(Value::List(vec![Value::text("a")]).print(), r#"["a"]"#);
    }
}
