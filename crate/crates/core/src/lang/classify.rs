use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::lines::SourceLine;
use super::refs::ref_spans;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepeatCount {
    Literal(u64),
    Var(String),
}

/// A declared function parameter; the type hint is recorded, never enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub hint: Option<String>,
}

/// `{param} as <value>` in a function call. `value` is raw statement text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallArg {
    pub param: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatementKind {
    ActionStep,
    Assignment { target: String },
    If { condition: String },
    ElseIf { condition: String },
    Else,
    While { condition: String },
    RepeatN { count: RepeatCount },
    ForEach { collection: String, item: Option<String> },
    FunctionDef { name: String },
    FunctionInputs { params: Vec<Param> },
    FunctionReturns { value: Option<String> },
    FunctionCall { name: String, args: Vec<CallArg>, result: Option<String> },
    Comment,
}

/// Field-less discriminant of [`StatementKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    ActionStep,
    Assignment,
    If,
    ElseIf,
    Else,
    While,
    RepeatN,
    ForEach,
    FunctionDef,
    FunctionInputs,
    FunctionReturns,
    FunctionCall,
    Comment,
}

impl KindTag {
    pub fn as_str(self) -> &'static str {
        match self {
            KindTag::ActionStep => "action_step",
            KindTag::Assignment => "assignment",
            KindTag::If => "if",
            KindTag::ElseIf => "else_if",
            KindTag::Else => "else",
            KindTag::While => "while",
            KindTag::RepeatN => "repeat_n",
            KindTag::ForEach => "for_each",
            KindTag::FunctionDef => "function_def",
            KindTag::FunctionInputs => "function_inputs",
            KindTag::FunctionReturns => "function_returns",
            KindTag::FunctionCall => "function_call",
            KindTag::Comment => "comment",
        }
    }
}

impl StatementKind {
    pub fn tag(&self) -> KindTag {
        match self {
            StatementKind::ActionStep => KindTag::ActionStep,
            StatementKind::Assignment { .. } => KindTag::Assignment,
            StatementKind::If { .. } => KindTag::If,
            StatementKind::ElseIf { .. } => KindTag::ElseIf,
            StatementKind::Else => KindTag::Else,
            StatementKind::While { .. } => KindTag::While,
            StatementKind::RepeatN { .. } => KindTag::RepeatN,
            StatementKind::ForEach { .. } => KindTag::ForEach,
            StatementKind::FunctionDef { .. } => KindTag::FunctionDef,
            StatementKind::FunctionInputs { .. } => KindTag::FunctionInputs,
            StatementKind::FunctionReturns { .. } => KindTag::FunctionReturns,
            StatementKind::FunctionCall { .. } => KindTag::FunctionCall,
            StatementKind::Comment => KindTag::Comment,
        }
    }

    /// Kinds that must own an indented body.
    pub fn opens_block(&self) -> bool {
        matches!(
            self,
            StatementKind::If { .. }
                | StatementKind::ElseIf { .. }
                | StatementKind::Else
                | StatementKind::While { .. }
                | StatementKind::RepeatN { .. }
                | StatementKind::ForEach { .. }
                | StatementKind::FunctionDef { .. }
        )
    }

    pub fn is_loop(&self) -> bool {
        matches!(
            self,
            StatementKind::While { .. } | StatementKind::RepeatN { .. } | StatementKind::ForEach { .. }
        )
    }

    pub fn is_branch(&self) -> bool {
        matches!(
            self,
            StatementKind::If { .. } | StatementKind::ElseIf { .. } | StatementKind::Else
        )
    }
}

/// Result of classifying one line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub kind: StatementKind,
    pub var_reads: Vec<String>,
    pub var_writes: Vec<String>,
}

type Span = (usize, usize, String);

fn header_body(text: &str) -> &str {
    let t = text.trim_end();
    t.strip_suffix(':').unwrap_or(t).trim_end()
}

fn strip_prefix_ci<'a>(text: &'a str, lower: &str, prefix: &str) -> Option<&'a str> {
    if lower.starts_with(prefix) {
        Some(&text[prefix.len()..])
    } else {
        None
    }
}

fn reads_except(spans: &[Span], skip: &[usize]) -> Vec<String> {
    spans
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, s)| s.2.clone())
        .collect()
}

/// Index of a span that ends the (colon/period-trimmed) text and is preceded
/// by the word `as`.
fn trailing_as(text: &str, spans: &[Span]) -> Option<usize> {
    let end = text.trim_end().trim_end_matches([':', '.']).trim_end().len();
    let (i, span) = spans.iter().enumerate().next_back()?;
    if span.1 != end {
        return None;
    }
    let before = text[..span.0].trim_end();
    let head = before.strip_suffix("as").or_else(|| before.strip_suffix("AS"))?;
    match head.chars().last() {
        None => Some(i),
        Some(c) if c.is_whitespace() || c == ',' => Some(i),
        _ => None,
    }
}

fn first_span_after(spans: &[Span], pos: usize) -> Option<usize> {
    spans.iter().position(|s| s.0 >= pos)
}

fn quoted_or_word(text: &str) -> String {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix('"') {
        if let Some(end) = rest.find('"') {
            return rest[..end].to_string();
        }
    }
    t.split(|c: char| c.is_whitespace() || c == ',' || c == ':')
        .next()
        .unwrap_or("")
        .to_string()
}

fn parse_repeat(text: &str, lower: &str, spans: &[Span]) -> Option<RepeatCount> {
    let start = "repeat ".len();
    let end = lower.find(" times")?;
    if end < start {
        return None;
    }
    if let Some(s) = spans.iter().find(|s| s.0 >= start && s.1 <= end) {
        return Some(RepeatCount::Var(s.2.clone()));
    }
    text[start..end]
        .split_whitespace()
        .find_map(|w| w.parse::<u64>().ok())
        .map(RepeatCount::Literal)
}

fn parse_foreach(text: &str, lower: &str, spans: &[Span]) -> Option<(String, Option<String>, Vec<usize>)> {
    if spans.is_empty() {
        return None;
    }
    if let Some(item_idx) = trailing_as(header_body(text), spans) {
        let coll_idx = (0..spans.len()).find(|&i| i != item_idx)?;
        return Some((spans[coll_idx].2.clone(), Some(spans[item_idx].2.clone()), alloc::vec![item_idx]));
    }
    // `for each {item} in {collection}`
    if let Some(in_pos) = lower.find(" in ") {
        let item_idx = spans.iter().position(|s| s.1 <= in_pos);
        let coll_idx = first_span_after(spans, in_pos);
        if let (Some(item_idx), Some(coll_idx)) = (item_idx, coll_idx) {
            return Some((spans[coll_idx].2.clone(), Some(spans[item_idx].2.clone()), alloc::vec![item_idx]));
        }
    }
    Some((spans[0].2.clone(), None, alloc::vec![]))
}

fn parse_params(text: &str, spans: &[Span]) -> Vec<Param> {
    spans
        .iter()
        .map(|s| {
            let rest = text[s.1..].trim_start();
            let hint = rest
                .strip_prefix('(')
                .and_then(|r| r.find(')').map(|e| r[..e].trim().to_string()));
            Param { name: s.2.clone(), hint }
        })
        .collect()
}

/// Splits `text` at top-level (unquoted) occurrences of `,` or ` and `.
fn split_args(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let bytes = text.as_bytes();
    let mut in_quotes = false;
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'"' {
            in_quotes = !in_quotes;
        } else if !in_quotes {
            if b == b',' {
                parts.push(&text[start..i]);
                start = i + 1;
            } else if text[i..].starts_with(" and ") {
                parts.push(&text[start..i]);
                i += 5;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    parts.push(&text[start..]);
    parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}

fn parse_call(text: &str, lower: &str, spans: &[Span], name_at: usize) -> Classified {
    let name = quoted_or_word(&text[name_at..]);
    let body = header_body(text);
    let lower_body = &lower[..body.len()];
    // `{p} as {v}` at the end is an argument unless the final clause names a result
    let result_idx = trailing_as(body, spans).filter(|&r| {
        let before = &lower_body[..spans[r].0];
        let clause = &before[before.rfind(',').map_or(0, |c| c + 1)..];
        ["result", "save", "record", "store"].iter().any(|w| clause.contains(w))
    });

    let mut args = Vec::new();
    let mut param_idx = Vec::new();
    if let Some(with) = lower_body.find(" with ") {
        let stop = match result_idx {
            Some(r) => {
                let before = &lower_body[..spans[r].0];
                before.rfind(", save").or_else(|| before.rfind(" save")).or_else(|| before.rfind(',')).unwrap_or(spans[r].0)
            }
            None => body.len(),
        };
        let region_start = with + " with ".len();
        if stop > region_start {
            let region = &text[region_start..stop];
            for piece in split_args(region) {
                let lp = piece.to_ascii_lowercase();
                let Some(as_pos) = lp.find(" as ") else { continue };
                let Some(param) = super::refs::normalize_ref(
                    piece[..as_pos].trim().trim_start_matches('{').trim_end_matches('}'),
                ) else {
                    continue;
                };
                let value = piece[as_pos + 4..].trim().to_string();
                // remember which span names the parameter
                let abs = piece.as_ptr() as usize - text.as_ptr() as usize;
                if let Some(i) = spans.iter().position(|s| s.0 >= abs && s.1 <= abs + as_pos) {
                    param_idx.push(i);
                }
                args.push(CallArg { param, value });
            }
        }
    }

    let mut skip = param_idx;
    let mut writes = Vec::new();
    let result = result_idx.map(|r| {
        skip.push(r);
        writes.push(spans[r].2.clone());
        spans[r].2.clone()
    });
    Classified {
        kind: StatementKind::FunctionCall { name, args, result },
        var_reads: reads_except(spans, &skip),
        var_writes: writes,
    }
}

fn assignment(spans: &[Span], target: usize) -> Classified {
    Classified {
        kind: StatementKind::Assignment { target: spans[target].2.clone() },
        var_reads: reads_except(spans, &[target]),
        var_writes: alloc::vec![spans[target].2.clone()],
    }
}

fn block(kind: StatementKind, spans: &[Span]) -> Classified {
    Classified { kind, var_reads: reads_except(spans, &[]), var_writes: Vec::new() }
}

/// Classifies one line by a fixed priority table: block keywords, then
/// function calls, then assignment phrasings, then the action-step fallback.
pub fn classify_statement(line: &SourceLine) -> Classified {
    classify_text(&line.content)
}

pub(crate) fn classify_text(text: &str) -> Classified {
    let text = text.trim();
    let lower = text.to_ascii_lowercase();
    let spans = ref_spans(text).unwrap_or_default();
    let body = header_body(text);

    // 1. block keywords
    for prefix in ["else, if ", "else if ", "elif ", "otherwise, if ", "otherwise if "] {
        if let Some(cond) = strip_prefix_ci(body, &lower, prefix) {
            return block(StatementKind::ElseIf { condition: cond.trim().to_string() }, &spans);
        }
    }
    let lb = header_body(&lower);
    if lb == "else" || lb == "otherwise" || lb == "else," {
        return block(StatementKind::Else, &spans);
    }
    if let Some(cond) = strip_prefix_ci(body, &lower, "if ") {
        return block(StatementKind::If { condition: cond.trim().to_string() }, &spans);
    }
    if let Some(cond) = strip_prefix_ci(body, &lower, "while ") {
        return block(StatementKind::While { condition: cond.trim().to_string() }, &spans);
    }
    if lower.starts_with("repeat ") {
        if let Some(count) = parse_repeat(text, &lower, &spans) {
            return block(StatementKind::RepeatN { count }, &spans);
        }
    }
    if ["iterate ", "for each ", "for every ", "loop over ", "loop through "]
        .iter()
        .any(|p| lower.starts_with(p))
    {
        if let Some((collection, item, skip)) = parse_foreach(text, &lower, &spans) {
            let writes = item.iter().cloned().collect();
            return Classified {
                kind: StatementKind::ForEach { collection, item },
                var_reads: reads_except(&spans, &skip),
                var_writes: writes,
            };
        }
    }
    if let Some(rest) = strip_prefix_ci(body, &lower, "define function named ")
        .or_else(|| strip_prefix_ci(body, &lower, "define function "))
    {
        return block(StatementKind::FunctionDef { name: quoted_or_word(rest) }, &spans);
    }
    if lower.starts_with("function inputs") {
        let params = parse_params(text, &spans);
        let writes = params.iter().map(|p| p.name.clone()).collect();
        return Classified {
            kind: StatementKind::FunctionInputs { params },
            var_reads: Vec::new(),
            var_writes: writes,
        };
    }
    if lower.starts_with("function returns") || lower.starts_with("function return ") {
        let value = spans.first().map(|s| s.2.clone());
        return block(StatementKind::FunctionReturns { value }, &spans);
    }

    // 2. function calls: `save result as {v}` is their result binding
    for prefix in ["execute function ", "call function ", "run function "] {
        if lower.starts_with(prefix) {
            return parse_call(text, &lower, &spans, prefix.len());
        }
    }

    // 3. assignment phrasings
    if let Some(rest) = strip_prefix_ci(text, &lower, "set variable ")
        .or_else(|| strip_prefix_ci(text, &lower, "set "))
    {
        let offset = text.len() - rest.len();
        if rest.trim_start().starts_with('{') {
            if let Some(i) = first_span_after(&spans, offset) {
                if lower[spans[i].1..].trim_start().starts_with("to ") {
                    return assignment(&spans, i);
                }
            }
        }
    }
    if lower.starts_with("store ") {
        if let Some(into) = lower.rfind(" into ") {
            if let Some(i) = first_span_after(&spans, into) {
                return assignment(&spans, i);
            }
        }
    }
    if lower.starts_with("create an object ") || lower.starts_with("create object ") {
        if let Some(i) = spans.first().map(|_| 0) {
            return assignment(&spans, i);
        }
    }
    if let Some(i) = trailing_as(body, &spans) {
        return assignment(&spans, i);
    }

    // 4. fallback
    Classified {
        kind: StatementKind::ActionStep,
        var_reads: reads_except(&spans, &[]),
        var_writes: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(text: &str) -> KindTag {
        classify_text(text).kind.tag()
    }

    #[test]
    fn store_into() {
        let c = classify_text("store 100 into {initialScore}");
        assert_eq!(c.kind, StatementKind::Assignment { target: "initialScore".into() });
        assert_eq!(c.var_writes, ["initialScore"]);
        assert!(c.var_reads.is_empty());
    }

    #[test]
    fn repeat_times() {
        assert_eq!(
            classify_text("repeat 5 times:").kind,
            StatementKind::RepeatN { count: RepeatCount::Literal(5) }
        );
        assert_eq!(
            classify_text("repeat {n} times:").kind,
            StatementKind::RepeatN { count: RepeatCount::Var("n".into()) }
        );
    }

    #[test]
    fn fallback_action_step() {
        let c = classify_text("frobnicate the {widget} gently");
        assert_eq!(c.kind, StatementKind::ActionStep);
        assert_eq!(c.var_reads, ["widget"]);
    }

    #[test]
    fn assignment_phrasings() {
        for (text, target) in [
            ("set variable {userName} to \"Alice\"", "userName"),
            ("set {userCount} to 0", "userCount"),
            ("calculate {initialScore} + 50, record as {finalScore}", "finalScore"),
            ("record list \"apples\", \"bananas\", \"cherries\" as {fruitBasket}", "fruitBasket"),
            ("create an object {product} with \"name\" as \"Laptop\" and \"price\" as 1200", "product"),
            ("read table \"sales_data.csv\" as {salesReport}", "salesReport"),
            ("ask user \"Enter your age:\", get response as {ageInput}", "ageInput"),
            ("convert {ageInput} to number, as {userAge}", "userAge"),
            ("Read the items in the note and record them as {task_list}", "task_list"),
        ] {
            let c = classify_text(text);
            assert_eq!(c.kind, StatementKind::Assignment { target: target.into() }, "{text}");
        }
        let c = classify_text("calculate {initialScore} + 50, record as {finalScore}");
        assert_eq!(c.var_reads, ["initialScore"]);
    }

    #[test]
    fn block_keywords_win_over_assignment() {
        let c = classify_text("iterate through each item in {fruitBasket} as {fruit}:");
        assert_eq!(
            c.kind,
            StatementKind::ForEach { collection: "fruitBasket".into(), item: Some("fruit".into()) }
        );
        assert_eq!(c.var_reads, ["fruitBasket"]);
        assert_eq!(c.var_writes, ["fruit"]);
        assert_eq!(
            classify_text("Iterate over {task_list}").kind,
            StatementKind::ForEach { collection: "task_list".into(), item: None }
        );
        assert_eq!(
            classify_text("for each {task} in {task_list}:").kind,
            StatementKind::ForEach { collection: "task_list".into(), item: Some("task".into()) }
        );
    }

    #[test]
    fn conditionals() {
        assert_eq!(
            classify_text("if {userAge} < 18:").kind,
            StatementKind::If { condition: "{userAge} < 18".into() }
        );
        assert_eq!(
            classify_text("else, if {userAge} is between 18 and 65:").kind,
            StatementKind::ElseIf { condition: "{userAge} is between 18 and 65".into() }
        );
        assert_eq!(tag("else:"), KindTag::Else);
        assert_eq!(
            classify_text("while {systemStatus} is \"active\":").kind,
            StatementKind::While { condition: "{systemStatus} is \"active\"".into() }
        );
    }

    #[test]
    fn function_constructs() {
        assert_eq!(
            classify_text("define function named \"calculateArea\":").kind,
            StatementKind::FunctionDef { name: "calculateArea".into() }
        );
        let c = classify_text("function inputs: {length} (number), {width} (number)");
        assert_eq!(
            c.kind,
            StatementKind::FunctionInputs {
                params: alloc::vec![
                    Param { name: "length".into(), hint: Some("number".into()) },
                    Param { name: "width".into(), hint: Some("number".into()) },
                ]
            }
        );
        assert_eq!(
            classify_text("function returns {area}").kind,
            StatementKind::FunctionReturns { value: Some("area".into()) }
        );
    }

    #[test]
    fn call_with_args_and_result() {
        let c = classify_text(
            "execute function \"calculateArea\", with {length} as 10 and {width} as 5, save result as {roomArea}",
        );
        assert_eq!(
            c.kind,
            StatementKind::FunctionCall {
                name: "calculateArea".into(),
                args: alloc::vec![
                    CallArg { param: "length".into(), value: "10".into() },
                    CallArg { param: "width".into(), value: "5".into() },
                ],
                result: Some("roomArea".into()),
            }
        );
        assert!(c.var_reads.is_empty());
        assert_eq!(c.var_writes, ["roomArea"]);

        let c = classify_text("execute function \"addExpense\" with {entry} as {item}");
        match c.kind {
            StatementKind::FunctionCall { args, result, .. } => {
                assert_eq!(args, [CallArg { param: "entry".into(), value: "{item}".into() }]);
                assert_eq!(result, None);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.var_reads, ["item"]);
    }

    #[test]
    fn plain_sentences_stay_actions() {
        for text in [
            "tell user \"Hello, world!\"",
            "send a greeting message to user",
            "save {summary} to file \"summary.txt\"",
            "wait 10 seconds",
            "print(\"Hello, world!\")",
            "set the alarm for 7am",
        ] {
            assert_eq!(tag(text), KindTag::ActionStep, "{text}");
        }
    }
}
