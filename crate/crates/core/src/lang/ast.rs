use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::classify::{classify_statement, StatementKind};
use super::lines::{tokenize_lines, SourceLine, TokenizeError};
use super::refs::{extract_variable_refs, RefError};

/// Dotted child-index path of a statement, e.g. `2.1.3`.
///
/// Ordering compares the numeric segments, so `2` sorts before `10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(String);

impl StepId {
    pub fn new(s: impl Into<String>) -> Self {
        StepId(s.into())
    }

    fn child(parent: Option<&StepId>, index: usize) -> Self {
        match parent {
            Some(p) => StepId(format!("{}.{}", p.0, index)),
            None => StepId(index.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.split('.').map(|s| s.parse().unwrap_or(0))
    }

    pub fn depth(&self) -> usize {
        self.0.split('.').count()
    }

    pub fn parent(&self) -> Option<StepId> {
        self.0.rfind('.').map(|i| StepId(self.0[..i].to_string()))
    }

    /// True when `self` lies strictly inside the statement `ancestor`.
    pub fn is_descendant_of(&self, ancestor: &StepId) -> bool {
        self.0.len() > ancestor.0.len()
            && self.0.starts_with(ancestor.0.as_str())
            && self.0.as_bytes()[ancestor.0.len()] == b'.'
    }
}

impl Ord for StepId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.segments().cmp(other.segments())
    }
}

impl PartialOrd for StepId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub step_id: StepId,
    pub kind: StatementKind,
    pub text: String,
    pub var_reads: Vec<String>,
    pub var_writes: Vec<String>,
    pub children: Vec<Statement>,
    /// Source line the statement came from.
    pub line: usize,
}

impl Statement {
    /// Depth-first walk over this statement and its descendants.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a Statement>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramAst {
    pub statements: Vec<Statement>,
    /// Function name to the step id of its definition.
    pub functions: BTreeMap<String, StepId>,
    /// Call sites whose target function is not defined.
    pub unresolved_calls: Vec<StepId>,
    /// SHA-256 of the canonical print.
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("line {line}: {source}")]
    Braces { line: usize, source: RefError },
    #[error("line {line}: `else` without a preceding `if`")]
    OrphanElse { line: usize },
    #[error("line {line}: block header has no indented body")]
    DanglingBlock { line: usize },
    #[error("line {line}: unexpected indentation")]
    UnexpectedIndent { line: usize },
    #[error("line {line}: function `{name}` defined twice")]
    DuplicateFunction { line: usize, name: String },
}

struct Parser<'a> {
    lines: &'a [SourceLine],
    pos: usize,
}

impl Parser<'_> {
    fn block(&mut self, level: usize, parent: Option<&StepId>) -> Result<Vec<Statement>, ParseError> {
        let mut out: Vec<Statement> = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < level {
                break;
            }
            if line.indent > level {
                return Err(ParseError::UnexpectedIndent { line: line.index });
            }
            self.pos += 1;

            extract_variable_refs(&line.content)
                .map_err(|source| ParseError::Braces { line: line.index, source })?;
            let c = classify_statement(line);
            let step_id = StepId::child(parent, out.len() + 1);

            if matches!(c.kind, StatementKind::ElseIf { .. } | StatementKind::Else) {
                let chained = out.last().is_some_and(|prev| {
                    matches!(prev.kind, StatementKind::If { .. } | StatementKind::ElseIf { .. })
                });
                if !chained {
                    return Err(ParseError::OrphanElse { line: line.index });
                }
            }

            let has_body = self.lines.get(self.pos).is_some_and(|n| n.indent > level);
            let children = if has_body {
                let next = &self.lines[self.pos];
                let can_open = c.kind.opens_block() || line.content.ends_with(':');
                if next.indent != level + 1 || !can_open {
                    return Err(ParseError::UnexpectedIndent { line: next.index });
                }
                self.block(level + 1, Some(&step_id))?
            } else {
                Vec::new()
            };
            if c.kind.opens_block() && children.is_empty() {
                return Err(ParseError::DanglingBlock { line: line.index });
            }

            out.push(Statement {
                step_id,
                kind: c.kind,
                text: line.content.clone(),
                var_reads: c.var_reads,
                var_writes: c.var_writes,
                children,
                line: line.index,
            });
        }
        Ok(out)
    }
}

/// Parses STP source into an AST with depth-first child-index step ids.
pub fn parse_program(source: &str) -> Result<ProgramAst, ParseError> {
    let lines = tokenize_lines(source)?;
    let mut parser = Parser { lines: &lines, pos: 0 };
    let statements = parser.block(0, None)?;
    if let Some(line) = lines.get(parser.pos) {
        return Err(ParseError::UnexpectedIndent { line: line.index });
    }

    let mut all = Vec::new();
    for s in &statements {
        s.walk(&mut all);
    }
    let mut functions = BTreeMap::new();
    for s in &all {
        if let StatementKind::FunctionDef { name } = &s.kind {
            if functions.insert(name.clone(), s.step_id.clone()).is_some() {
                return Err(ParseError::DuplicateFunction { line: s.line, name: name.clone() });
            }
        }
    }
    let unresolved_calls = all
        .iter()
        .filter_map(|s| match &s.kind {
            StatementKind::FunctionCall { name, .. } if !functions.contains_key(name) => {
                Some(s.step_id.clone())
            }
            _ => None,
        })
        .collect();

    let mut program = ProgramAst {
        statements,
        functions,
        unresolved_calls,
        source_hash: String::new(),
    };
    program.source_hash = crate::hash::sha256_hex(print_program(&program).as_bytes());
    Ok(program)
}

fn print_block(stmts: &[Statement], depth: usize, out: &mut String) {
    for s in stmts {
        for _ in 0..depth {
            out.push_str("    ");
        }
        out.push_str(&s.text);
        out.push('\n');
        print_block(&s.children, depth + 1, out);
    }
}

/// Canonical text form: one statement per line, four spaces per level.
pub fn print_program(program: &ProgramAst) -> String {
    let mut out = String::new();
    print_block(&program.statements, 0, &mut out);
    out
}

impl ProgramAst {
    pub fn get(&self, id: &StepId) -> Option<&Statement> {
        let mut segs = id.segments();
        let mut cur = self.statements.get(segs.next()?.checked_sub(1)?)?;
        for i in segs {
            cur = cur.children.get(i.checked_sub(1)?)?;
        }
        Some(cur)
    }

    /// Every statement, depth first.
    pub fn all_statements(&self) -> Vec<&Statement> {
        let mut out = Vec::new();
        for s in &self.statements {
            s.walk(&mut out);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Variables the program writes outside of function parameter lists.
    /// These are the anchors that must survive every context prune.
    pub fn declared_anchors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.all_statements() {
            // Parameters and loop items are scoped to their block.
            if matches!(s.kind, StatementKind::FunctionInputs { .. } | StatementKind::ForEach { .. }) {
                continue;
            }
            for w in &s.var_writes {
                let root = w.split('.').next().unwrap_or(w).to_string();
                if !out.contains(&root) {
                    out.push(root);
                }
            }
        }
        out
    }

    /// Nesting depth of the deepest statement.
    pub fn max_depth(&self) -> usize {
        self.all_statements().iter().map(|s| s.step_id.depth()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::classify::KindTag;

    const CALCULATE_AREA: &str = "define function named \"calculateArea\":
    function inputs: {length} (number), {width} (number)
    calculate {length} * {width}, record as {area}
    function returns {area}
";

    const AGE_CHECK: &str = "ask user \"Enter your age:\", get response as {ageInput}
convert {ageInput} to number, as {userAge}
if {userAge} < 18:
    tell user \"You are a minor.\"
else, if {userAge} is between 18 and 65: # Natural language condition allowed
    tell user \"You are an adult.\"
else:
    tell user \"You are a senior citizen.\"
";

    #[test]
    fn calculate_area_listing() {
        let p = parse_program(CALCULATE_AREA).unwrap();
        assert_eq!(p.statements.len(), 1);
        let def = &p.statements[0];
        assert_eq!(def.kind.tag(), KindTag::FunctionDef);
        let kinds: Vec<_> = def.children.iter().map(|c| c.kind.tag()).collect();
        assert_eq!(kinds, [KindTag::FunctionInputs, KindTag::Assignment, KindTag::FunctionReturns]);
        assert_eq!(p.functions.get("calculateArea"), Some(&StepId::new("1")));
        assert_eq!(def.children[2].step_id.as_str(), "1.3");
    }

    #[test]
    fn age_check_chain() {
        let p = parse_program(AGE_CHECK).unwrap();
        let kinds: Vec<_> = p.statements.iter().map(|s| s.kind.tag()).collect();
        assert_eq!(
            kinds,
            [KindTag::Assignment, KindTag::Assignment, KindTag::If, KindTag::ElseIf, KindTag::Else]
        );
        assert_eq!(
            p.statements[3].kind,
            StatementKind::ElseIf { condition: "{userAge} is between 18 and 65".into() }
        );
        assert_eq!(p.statements[2].text, "if {userAge} < 18:");
        assert!(p.statements[2..].iter().all(|s| s.children.len() == 1));
    }

    #[test]
    fn orphan_else() {
        assert_eq!(
            parse_program("else:\n    tell user \"x\"\n"),
            Err(ParseError::OrphanElse { line: 1 })
        );
    }

    #[test]
    fn dangling_block() {
        assert_eq!(
            parse_program("repeat 3 times:\nsay hi\n"),
            Err(ParseError::DanglingBlock { line: 1 })
        );
    }

    #[test]
    fn body_under_plain_action_rejected() {
        assert_eq!(
            parse_program("say hi\n    say bye\n"),
            Err(ParseError::UnexpectedIndent { line: 2 })
        );
    }

    #[test]
    fn colon_action_can_own_a_block() {
        let p = parse_program(
            "execute on device \"MainBrowser\":\n    open URL \"https://en.wikipedia.org\"\n",
        )
        .unwrap();
        assert_eq!(p.statements[0].kind.tag(), KindTag::ActionStep);
        assert_eq!(p.statements[0].children.len(), 1);
    }

    #[test]
    fn step_ids_ignore_comments_and_blank_lines() {
        let a = parse_program("a\nrepeat 2 times:\n    b\n    c\n").unwrap();
        let b = parse_program("# intro\na\n\nrepeat 2 times: # loop\n\n    b\n    # x\n    c\n").unwrap();
        assert_eq!(a.statements, {
            let mut s = b.statements.clone();
            fn relines(v: &mut [Statement], src: &[Statement]) {
                for (x, y) in v.iter_mut().zip(src) {
                    x.line = y.line;
                    relines(&mut x.children, &y.children);
                }
            }
            relines(&mut s, &a.statements);
            s
        });
        assert_eq!(a.source_hash, b.source_hash);
        assert_eq!(b.get(&StepId::new("2.2")).unwrap().text, "c");
    }

    #[test]
    fn unresolved_calls_flagged() {
        let p = parse_program("execute function \"missing\"\n").unwrap();
        assert_eq!(p.unresolved_calls, [StepId::new("1")]);
    }

    #[test]
    fn duplicate_function_rejected() {
        let src = "define function named \"f\":\n    a\ndefine function named \"f\":\n    b\n";
        assert!(matches!(parse_program(src), Err(ParseError::DuplicateFunction { line: 3, .. })));
    }

    #[test]
    fn canonical_print_round_trip() {
        let src = "if {a}:\n\tx\n\trepeat 2 times:\n\t\ty\nelse:\n\tz # c\n";
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        assert_eq!(printed, "if {a}:\n    x\n    repeat 2 times:\n        y\nelse:\n    z\n");
        assert_eq!(parse_program(&printed).unwrap().statements.len(), 2);
    }

    #[test]
    fn step_id_order_is_numeric() {
        assert!(StepId::new("2") < StepId::new("10"));
        assert!(StepId::new("2.1") > StepId::new("2"));
        assert!(StepId::new("2.1.3").is_descendant_of(&StepId::new("2")));
        assert!(!StepId::new("21").is_descendant_of(&StepId::new("2")));
    }

    #[test]
    fn anchors_exclude_parameters() {
        let src = format!("{CALCULATE_AREA}execute function \"calculateArea\", with {{length}} as 10 and {{width}} as 5, save result as {{roomArea}}\n");
        let p = parse_program(&src).unwrap();
        assert_eq!(p.declared_anchors(), ["area", "roomArea"]);
    }
}
