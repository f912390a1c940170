use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One non-blank source line with its comment removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    /// 1-based line number in the original source.
    pub index: usize,
    /// Logical indentation level.
    pub indent: usize,
    pub content: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("line {line}: indentation is not a whole multiple of the {unit}-space unit")]
    InconsistentIndentation { line: usize, unit: usize },
    #[error("line {line}: tabs and spaces mixed in indentation")]
    MixedIndentation { line: usize },
}

impl TokenizeError {
    pub fn line(&self) -> usize {
        match self {
            TokenizeError::InconsistentIndentation { line, .. } => *line,
            TokenizeError::MixedIndentation { line } => *line,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum IndentStyle {
    Tabs,
    Spaces(usize),
}

/// Removes everything from the first `#` that is not inside a double-quoted
/// string.
fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_quotes => escaped = true,
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Splits source into logical lines: comments stripped, blank lines dropped,
/// indentation converted to levels.
///
/// A tab is one level. For space indentation the unit is the width of the
/// first indented line; every later line must be a whole multiple of it.
pub fn tokenize_lines(source: &str) -> Result<Vec<SourceLine>, TokenizeError> {
    let mut style: Option<IndentStyle> = None;
    let mut out = Vec::new();

    for (i, raw) in source.lines().enumerate() {
        let index = i + 1;
        let code = strip_comment(raw);
        let content = code.trim();
        if content.is_empty() {
            continue;
        }

        let lead: &str = &code[..code.len() - code.trim_start().len()];
        let tabs = lead.chars().filter(|&c| c == '\t').count();
        let spaces = lead.chars().filter(|&c| c == ' ').count();

        let indent = if lead.is_empty() {
            0
        } else if tabs > 0 && spaces > 0 {
            return Err(TokenizeError::MixedIndentation { line: index });
        } else if tabs > 0 {
            match style {
                None => style = Some(IndentStyle::Tabs),
                Some(IndentStyle::Tabs) => {}
                Some(IndentStyle::Spaces(_)) => {
                    return Err(TokenizeError::MixedIndentation { line: index })
                }
            }
            tabs
        } else {
            let unit = match style {
                None => {
                    style = Some(IndentStyle::Spaces(spaces));
                    spaces
                }
                Some(IndentStyle::Spaces(u)) => u,
                Some(IndentStyle::Tabs) => {
                    return Err(TokenizeError::MixedIndentation { line: index })
                }
            };
            if spaces % unit != 0 {
                return Err(TokenizeError::InconsistentIndentation { line: index, unit });
            }
            spaces / unit
        };

        out.push(SourceLine {
            index,
            indent,
            content: content.to_string(),
            raw: raw.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_comment_is_stripped() {
        let lines =
            tokenize_lines("tell user \"Hello, world!\"  # Inline comments are also supported.")
                .unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].content, "tell user \"Hello, world!\"");
        assert_eq!(lines[0].indent, 0);
    }

    #[test]
    fn empty_source() {
        assert!(tokenize_lines("").unwrap().is_empty());
    }

    #[test]
    fn hash_inside_quotes_is_kept() {
        let lines = tokenize_lines("tell user \"room #4\" # note").unwrap();
        assert_eq!(lines[0].content, "tell user \"room #4\"");
    }

    #[test]
    fn comment_only_and_blank_lines_dropped() {
        let src = "# header\n\nstep one\n    # indented comment\nstep two\n";
        let lines = tokenize_lines(src).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].index, 5);
    }

    #[test]
    fn unit_inferred_from_first_indented_line() {
        let src = "repeat 2 times:\n    a\n    repeat 2 times:\n        b\n";
        let levels: Vec<_> = tokenize_lines(src).unwrap().iter().map(|l| l.indent).collect();
        assert_eq!(levels, [0, 1, 1, 2]);
    }

    #[test]
    fn six_spaces_under_four_space_unit_rejected() {
        let src = "repeat 2 times:\n    a\n      b\n";
        assert_eq!(
            tokenize_lines(src),
            Err(TokenizeError::InconsistentIndentation { line: 3, unit: 4 })
        );
    }

    #[test]
    fn tabs_count_as_levels() {
        let lines = tokenize_lines("if x:\n\ta\n\t\tb\n").unwrap();
        assert_eq!(lines[2].indent, 2);
    }

    #[test]
    fn mixed_tabs_and_spaces_rejected() {
        assert!(matches!(
            tokenize_lines("if x:\n\ta\n    b\n"),
            Err(TokenizeError::MixedIndentation { line: 3 })
        ));
        assert!(matches!(
            tokenize_lines("if x:\n \tb\n"),
            Err(TokenizeError::MixedIndentation { line: 2 })
        ));
    }
}
