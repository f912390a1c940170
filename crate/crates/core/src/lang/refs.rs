use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefError {
    #[error("opening brace at column {column} has no closing brace")]
    UnbalancedBraces { column: usize },
}

fn is_ident(seg: &str) -> bool {
    let mut chars = seg.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// True when `path` is a dotted identifier path such as `product.price`.
pub fn is_var_path(path: &str) -> bool {
    !path.is_empty() && path.split('.').all(is_ident)
}

/// Normalizes the inside of a brace pair to a dotted path.
///
/// Possessive phrasing (`myCar's color`) becomes `myCar.color`. Returns `None`
/// when the content is not a variable reference at all.
pub fn normalize_ref(inner: &str) -> Option<String> {
    let trimmed = inner.trim();
    let mut path = String::with_capacity(trimmed.len());
    for (i, part) in trimmed.split("'s ").enumerate() {
        if i > 0 {
            path.push('.');
        }
        path.push_str(part.trim());
    }
    if is_var_path(&path) {
        Some(path)
    } else {
        None
    }
}

/// Byte spans `(start, end_exclusive, path)` of every brace reference.
pub(crate) fn ref_spans(text: &str) -> Result<Vec<(usize, usize, String)>, RefError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let open = pos + off;
        let close = match text[open + 1..].find('}') {
            Some(c) => open + 1 + c,
            None => {
                return Err(RefError::UnbalancedBraces {
                    column: text[..open].chars().count() + 1,
                })
            }
        };
        if let Some(path) = normalize_ref(&text[open + 1..close]) {
            out.push((open, close + 1, path));
        }
        pos = close + 1;
    }
    Ok(out)
}

/// Brace-delimited variable names in order of appearance, duplicates kept.
pub fn extract_variable_refs(text: &str) -> Result<Vec<String>, RefError> {
    Ok(ref_spans(text)?.into_iter().map(|(_, _, p)| p).collect())
}
