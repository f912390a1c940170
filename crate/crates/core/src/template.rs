//! `{hole}` patterns used to match instruction text and data lines.
//!
//! Literal parts compare ASCII case-insensitively; holes capture non-empty
//! text. Matching backtracks, so the first successful assignment of holes
//! from left to right wins (holes are lazy).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Lit(String),
    Hole(String),
}

fn parts(pattern: &str) -> Vec<Part> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}').map(|c| open + c) else {
            break;
        };
        if open > 0 {
            out.push(Part::Lit(rest[..open].to_string()));
        }
        out.push(Part::Hole(rest[open + 1..close].trim().to_string()));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Part::Lit(rest.to_string()));
    }
    out
}

/// Captured hole values in pattern order.
pub type Captures = Vec<(String, String)>;

pub fn get<'a>(caps: &'a Captures, name: &str) -> Option<&'a str> {
    caps.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn starts_with_ci(text: &str, lit: &str) -> bool {
    text.len() >= lit.len()
        && text.is_char_boundary(lit.len())
        && text[..lit.len()].eq_ignore_ascii_case(lit)
}

fn go(parts: &[Part], text: &str, caps: &mut Captures) -> bool {
    match parts.split_first() {
        None => text.is_empty(),
        Some((Part::Lit(l), rest)) => starts_with_ci(text, l) && go(rest, &text[l.len()..], caps),
        Some((Part::Hole(name), rest)) => {
            for (i, _) in text.char_indices().skip(1).chain(core::iter::once((text.len(), ' '))) {
                if i == 0 {
                    continue;
                }
                let value = &text[..i];
                // Repeated hole names must agree.
                if let Some(prev) = get(caps, name) {
                    if prev != value {
                        continue;
                    }
                }
                caps.push((name.clone(), value.to_string()));
                if go(rest, &text[i..], caps) {
                    return true;
                }
                caps.pop();
            }
            false
        }
    }
}

/// Matches the whole of `text` (trimmed) against `pattern`.
pub fn match_template(pattern: &str, text: &str) -> Option<Captures> {
    let ps = parts(pattern.trim());
    let mut caps = Vec::new();
    if go(&ps, text.trim(), &mut caps) {
        let mut dedup: Captures = Vec::new();
        for (k, v) in caps {
            if get(&dedup, &k).is_none() {
                dedup.push((k, v));
            }
        }
        Some(dedup)
    } else {
        None
    }
}

/// Replaces `{hole}` with captured values; unknown holes are left as is.
pub fn fill_template(template: &str, caps: &Captures) -> String {
    let mut out = String::new();
    for p in parts(template) {
        match p {
            Part::Lit(l) => out.push_str(&l),
            Part::Hole(h) => match get(caps, &h) {
                Some(v) => out.push_str(v),
                None => {
                    out.push('{');
                    out.push_str(&h);
                    out.push('}');
                }
            },
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_and_case() {
        let c = match_template(
            "Open the note \"{note}\" in the {app} application",
            "open the note \"todo_list.md\" in the Markor application",
        )
        .unwrap();
        assert_eq!(get(&c, "note"), Some("todo_list.md"));
        assert_eq!(get(&c, "app"), Some("Markor"));
    }

    #[test]
    fn lazy_holes_backtrack() {
        let c = match_template("{title} on {date} at {time}", "Lunch on the pier on 2024-10-21 at 12:00").unwrap();
        assert_eq!(get(&c, "title"), Some("Lunch"));
        assert_eq!(get(&c, "date"), Some("the pier on 2024-10-21"));
        assert!(match_template("{a} x", "y").is_none());
        assert!(match_template("wait {n} seconds", "wait  seconds").is_none());
    }

    #[test]
    fn fill() {
        let c = match_template("say {w}", "say hi").unwrap();
        assert_eq!(fill_template("click(\"{w}\") {other}", &c), "click(\"hi\") {other}");
    }
}
