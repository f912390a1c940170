//! Model-free token estimate used for context accounting.

/// Approximate token count: `ceil(chars / 4)` over the text with runs of
/// whitespace collapsed to one space and the ends trimmed.
///
/// This is a heuristic, not a tokenizer; it only has to be deterministic and
/// roughly proportional to prompt size.
pub fn count_tokens(text: &str) -> usize {
    let mut chars = 0usize;
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = chars > 0;
        } else {
            if pending_space {
                chars += 1;
                pending_space = false;
            }
            chars += 1;
        }
    }
    chars.div_ceil(4)
}
