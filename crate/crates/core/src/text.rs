//! Character-offset text helpers shared by the linker, the rewriter and the
//! dialogue matcher.
//!
//! All offsets in this crate count Unicode scalar values (`char`s), not bytes.
//! Matching is done on a normalized form: lowercase, internal whitespace
//! collapsed to a single space, trimmed.

use serde::{Deserialize, Serialize};

/// A maximal run of alphanumeric characters, located by char offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

/// Lowercase and collapse whitespace runs to single spaces.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(ch.to_lowercase());
    }
    out
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `char_idx`-th char, or `s.len()` at the end.
pub fn byte_offset(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == char_idx {
            return Some(b);
        }
        count += 1;
    }
    (count == char_idx).then_some(s.len())
}

/// Slice by char offsets. `None` when the range is out of bounds or reversed.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = byte_offset(s, end)?;
    Some(&s[b0..b1])
}

pub fn tokenize(s: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    let mut idx = 0;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(idx);
            }
        } else if let Some(st) = start.take() {
            tokens.push(Token { start: st, end: idx });
        }
        idx += 1;
    }
    if let Some(st) = start {
        tokens.push(Token { start: st, end: idx });
    }
    tokens
}

/// True if `needle` occurs in `haystack` with a non-alphanumeric character
/// (or the string edge) on both sides. Both inputs are compared as given, so
/// callers normalize first.
pub fn contains_at_token_boundary(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(pos, m)| {
        let before_ok = haystack[..pos]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[pos + m.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        before_ok && after_ok
    })
}

/// Count of token-boundary occurrences of `needle` in `haystack`.
pub fn count_at_token_boundary(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack
        .match_indices(needle)
        .filter(|(pos, m)| {
            let before_ok = haystack[..*pos]
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric());
            let after_ok = haystack[pos + m.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric());
            before_ok && after_ok
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_folds() {
        assert_eq!(normalize("  Harry\t\tPOTTER \n"), "harry potter");
        assert_eq!(normalize("J.K.  Rowling"), "j.k. rowling");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn tokens_use_char_offsets() {
        let s = "Café au lait, s'il vous plaît";
        let toks = tokenize(s);
        assert_eq!(toks[0], Token { start: 0, end: 4 });
        assert_eq!(char_slice(s, toks[0].start, toks[0].end), Some("Café"));
        let last = toks.last().unwrap();
        assert_eq!(char_slice(s, last.start, last.end), Some("plaît"));
    }

    #[test]
    fn char_slice_bounds() {
        assert_eq!(char_slice("abc", 0, 3), Some("abc"));
        assert_eq!(char_slice("abc", 3, 3), Some(""));
        assert_eq!(char_slice("abc", 2, 4), None);
        assert_eq!(char_slice("abc", 2, 1), None);
    }

    #[test]
    fn boundary_matching() {
        assert!(contains_at_token_boundary("why is snow used for igloos?", "igloos"));
        assert!(!contains_at_token_boundary("snowfall", "snow"));
        assert!(contains_at_token_boundary("snow", "snow"));
        assert_eq!(count_at_token_boundary("snow, snow and snowfall", "snow"), 2);
    }
}
