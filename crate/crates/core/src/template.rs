//! Prompt templates with named `{placeholder}` slots.
//!
//! `{{` and `}}` render as literal braces. A brace that does not open a
//! well-formed `{identifier}` is copied through unchanged, so JSON snippets
//! inside templates need no escaping.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unresolved placeholder {{{0}}}")]
pub struct Unresolved(pub String);

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let name_len = template[i + 1..]
                    .bytes()
                    .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                    .count();
                let close = i + 1 + name_len;
                let first_ok = bytes
                    .get(i + 1)
                    .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_');
                if name_len > 0 && first_ok && bytes.get(close) == Some(&b'}') {
                    out.push(Piece::Text(&template[start..i]));
                    out.push(Piece::Slot(&template[i + 1..close]));
                    i = close + 1;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&template[start..]));
    out
}

/// Names of every placeholder in `template`.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    pieces(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Substitute every placeholder; substituted values are not re-scanned.
pub fn render(template: &str, bindings: &[(&str, &str)]) -> Result<String, Unresolved> {
    let mut out = String::with_capacity(template.len());
    for piece in pieces(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => match bindings.iter().find(|(k, _)| *k == name) {
                Some((_, v)) => out.push_str(v),
                None => return Err(Unresolved(name.to_string())),
            },
        }
    }
    Ok(out)
}
