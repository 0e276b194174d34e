//! Answer extraction helpers shared by the executor, the evaluator and the
//! simulated backend.

/// Contents of every `\boxed{...}` in `text`, in order. Nested braces are
/// balanced; an unterminated box is ignored.
pub fn boxed_answers(text: &str) -> Vec<String> {
    const OPEN: &str = "\\boxed{";
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find(OPEN) {
        let body = &rest[pos + OPEN.len()..];
        let mut depth = 1usize;
        let mut end = None;
        for (i, ch) in body.char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                out.push(body[..e].trim().to_string());
                rest = &body[e + 1..];
            }
            None => break,
        }
    }
    out
}

/// Index of a most frequent value; ties go to the value seen most recently.
/// The returned index is the last occurrence of the winner.
pub fn plurality(values: &[String]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None; // (count, last index)
    for (i, v) in values.iter().enumerate() {
        let count = values.iter().filter(|x| *x == v).count();
        let last = values.iter().rposition(|x| x == v).expect("present");
        if last != i {
            continue;
        }
        match best {
            Some((c, l)) if c > count || (c == count && l > last) => {}
            _ => best = Some((count, last)),
        }
    }
    best.map(|(_, last)| last)
}

/// Parse a decimal, integer or `a/b` fraction literal.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim().trim_end_matches('.');
    if let Some((a, b)) = t.split_once('/') {
        let (a, b) = (a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?);
        return if b == 0.0 { None } else { Some(a / b) };
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// The last numeric literal (integer, decimal or fraction) in `text`.
pub fn last_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i < bytes.len() {
        let starts_number = bytes[i].is_ascii_digit()
            || (bytes[i] == b'-'
                && i + 1 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
                && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric()));
        if !starts_number {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < bytes.len()
            && (bytes[i] == b'.' || bytes[i] == b'/')
            && bytes[i + 1].is_ascii_digit()
        {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        if let Some(v) = parse_number(&text[start..i]) {
            found = Some(v);
        }
    }
    found
}

/// The final answer a response commits to: its last boxed value when it has
/// one, else its last number, else the trimmed text.
pub fn final_answer(text: &str) -> String {
    if let Some(b) = boxed_answers(text).pop() {
        return b;
    }
    if let Some(n) = last_number(text) {
        return crate::canonical::format_real(n)
            .trim_end_matches(".0")
            .to_string();
    }
    text.trim().to_string()
}

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}
