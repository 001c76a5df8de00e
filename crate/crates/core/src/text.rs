//! Small text helpers shared across modules.

/// True for characters in the CJK ideograph blocks.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// True when CJK ideographs outnumber Latin letters, used to pick the
/// language variant of inserted templates.
pub fn is_mostly_cjk(text: &str) -> bool {
    let mut cjk = 0usize;
    let mut latin = 0usize;
    for c in text.chars() {
        if is_cjk(c) {
            cjk += 1;
        } else if c.is_ascii_alphabetic() {
            latin += 1;
        }
    }
    cjk > latin
}

/// Canonical whitespace form used by corpus cleaning.
///
/// CRLF becomes LF, trailing whitespace is trimmed on every line, runs of
/// blank lines collapse to one, and leading/trailing blank lines are removed.
/// The function is idempotent.
pub fn normalize_whitespace(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut out: Vec<&str> = Vec::new();
    let mut blank_run = false;
    for line in unified.split('\n') {
        let trimmed = line.trim_end();
        if trimmed.trim().is_empty() {
            if !out.is_empty() && !blank_run {
                out.push("");
            }
            blank_run = true;
        } else {
            out.push(trimmed);
            blank_run = false;
        }
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// Largest char boundary `<= idx`.
pub fn floor_char_boundary(s: &str, mut idx: usize) -> usize {
    if idx >= s.len() {
        return s.len();
    }
    while !s.is_char_boundary(idx) {
        idx -= 1;
    }
    idx
}

/// Smallest char boundary `>= idx`.
pub fn ceil_char_boundary(s: &str, mut idx: usize) -> usize {
    if idx >= s.len() {
        return s.len();
    }
    while !s.is_char_boundary(idx) {
        idx += 1;
    }
    idx
}
