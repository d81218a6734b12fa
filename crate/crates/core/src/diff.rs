//! Line-level diffs between parent and child program sources, plus the
//! per-line normalizations (skeletons, line kinds, numeric-literal counts)
//! that the cycling and taxonomy pipelines consume.
//!
//! Lines are compared as exact bytes. Comment handling is line-comment only
//! (`#` for [`Dialect::PyLike`], `//` for [`Dialect::CLike`]); a lightweight
//! scanner tracks string-literal state so markers inside strings are not
//! treated as comments and numbers inside strings are not counted.

use serde::{Deserialize, Serialize};

/// Placeholder that replaces numeric-literal tokens in skeletons.
pub const NUM_PLACEHOLDER: &str = "\u{27E8}NUM\u{27E9}";

/// Source-language family. Determines comment markers, numeric-literal
/// grammar extensions, and downstream injection conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dialect {
    #[serde(rename = "PY_LIKE", alias = "py_like")]
    PyLike,
    #[serde(rename = "C_LIKE", alias = "c_like")]
    CLike,
}

impl Dialect {
    /// Comment marker for trailing line comments.
    pub fn comment_marker(self) -> &'static str {
        match self {
            Dialect::PyLike => "#",
            Dialect::CLike => "//",
        }
    }

    /// Language tag used when fencing sources in model prompts.
    pub fn fence_tag(self) -> &'static str {
        match self {
            Dialect::PyLike => "python",
            Dialect::CLike => "cpp",
        }
    }
}

/// Coarse content class of one source line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Code,
    CommentOnly,
    Blank,
}

/// One removed or added line of a diff, with its normalizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    /// Exact line bytes, without the trailing `\n`.
    pub bytes: String,
    /// 0-based line number in its own source (parent for removed lines,
    /// child for added lines).
    pub index: usize,
    pub kind: LineKind,
    pub skeleton: String,
    /// Whether the line was terminated by `\n` in its source. Needed to
    /// reconstruct sources that do not end with a newline.
    pub eol: bool,
}

/// Line-granularity LCS diff between a parent and a child source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRecord {
    pub parent_id: String,
    pub child_id: String,
    pub removed_lines: Vec<LineRecord>,
    pub added_lines: Vec<LineRecord>,
}

impl DiffRecord {
    pub fn is_empty(&self) -> bool {
        self.removed_lines.is_empty() && self.added_lines.is_empty()
    }

    /// Re-applies this diff to the parent source. For a record produced by
    /// [`compute_diff`] over `(parent, child)` the result equals `child`
    /// byte-for-byte.
    pub fn apply_to(&self, parent_source: &str) -> String {
        let parent_units = split_lines(parent_source);
        let removed: std::collections::HashSet<usize> =
            self.removed_lines.iter().map(|l| l.index).collect();
        let added: std::collections::BTreeMap<usize, &LineRecord> =
            self.added_lines.iter().map(|l| (l.index, l)).collect();

        let kept: Vec<&Unit> = parent_units
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, u)| u)
            .collect();

        let total = kept.len() + added.len();
        let mut out = String::with_capacity(parent_source.len());
        let mut kept_iter = kept.into_iter();
        for pos in 0..total {
            if let Some(rec) = added.get(&pos) {
                out.push_str(&rec.bytes);
                if rec.eol {
                    out.push('\n');
                }
            } else if let Some(unit) = kept_iter.next() {
                out.push_str(unit.content);
                if unit.eol {
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Unit<'a> {
    content: &'a str,
    eol: bool,
}

fn split_lines(source: &str) -> Vec<Unit<'_>> {
    source
        .split_inclusive('\n')
        .map(|seg| match seg.strip_suffix('\n') {
            Some(content) => Unit { content, eol: true },
            None => Unit {
                content: seg,
                eol: false,
            },
        })
        .collect()
}

/// Middle sections larger than this (product of side lengths) skip the LCS
/// and fall back to a whole-section replacement.
const LCS_AREA_LIMIT: usize = 25_000_000;

/// Computes the line-level LCS diff between two sources. `parent_id` and
/// `child_id` on the result are left empty; callers that diff trace edges
/// fill them in.
pub fn compute_diff(parent_source: &str, child_source: &str, dialect: Dialect) -> DiffRecord {
    let p = split_lines(parent_source);
    let c = split_lines(child_source);

    // Trim common prefix/suffix before the quadratic LCS.
    let mut start = 0;
    while start < p.len() && start < c.len() && p[start] == c[start] {
        start += 1;
    }
    let mut p_end = p.len();
    let mut c_end = c.len();
    while p_end > start && c_end > start && p[p_end - 1] == c[c_end - 1] {
        p_end -= 1;
        c_end -= 1;
    }

    let p_mid = &p[start..p_end];
    let c_mid = &c[start..c_end];

    let (removed_idx, added_idx) = if p_mid.len() * c_mid.len() > LCS_AREA_LIMIT {
        (
            (0..p_mid.len()).collect::<Vec<_>>(),
            (0..c_mid.len()).collect::<Vec<_>>(),
        )
    } else {
        lcs_edit_indices(p_mid, c_mid)
    };

    let removed_lines = removed_idx
        .into_iter()
        .map(|i| line_record(&p_mid[i], start + i, dialect))
        .collect();
    let added_lines = added_idx
        .into_iter()
        .map(|j| line_record(&c_mid[j], start + j, dialect))
        .collect();

    DiffRecord {
        parent_id: String::new(),
        child_id: String::new(),
        removed_lines,
        added_lines,
    }
}

fn line_record(unit: &Unit<'_>, index: usize, dialect: Dialect) -> LineRecord {
    LineRecord {
        bytes: unit.content.to_string(),
        index,
        kind: classify_line_kind(unit.content, dialect),
        skeleton: skeletonize(unit.content, dialect),
        eol: unit.eol,
    }
}

/// Classic LCS dynamic program; returns (removed parent indices, added child
/// indices) relative to the given slices.
fn lcs_edit_indices(p: &[Unit<'_>], c: &[Unit<'_>]) -> (Vec<usize>, Vec<usize>) {
    let n = p.len();
    let m = c.len();
    if n == 0 {
        return (Vec::new(), (0..m).collect());
    }
    if m == 0 {
        return ((0..n).collect(), Vec::new());
    }

    let w = m + 1;
    let mut table = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * w + j] = if p[i] == c[j] {
                table[(i + 1) * w + j + 1] + 1
            } else {
                table[(i + 1) * w + j].max(table[i * w + j + 1])
            };
        }
    }

    let mut removed = Vec::new();
    let mut added = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if p[i] == c[j] {
            i += 1;
            j += 1;
        } else if table[(i + 1) * w + j] >= table[i * w + j + 1] {
            removed.push(i);
            i += 1;
        } else {
            added.push(j);
            j += 1;
        }
    }
    removed.extend(i..n);
    added.extend(j..m);
    (removed, added)
}

// ---------------------------------------------------------------------------
// Line scanning: strings and trailing comments
// ---------------------------------------------------------------------------

/// Carried scanner state across lines of one source. Only Python-like
/// triple-quoted strings span lines; everything else is line-local.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanState {
    in_triple: Option<u8>,
}

#[derive(Debug, Clone)]
struct LineScan {
    /// Byte offset where a trailing line comment begins (marker included).
    comment_start: Option<usize>,
    /// Byte ranges covered by string literals, quotes included.
    string_spans: Vec<(usize, usize)>,
    /// A single-line string literal was still open at end of line.
    unterminated_string: bool,
    state: ScanState,
}

fn scan_line(line: &str, dialect: Dialect, state: ScanState) -> LineScan {
    let bytes = line.as_bytes();
    let len = bytes.len();
    let mut spans = Vec::new();
    let mut comment_start = None;
    let mut unterminated = false;
    let mut in_triple = state.in_triple;
    let mut i = 0;

    // Continuation of a triple-quoted string from a previous line.
    if let Some(q) = in_triple {
        match find_triple_close(bytes, 0, q) {
            Some(end) => {
                spans.push((0, end));
                in_triple = None;
                i = end;
            }
            None => {
                spans.push((0, len));
                i = len;
            }
        }
    }

    while i < len {
        let b = bytes[i];
        match dialect {
            Dialect::PyLike => {
                if b == b'#' {
                    comment_start = Some(i);
                    break;
                }
                if b == b'"' || b == b'\'' {
                    if bytes[i..].starts_with(&[b, b, b]) {
                        match find_triple_close(bytes, i + 3, b) {
                            Some(end) => {
                                spans.push((i, end));
                                i = end;
                            }
                            None => {
                                spans.push((i, len));
                                in_triple = Some(b);
                                i = len;
                            }
                        }
                        continue;
                    }
                    let (end, closed) = find_single_close(bytes, i + 1, b);
                    spans.push((i, end));
                    if !closed {
                        unterminated = true;
                    }
                    i = end;
                    continue;
                }
                i += 1;
            }
            Dialect::CLike => {
                if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
                    comment_start = Some(i);
                    break;
                }
                if b == b'"' || b == b'\'' {
                    let (end, closed) = find_single_close(bytes, i + 1, b);
                    spans.push((i, end));
                    if !closed {
                        unterminated = true;
                    }
                    i = end;
                    continue;
                }
                i += 1;
            }
        }
    }

    LineScan {
        comment_start,
        string_spans: spans,
        unterminated_string: unterminated,
        state: ScanState { in_triple },
    }
}

/// Finds the end (exclusive, past the quotes) of a triple-quoted string.
fn find_triple_close(bytes: &[u8], from: usize, quote: u8) -> Option<usize> {
    let mut i = from;
    while i + 3 <= bytes.len() {
        if bytes[i] == quote && bytes[i + 1] == quote && bytes[i + 2] == quote {
            return Some(i + 3);
        }
        i += 1;
    }
    None
}

/// Finds the end (exclusive) of a single-line string started at `from - 1`.
/// Honors backslash escapes. Returns `(end, closed)`.
fn find_single_close(bytes: &[u8], from: usize, quote: u8) -> (usize, bool) {
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b if b == quote => return (i + 1, true),
            _ => i += 1,
        }
    }
    (bytes.len(), false)
}

// ---------------------------------------------------------------------------
// Numeric-literal tokens
// ---------------------------------------------------------------------------

pub(crate) fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn in_spans(pos: usize, spans: &[(usize, usize)]) -> bool {
    spans.iter().any(|&(s, e)| pos >= s && pos < e)
}

/// Byte spans of numeric-literal tokens in `line`, excluding string contents
/// and anything from `limit` onward. Token grammar: unsigned decimal integers
/// and floats with optional exponent; for [`Dialect::CLike`] additionally hex
/// literals and `f`/`u`/`l` suffixes. A token must not touch an identifier
/// character or `.` on either side.
fn numeric_token_spans(
    line: &str,
    dialect: Dialect,
    string_spans: &[(usize, usize)],
    limit: usize,
) -> Vec<(usize, usize)> {
    let bytes = line.as_bytes();
    let end = limit.min(bytes.len());
    let mut out = Vec::new();
    let mut i = 0;

    while i < end {
        if in_spans(i, string_spans) {
            i += 1;
            continue;
        }
        let b = bytes[i];
        let starts_number = b.is_ascii_digit()
            || (b == b'.' && bytes.get(i + 1).is_some_and(|n| n.is_ascii_digit()));
        if !starts_number {
            i += 1;
            continue;
        }
        // Token boundary on the left: reject digits glued to identifiers or dots.
        if i > 0 {
            let prev = bytes[i - 1];
            if is_ident_byte(prev) || prev == b'.' {
                // Skip the rest of this identifier-like run.
                while i < end && (is_ident_byte(bytes[i]) || bytes[i] == b'.') {
                    i += 1;
                }
                continue;
            }
        }

        let start = i;
        let mut j = i;
        if dialect == Dialect::CLike
            && b == b'0'
            && matches!(bytes.get(i + 1), Some(b'x') | Some(b'X'))
        {
            j += 2;
            while j < end && bytes[j].is_ascii_hexdigit() {
                j += 1;
            }
        } else {
            while j < end && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j < end && bytes[j] == b'.' {
                let next = bytes.get(j + 1).copied();
                let after_ok = match next {
                    Some(n) => n.is_ascii_digit() || (!is_ident_byte(n) && n != b'.'),
                    None => true,
                };
                if after_ok {
                    j += 1;
                    while j < end && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            // Exponent, only when complete: e/E, optional sign, >= 1 digit.
            if j < end && matches!(bytes[j], b'e' | b'E') {
                let mut k = j + 1;
                if k < end && matches!(bytes[k], b'+' | b'-') {
                    k += 1;
                }
                if k < end && bytes[k].is_ascii_digit() {
                    while k < end && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
        }
        if dialect == Dialect::CLike {
            while j < end && matches!(bytes[j], b'f' | b'F' | b'u' | b'U' | b'l' | b'L') {
                j += 1;
            }
        }

        // Token boundary on the right.
        let next = bytes.get(j).copied();
        let right_ok = match next {
            Some(n) => !is_ident_byte(n) && n != b'.',
            None => true,
        };
        if right_ok {
            out.push((start, j));
            i = j;
        } else {
            while i < end && (is_ident_byte(bytes[i]) || bytes[i] == b'.') {
                i += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Public per-line operations
// ---------------------------------------------------------------------------

/// Normalizes one line: trailing comment stripped, numeric literals collapsed
/// to [`NUM_PLACEHOLDER`], whitespace runs collapsed to single spaces, ends
/// trimmed. Idempotent. The scan is line-local, so lines inside multi-line
/// strings are normalized as if they were code.
pub fn skeletonize(line: &str, dialect: Dialect) -> String {
    let scan = scan_line(line, dialect, ScanState::default());
    let limit = scan.comment_start.unwrap_or(line.len());
    let spans = numeric_token_spans(line, dialect, &scan.string_spans, limit);

    // Numeric spans start and end at ASCII bytes, so slicing at their
    // boundaries keeps the string valid UTF-8.
    let mut collapsed = String::with_capacity(limit);
    let mut cursor = 0;
    for &(s, e) in &spans {
        collapsed.push_str(&line[cursor..s]);
        collapsed.push_str(NUM_PLACEHOLDER);
        cursor = e;
    }
    collapsed.push_str(&line[cursor..limit]);

    // Collapse whitespace runs and trim.
    let mut out = String::with_capacity(collapsed.len());
    let mut pending_space = false;
    for ch in collapsed.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

/// Blank if whitespace-only; comment-only if non-blank and empty once the
/// trailing comment is stripped; code otherwise.
pub fn classify_line_kind(line: &str, dialect: Dialect) -> LineKind {
    if line.trim().is_empty() {
        return LineKind::Blank;
    }
    let scan = scan_line(line, dialect, ScanState::default());
    match scan.comment_start {
        Some(pos) if line[..pos].trim().is_empty() => LineKind::CommentOnly,
        _ => LineKind::Code,
    }
}

/// Counts numeric-literal tokens in code content only: comments stripped,
/// string-literal contents excluded. Tracks triple-quoted strings across
/// lines for [`Dialect::PyLike`].
pub fn count_numeric_literals(source: &str, dialect: Dialect) -> usize {
    let mut state = ScanState::default();
    let mut count = 0;
    for unit in split_lines(source) {
        let scan = scan_line(unit.content, dialect, state);
        let limit = scan.comment_start.unwrap_or(unit.content.len());
        count += numeric_token_spans(unit.content, dialect, &scan.string_spans, limit).len();
        state = scan.state;
    }
    count
}

/// Counts non-blank lines (comments included).
pub fn count_loc(source: &str) -> usize {
    split_lines(source)
        .iter()
        .filter(|u| !u.content.trim().is_empty())
        .count()
}

/// Cheap syntactic validity check used by the replay harness: non-empty,
/// brackets balanced outside strings and comments, and (for
/// [`Dialect::PyLike`]) no unterminated single-line string. A proxy for
/// "does it tokenize", not a parser.
pub fn syntactically_plausible(source: &str, dialect: Dialect) -> bool {
    if source.trim().is_empty() {
        return false;
    }
    let mut state = ScanState::default();
    let mut depth: i64 = 0;
    for unit in split_lines(source) {
        let scan = scan_line(unit.content, dialect, state);
        if scan.unterminated_string {
            return false;
        }
        let limit = scan.comment_start.unwrap_or(unit.content.len());
        for (i, b) in unit.content.as_bytes()[..limit].iter().enumerate() {
            if in_spans(i, &scan.string_spans) {
                continue;
            }
            match b {
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => {
                    depth -= 1;
                    if depth < 0 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        state = scan.state;
    }
    depth == 0 && state.in_triple.is_none()
}

/// Byte offsets at which `literal` occurs in `line` as a standalone token:
/// not preceded or followed by an identifier character or `.`, so `0.1` does
/// not match inside `0.123` or `10.1`.
pub fn literal_token_occurrences(line: &str, literal: &str) -> Vec<usize> {
    if literal.is_empty() {
        return Vec::new();
    }
    let bytes = line.as_bytes();
    let lit = literal.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + lit.len() <= bytes.len() {
        if &bytes[i..i + lit.len()] == lit {
            let left_ok = i == 0 || (!is_ident_byte(bytes[i - 1]) && bytes[i - 1] != b'.');
            let after = bytes.get(i + lit.len()).copied();
            let right_ok = match after {
                Some(b) => !is_ident_byte(b) && b != b'.',
                None => true,
            };
            if left_ok && right_ok {
                out.push(i);
                i += lit.len();
                continue;
            }
        }
        i += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Unified-diff rendering (informational)
// ---------------------------------------------------------------------------

/// Renders a standard `---/+++/@@` unified diff with the given number of
/// context lines. Informational output for prompts and human inspection;
/// [`DiffRecord`] stays the canonical representation.
pub fn unified_text(parent_source: &str, child_source: &str, context: usize) -> String {
    let diff = compute_diff(parent_source, child_source, Dialect::PyLike);
    let p = split_lines(parent_source);
    let c = split_lines(child_source);
    let removed: std::collections::HashSet<usize> =
        diff.removed_lines.iter().map(|l| l.index).collect();
    let added: std::collections::HashSet<usize> =
        diff.added_lines.iter().map(|l| l.index).collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Equal(usize, usize),
        Del(usize),
        Ins(usize),
    }

    let mut ops = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < p.len() || j < c.len() {
        if i < p.len() && removed.contains(&i) {
            ops.push(Op::Del(i));
            i += 1;
        } else if j < c.len() && added.contains(&j) {
            ops.push(Op::Ins(j));
            j += 1;
        } else if i < p.len() && j < c.len() {
            ops.push(Op::Equal(i, j));
            i += 1;
            j += 1;
        } else {
            break;
        }
    }

    let is_change = |op: &Op| !matches!(op, Op::Equal(_, _));
    let mut hunks: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < ops.len() {
        if is_change(&ops[k]) {
            let start = k.saturating_sub(context);
            let mut last_change = k;
            let mut m = k + 1;
            while m < ops.len() {
                if is_change(&ops[m]) {
                    last_change = m;
                    m += 1;
                } else if m - last_change <= 2 * context {
                    m += 1;
                } else {
                    break;
                }
            }
            let end = (last_change + context + 1).min(ops.len());
            hunks.push((start, end));
            k = end;
        } else {
            k += 1;
        }
    }

    let mut out = String::new();
    out.push_str("--- parent\n+++ child\n");
    for (start, end) in hunks {
        let mut p_start = None;
        let mut c_start = None;
        let mut p_count = 0;
        let mut c_count = 0;
        for op in &ops[start..end] {
            match *op {
                Op::Equal(pi, cj) => {
                    p_start.get_or_insert(pi);
                    c_start.get_or_insert(cj);
                    p_count += 1;
                    c_count += 1;
                }
                Op::Del(pi) => {
                    p_start.get_or_insert(pi);
                    p_count += 1;
                }
                Op::Ins(cj) => {
                    c_start.get_or_insert(cj);
                    c_count += 1;
                }
            }
        }
        let range = |start: Option<usize>, count: usize| {
            let line = start.map_or(0, |v| v + 1);
            if count == 1 {
                format!("{line}")
            } else {
                format!("{line},{count}")
            }
        };
        out.push_str(&format!(
            "@@ -{} +{} @@\n",
            range(p_start, p_count),
            range(c_start, c_count)
        ));
        for op in &ops[start..end] {
            match *op {
                Op::Equal(pi, _) => {
                    out.push(' ');
                    out.push_str(p[pi].content);
                }
                Op::Del(pi) => {
                    out.push('-');
                    out.push_str(p[pi].content);
                }
                Op::Ins(cj) => {
                    out.push('+');
                    out.push_str(c[cj].content);
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_single_line_change() {
        let d = compute_diff("a\nb\n", "a\nc\n", Dialect::PyLike);
        assert_eq!(d.removed_lines.len(), 1);
        assert_eq!(d.removed_lines[0].bytes, "b");
        assert_eq!(d.added_lines.len(), 1);
        assert_eq!(d.added_lines[0].bytes, "c");
    }

    #[test]
    fn diff_identical_sources() {
        let d = compute_diff("a\nb\n", "a\nb\n", Dialect::PyLike);
        assert!(d.is_empty());
    }

    #[test]
    fn diff_cooling_rate_literal_change_is_one_for_one() {
        let parent = "T0 = 0.12\ncooling_rate = 0.99992       # slightly slower cooling\nbest = 0.0\n";
        let child = "T0 = 0.12\ncooling_rate = 0.99993       # slightly slower cooling (compensate more steps)\nbest = 0.0\n";
        let d = compute_diff(parent, child, Dialect::PyLike);
        assert_eq!(d.removed_lines.len(), 1);
        assert_eq!(d.added_lines.len(), 1);
        assert!(d.removed_lines[0].bytes.starts_with("cooling_rate = 0.99992"));
    }

    #[test]
    fn diff_roundtrip_trailing_newline_difference() {
        let parent = "a\nb";
        let child = "a\nb\n";
        let d = compute_diff(parent, child, Dialect::PyLike);
        assert!(!d.is_empty());
        assert_eq!(d.apply_to(parent), child);
    }

    #[test]
    fn diff_roundtrip_empty_sources() {
        for (p, c) in [("", "x\n"), ("x\n", ""), ("", "")] {
            let d = compute_diff(p, c, Dialect::PyLike);
            assert_eq!(d.apply_to(p), c);
        }
    }

    #[test]
    fn diff_roundtrip_crlf_sources() {
        // Only the LF is treated as the terminator; the CR stays part of
        // the line bytes, and reconstruction is still exact.
        let parent = "a\r\nb\r\nc\r\n";
        let child = "a\r\nx\r\nc\r\n";
        let d = compute_diff(parent, child, Dialect::PyLike);
        assert_eq!(d.removed_lines[0].bytes, "b\r");
        assert_eq!(d.apply_to(parent), child);
    }

    #[test]
    fn skeleton_collapses_numbers() {
        assert_eq!(
            skeletonize("cooling_rate = 0.99992", Dialect::PyLike),
            format!("cooling_rate = {NUM_PLACEHOLDER}")
        );
    }

    #[test]
    fn skeleton_strips_comment_and_collapses_whitespace() {
        assert_eq!(
            skeletonize("T0 = 0.12   # temp", Dialect::PyLike),
            format!("T0 = {NUM_PLACEHOLDER}")
        );
    }

    #[test]
    fn skeleton_leaves_identifier_digits() {
        assert_eq!(skeletonize("vec2 = base", Dialect::PyLike), "vec2 = base");
    }

    #[test]
    fn skeleton_is_idempotent_on_samples() {
        for line in [
            "x = 1e-6  # tol",
            "  if depth < 30: return 0.5",
            "print(\"2 + 2 = 4\")",
            "y = 0x1F + 2ull  // mask",
            "",
            "   ",
        ] {
            let once = skeletonize(line, Dialect::CLike);
            assert_eq!(skeletonize(&once, Dialect::CLike), once);
        }
    }

    #[test]
    fn skeleton_of_blank_line_is_empty() {
        assert_eq!(skeletonize("   \t ", Dialect::PyLike), "");
    }

    #[test]
    fn line_kinds() {
        assert_eq!(classify_line_kind("   ", Dialect::PyLike), LineKind::Blank);
        assert_eq!(
            classify_line_kind("# note", Dialect::PyLike),
            LineKind::CommentOnly
        );
        assert_eq!(
            classify_line_kind("x = 1  // inline", Dialect::CLike),
            LineKind::Code
        );
        assert_eq!(
            classify_line_kind("  // only comment", Dialect::CLike),
            LineKind::CommentOnly
        );
    }

    #[test]
    fn hash_in_string_is_not_a_comment() {
        assert_eq!(
            classify_line_kind("s = \"#tag\"", Dialect::PyLike),
            LineKind::Code
        );
        assert_eq!(
            skeletonize("s = \"#tag\"  # real comment", Dialect::PyLike),
            "s = \"#tag\""
        );
    }

    #[test]
    fn count_basic() {
        assert_eq!(count_numeric_literals("a = 1; b = 2.5", Dialect::PyLike), 2);
    }

    #[test]
    fn count_excludes_comments() {
        assert_eq!(
            count_numeric_literals("pi = 3.14159  # approx 3.14", Dialect::PyLike),
            1
        );
    }

    #[test]
    fn count_excludes_strings_and_identifiers() {
        assert_eq!(
            count_numeric_literals("vec2 = \"12 monkeys\" + str(7)", Dialect::PyLike),
            1
        );
    }

    #[test]
    fn count_handles_c_like_literals() {
        assert_eq!(
            count_numeric_literals("int m = 0xFF; float f = 1.5f; long n = 10UL;", Dialect::CLike),
            3
        );
    }

    #[test]
    fn count_skips_triple_quoted_strings() {
        let src = "\"\"\"doc 3.14\nmore 2.71\n\"\"\"\nx = 1\n";
        assert_eq!(count_numeric_literals(src, Dialect::PyLike), 1);
    }

    #[test]
    fn count_exponent_forms() {
        assert_eq!(
            count_numeric_literals("a = 1e-6 + 2E+3 + .5 + 7.", Dialect::PyLike),
            4
        );
    }

    #[test]
    fn literal_occurrence_respects_number_neighbors() {
        assert_eq!(literal_token_occurrences("a = 0.1 * b + 0.123", "0.1"), vec![4]);
        assert!(literal_token_occurrences("a = 10.1", "0.1").is_empty());
        assert_eq!(literal_token_occurrences("x = 5", "5"), vec![4]);
        assert!(literal_token_occurrences("x = 5.0", "5").is_empty());
        assert_eq!(literal_token_occurrences("tol = 1e-6", "1e-6"), vec![6]);
        assert!(literal_token_occurrences("tol = 21e-6", "1e-6").is_empty());
    }

    #[test]
    fn realistic_cpp_lines_normalize_as_expected() {
        let line = "const double HEURISTIC_EMPTY_STACK_BONUS_SCORE = 1500.0;";
        assert_eq!(
            skeletonize(line, Dialect::CLike),
            format!("const double HEURISTIC_EMPTY_STACK_BONUS_SCORE = {NUM_PLACEHOLDER};")
        );
        assert_eq!(count_numeric_literals(line, Dialect::CLike), 1);

        let call = "    std::nth_element(buf.begin(), buf.begin() + num_candidates, buf.end());";
        assert_eq!(classify_line_kind(call, Dialect::CLike), LineKind::Code);
        assert_eq!(count_numeric_literals(call, Dialect::CLike), 0);

        let tuned = "const int GREEDY_REOPTIMIZE_SUBSET_SIZE = 170; // Full scan per segment";
        assert_eq!(
            skeletonize(tuned, Dialect::CLike),
            format!("const int GREEDY_REOPTIMIZE_SUBSET_SIZE = {NUM_PLACEHOLDER};")
        );
    }

    #[test]
    fn plausibility_checks() {
        assert!(syntactically_plausible("def f():\n    return (1 + 2)\n", Dialect::PyLike));
        assert!(!syntactically_plausible("garbage ((( text", Dialect::PyLike));
        assert!(!syntactically_plausible("x = 'unterminated\n", Dialect::PyLike));
        assert!(!syntactically_plausible("", Dialect::CLike));
        assert!(syntactically_plausible("int main() { return 0; }\n", Dialect::CLike));
    }

    #[test]
    fn unified_text_contains_markers() {
        let text = unified_text("a\nb\nc\n", "a\nx\nc\n", 1);
        assert!(text.starts_with("--- parent\n+++ child\n"));
        assert!(text.contains("-b\n"));
        assert!(text.contains("+x\n"));
        assert!(text.contains("@@"));
    }
}
