//! Answer extraction, LaTeX normalization, equivalence, and majority voting.
//!
//! Final answers live inside the last `\boxed{...}` environment of a
//! reasoning chain. Comparison is numeric-aware for the common MATH/GSM8K
//! answer shapes (integers, finite decimals, simple fractions) and falls
//! back to canonical-string equality for everything else.

use num::rational::BigRational;
use num::BigInt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An answer pulled out of a reasoning chain.
///
/// `canonical` is the normalized form of `raw`; `numeric` is present only
/// when the canonical form parses as an exact rational.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedAnswer {
    pub raw: String,
    pub canonical: String,
    pub numeric: Option<BigRational>,
}

impl ExtractedAnswer {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let canonical = normalize(&raw);
        let numeric = parse_rational(&canonical);
        Self { raw, canonical, numeric }
    }
}

// Canonical and numeric are derived from raw, so only raw crosses the wire.
impl Serialize for ExtractedAnswer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for ExtractedAnswer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Ok(ExtractedAnswer::new(raw))
    }
}

/// Returns the content of the last balanced `\boxed{...}` in `text`.
///
/// Brace matching is nesting-aware and skips escaped `\{`/`\}`. An
/// unbalanced box (truncated output) does not count as an occurrence.
pub fn extract_boxed(text: &str) -> Option<ExtractedAnswer> {
    const MARKER: &str = "\\boxed{";
    let mut last: Option<&str> = None;
    let mut search_from = 0;
    while let Some(pos) = text[search_from..].find(MARKER) {
        let start = search_from + pos + MARKER.len();
        if let Some(end) = matching_close(&text[start..]) {
            last = Some(&text[start..start + end]);
        }
        search_from = search_from + pos + MARKER.len();
    }
    last.map(ExtractedAnswer::new)
}

/// Byte offset of the `}` matching an already-open brace, or None.
fn matching_close(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 1, // skip the escaped char
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Normalizes a raw boxed answer to a canonical comparison form.
///
/// Strips outer whitespace, surrounding `$`, wrapping parentheses, spacing
/// commands, `\left`/`\right`, `\text`-style wrappers, and trailing periods;
/// collapses internal whitespace and rewrites `\dfrac` to `\frac`.
/// Idempotent: the rules are applied until a fixed point.
pub fn normalize(raw: &str) -> String {
    let mut cur = raw.to_string();
    for _ in 0..16 {
        let next = normalize_pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn normalize_pass(input: &str) -> String {
    let mut s = input.trim().to_string();
    while s.ends_with('.') {
        s.pop();
        s = s.trim_end().to_string();
    }
    while s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        s = s[1..s.len() - 1].trim().to_string();
    }
    for cmd in ["\\!", "\\,", "\\;", "\\quad", "\\left", "\\right"] {
        s = s.replace(cmd, "");
    }
    s = s.replace("\\dfrac", "\\frac");
    s = strip_text_wrappers(&s);
    s = strip_outer_parens(&s);
    // collapse whitespace runs
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops `\text{...}` unit wrappers; unwraps style commands like `\textbf`.
/// A string that is nothing but a `\text{...}` group keeps its content.
fn strip_text_wrappers(s: &str) -> String {
    let unwrapped = rewrite_groups(s, &["\\textbf", "\\mathbf", "\\mathrm", "\\textit"], true);
    let dropped = rewrite_groups(&unwrapped, &["\\text"], false);
    if dropped.trim().is_empty() {
        rewrite_groups(&unwrapped, &["\\text"], true)
    } else {
        dropped
    }
}

/// Replaces each `cmd{body}` group with `body` (keep) or nothing (drop).
fn rewrite_groups(s: &str, cmds: &[&str], keep_body: bool) -> String {
    let mut out = s.to_string();
    for cmd in cmds {
        while let Some(pos) = out.find(&format!("{cmd}{{")) {
            let body_start = pos + cmd.len() + 1;
            let Some(end) = matching_close(&out[body_start..]) else { break };
            let body = out[body_start..body_start + end].to_string();
            let replacement = if keep_body { body } else { String::new() };
            out.replace_range(pos..body_start + end + 1, &replacement);
        }
    }
    out
}

fn strip_outer_parens(s: &str) -> String {
    let t = s.trim();
    if t.len() >= 2 && t.starts_with('(') && t.ends_with(')') {
        // only strip when the opening paren matches the final char
        let mut depth = 0i32;
        for (i, c) in t.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 && i != t.len() - 1 {
                        return t.to_string();
                    }
                }
                _ => {}
            }
        }
        if depth == 0 {
            return t[1..t.len() - 1].trim().to_string();
        }
    }
    t.to_string()
}

/// Parses integers, finite decimals, `\frac{p}{q}`, and `p/q` (optional
/// leading minus) into an exact rational. Everything else is None.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest.trim()),
        None => (false, s),
    };
    let value = parse_unsigned_rational(body)?;
    Some(if neg { -value } else { value })
}

fn parse_unsigned_rational(s: &str) -> Option<BigRational> {
    if let Some(rest) = s.strip_prefix("\\frac{") {
        let close = matching_close(rest)?;
        let p = parse_int(&rest[..close])?;
        let denom = rest[close + 1..].strip_prefix('{')?.strip_suffix('}')?;
        let q = parse_int(denom)?;
        if q == BigInt::from(0) {
            return None;
        }
        return Some(BigRational::new(p, q));
    }
    if let Some((p, q)) = s.split_once('/') {
        let p = parse_int(p.trim())?;
        let q = parse_int(q.trim())?;
        if q == BigInt::from(0) {
            return None;
        }
        return Some(BigRational::new(p, q));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if !frac_part.is_empty()
            && frac_part.bytes().all(|b| b.is_ascii_digit())
            && (int_part.is_empty() || int_part.bytes().all(|b| b.is_ascii_digit()))
        {
            let digits = format!("{}{}", int_part, frac_part);
            let num: BigInt = digits.parse().ok()?;
            let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
            return Some(BigRational::new(num, denom));
        }
        return None;
    }
    parse_int(s).map(BigRational::from_integer)
}

fn parse_int(s: &str) -> Option<BigInt> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest.trim()),
        None => (false, s),
    };
    // thousands separators ("1,234") are common in GSM8K answers
    let cleaned: String = body.chars().filter(|&c| c != ',').collect();
    if cleaned.is_empty() || !cleaned.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // reject malformed comma grouping like "12,34"
    if body.contains(',') {
        let parts: Vec<&str> = body.split(',').collect();
        if parts[0].is_empty() || parts[0].len() > 3 || parts[1..].iter().any(|p| p.len() != 3) {
            return None;
        }
    }
    let value: BigInt = cleaned.parse().ok()?;
    Some(if neg { -value } else { value })
}

/// Numeric equality when both sides parse as rationals, canonical string
/// equality otherwise. Reflexive and symmetric.
pub fn equivalent(a: &ExtractedAnswer, b: &ExtractedAnswer) -> bool {
    match (&a.numeric, &b.numeric) {
        (Some(x), Some(y)) => x == y,
        _ => a.canonical == b.canonical,
    }
}

/// One equivalence class in a vote tally. `members` are indices into the
/// original answer list (absent answers never appear).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteClass {
    pub representative: ExtractedAnswer,
    pub members: Vec<usize>,
}

impl VoteClass {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Majority-vote result: equivalence classes plus the (possibly tied)
/// winner set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub classes: Vec<VoteClass>,
    /// Indices into `classes` with maximal count.
    pub winners: Vec<usize>,
}

impl VoteTally {
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn winner_classes(&self) -> impl Iterator<Item = &VoteClass> {
        self.winners.iter().map(|&i| &self.classes[i])
    }

    /// The unique winner's representative, or None on a tie or empty tally.
    pub fn unique_winner(&self) -> Option<&ExtractedAnswer> {
        match self.winners.as_slice() {
            [only] => Some(&self.classes[*only].representative),
            _ => None,
        }
    }

    /// True when some winner class is equivalent to `truth`.
    pub fn winner_matches(&self, truth: &ExtractedAnswer) -> bool {
        self.winner_classes().any(|c| equivalent(&c.representative, truth))
    }
}

/// Groups present answers into equivalence classes (greedily, in input
/// order) and marks the classes of maximal count as winners.
pub fn majority_vote(answers: &[Option<ExtractedAnswer>]) -> VoteTally {
    let mut classes: Vec<VoteClass> = Vec::new();
    for (idx, answer) in answers.iter().enumerate() {
        let Some(answer) = answer else { continue };
        match classes.iter_mut().find(|c| equivalent(&c.representative, answer)) {
            Some(class) => class.members.push(idx),
            None => classes.push(VoteClass { representative: answer.clone(), members: vec![idx] }),
        }
    }
    let max = classes.iter().map(VoteClass::count).max().unwrap_or(0);
    let winners = classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.count() == max)
        .map(|(i, _)| i)
        .collect();
    VoteTally { classes, winners }
}
