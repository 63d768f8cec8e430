//! Extraction of `Category` / `Reasoning` / `Verdict` fields from free-form
//! model output, and the canonical formatting used to replay hypotheses.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{AgentRole, Hypothesis, ParseError, Verdict};
use crate::labels::{match_label, LabelError, LabelSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Category,
    Reasoning,
    Verdict,
}

impl Field {
    const ALL: [Field; 3] = [Field::Category, Field::Reasoning, Field::Verdict];

    fn word(self) -> &'static str {
        match self {
            Field::Category => "category",
            Field::Reasoning => "reasoning",
            Field::Verdict => "verdict",
        }
    }
}

/// A field marker: where the word starts and where its value starts.
#[derive(Debug, Clone, Copy)]
struct Marker {
    field: Field,
    start: usize,
    value: usize,
}

/// Finds `word[*\s]*:` at word boundaries, case-insensitively. Works on the
/// ASCII-lowercased text so byte offsets line up with the original.
fn markers(lower: &str) -> Vec<Marker> {
    let bytes = lower.as_bytes();
    let mut found = Vec::new();
    for field in Field::ALL {
        for (start, w) in lower.match_indices(field.word()) {
            if start > 0 && bytes[start - 1].is_ascii_alphanumeric() {
                continue;
            }
            let mut i = start + w.len();
            while i < bytes.len() && matches!(bytes[i], b'*' | b' ' | b'\t') {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b':' {
                found.push(Marker { field, start, value: i + 1 });
            }
        }
    }
    found.sort_by_key(|m| m.start);
    found
}

fn next_marker_after(all: &[Marker], pos: usize) -> usize {
    all.iter().find(|m| m.start >= pos).map_or(usize::MAX, |m| m.start)
}

fn strip_markup(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '`' | '"' | '\'' | '<' | '>' | '[' | ']'))
}

/// Parses one agent response into a [`Hypothesis`].
///
/// The last `Category:` marker wins, so prose or an echoed format line before
/// the answer is tolerated. Reasoning runs from its marker to the next field
/// marker and is folded onto one line.
pub fn parse_agent_output(role: AgentRole, text: &str, labels: &LabelSpace) -> Result<Hypothesis, ParseError> {
    let lower = text.to_ascii_lowercase();
    let all = markers(&lower);

    let category = all.iter().rev().find(|m| m.field == Field::Category).ok_or(ParseError::MissingCategory)?;
    let cat_end = text[category.value..]
        .find([';', '\n'])
        .map_or(text.len(), |i| category.value + i)
        .min(next_marker_after(&all, category.value));
    let raw_label = strip_markup(&text[category.value..cat_end]);
    if raw_label.is_empty() {
        return Err(ParseError::MissingCategory);
    }

    let reasoning = all
        .iter()
        .find(|m| m.field == Field::Reasoning && m.start > category.start)
        .or_else(|| all.iter().rev().find(|m| m.field == Field::Reasoning))
        .ok_or(ParseError::MissingReasoning)?;
    let r_end = next_marker_after(&all, reasoning.value).min(text.len());
    let rationale = fold_lines(&text[reasoning.value..r_end]);
    if rationale.is_empty() {
        return Err(ParseError::MissingReasoning);
    }

    let verdict = if role == AgentRole::VisionAnalyst {
        let marker = all.iter().rev().find(|m| m.field == Field::Verdict).ok_or(ParseError::MissingVerdict)?;
        let value = strip_markup(&text[marker.value..]);
        let word: String = value.chars().take_while(char::is_ascii_alphabetic).collect();
        Some(Verdict::parse(&word).ok_or(ParseError::MissingVerdict)?)
    } else {
        None
    };

    let label_index = match_label(raw_label, labels).map_err(|e| match e {
        LabelError::AmbiguousLabel { candidate, options } => ParseError::AmbiguousLabel { text: candidate, options },
        _ => ParseError::UnknownLabel { text: raw_label.into() },
    })?;

    Ok(Hypothesis { label_index, raw_label_text: raw_label.into(), rationale, verdict })
}

/// Joins the trimmed non-empty lines of `s` with single spaces.
fn fold_lines(s: &str) -> String {
    let s = s.trim_start_matches(|c: char| c.is_whitespace() || c == '*');
    let mut out = String::with_capacity(s.len());
    for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(line);
    }
    out
}

/// Canonical one-line contract string for a hypothesis.
pub fn format_hypothesis(hypothesis: &Hypothesis, labels: &LabelSpace) -> String {
    let label = labels.name(hypothesis.label_index).unwrap_or(&hypothesis.raw_label_text);
    match hypothesis.verdict {
        Some(v) => format!("Verdict: {}; Category: {}; Reasoning: {}", v.as_str(), label, hypothesis.rationale),
        None => format!("Category: {}; Reasoning: {}", label, hypothesis.rationale),
    }
}
