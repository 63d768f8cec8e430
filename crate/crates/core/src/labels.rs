//! Class label space and free-text label resolution.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted `edit_distance / max(len)` for a fuzzy match.
pub const FUZZY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label space needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("class name at position {0} is empty")]
    EmptyName(usize),
    #[error("class name {0:?} contains a reserved character (':', ';' or a line break)")]
    ReservedCharacter(String),
    #[error("class names {0:?} and {1:?} collide after normalization")]
    Duplicate(String, String),
    #[error("{0:?} does not match any listed class")]
    UnknownLabel(String),
    #[error("{candidate:?} matches several classes equally well: {options:?}")]
    AmbiguousLabel { candidate: String, options: Vec<String> },
}

/// Ordered list of unique class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
    normalized: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(names: I) -> Result<Self, LabelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(|s| String::from(s.into().trim())).collect();
        if names.len() < 2 {
            return Err(LabelError::TooFewClasses(names.len()));
        }
        let mut normalized: Vec<String> = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(LabelError::EmptyName(i));
            }
            if name.contains([':', ';', '\n', '\r']) {
                return Err(LabelError::ReservedCharacter(name.clone()));
            }
            let norm = normalize(name);
            if norm.is_empty() {
                return Err(LabelError::EmptyName(i));
            }
            if let Some(j) = normalized.iter().position(|n| *n == norm) {
                return Err(LabelError::Duplicate(names[j].clone(), name.clone()));
            }
            normalized.push(norm);
        }
        Ok(Self { names, normalized })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Index of the class whose normalized name equals `text`'s.
    pub fn exact_index(&self, text: &str) -> Option<usize> {
        let norm = normalize(text);
        self.normalized.iter().position(|n| *n == norm)
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = LabelError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(value: LabelSpace) -> Self {
        value.names
    }
}

/// Lowercases, maps `_` to a space, collapses whitespace and strips
/// trailing punctuation.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase().replace('_', " ");
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    let trimmed = out.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    String::from(trimmed)
}

/// Resolves free text to a class index.
///
/// Exact normalized match first, then whole-word containment in either
/// direction, then the nearest class by edit distance (adjacent
/// transpositions cost one) when `distance / max(len)` is at most
/// [`FUZZY_THRESHOLD`].
pub fn match_label(candidate: &str, labels: &LabelSpace) -> Result<usize, LabelError> {
    let cand = normalize(candidate);
    if cand.is_empty() {
        return Err(LabelError::UnknownLabel(String::from(candidate)));
    }
    if let Some(i) = labels.normalized.iter().position(|n| *n == cand) {
        return Ok(i);
    }

    let cand_words: Vec<&str> = cand.split(' ').collect();
    let contained: Vec<usize> = labels
        .normalized
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            let words: Vec<&str> = n.split(' ').collect();
            contains_words(&cand_words, &words) || contains_words(&words, &cand_words)
        })
        .map(|(i, _)| i)
        .collect();
    match contained.as_slice() {
        [single] => return Ok(*single),
        [] => {}
        many => return Err(ambiguous(candidate, labels, many)),
    }

    let cand_chars: Vec<char> = cand.chars().collect();
    let mut best: Option<usize> = None;
    let mut best_idx: Vec<usize> = Vec::new();
    for (i, n) in labels.normalized.iter().enumerate() {
        let chars: Vec<char> = n.chars().collect();
        let d = edit_distance(&cand_chars, &chars);
        let longest = cand_chars.len().max(chars.len());
        if d as f64 > FUZZY_THRESHOLD * longest as f64 {
            continue;
        }
        match best {
            Some(b) if d > b => {}
            Some(b) if d == b => best_idx.push(i),
            _ => {
                best = Some(d);
                best_idx.clear();
                best_idx.push(i);
            }
        }
    }
    match best_idx.as_slice() {
        [single] => Ok(*single),
        [] => Err(LabelError::UnknownLabel(String::from(candidate))),
        many => Err(ambiguous(candidate, labels, many)),
    }
}

fn ambiguous(candidate: &str, labels: &LabelSpace, idx: &[usize]) -> LabelError {
    LabelError::AmbiguousLabel {
        candidate: String::from(candidate),
        options: idx.iter().map(|&i| labels.names[i].clone()).collect(),
    }
}

fn contains_words(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Optimal-string-alignment distance: insert, delete, substitute, and swap
/// of two adjacent characters, each costing one.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let cols = b.len() + 1;
    let mut prev2: Vec<usize> = alloc::vec![0; cols];
    let mut prev: Vec<usize> = (0..cols).collect();
    let mut cur: Vec<usize> = alloc::vec![0; cols];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..cols {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(prev2[j - 2] + 1);
            }
            cur[j] = v;
        }
        core::mem::swap(&mut prev2, &mut prev);
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
