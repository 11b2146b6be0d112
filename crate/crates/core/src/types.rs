//! Domain values shared across the engine: queries, reasoning steps and
//! paths, plus answer normalization.
//!
//! Everything here is an immutable value. Paths are extended by returning a
//! new path, so a tree node can hold its own copy of the state without
//! aliasing its parent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token that ends a reasoning trajectory. A step is terminal when it
/// contains this token followed by nothing but whitespace.
pub const TERMINAL_MARKER: &str = "<END>";

/// Separator between steps in serialized/prompted text. Step bodies may not
/// contain it.
pub const STEP_DELIMITER: char = '\n';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("query text must be non-empty")]
    EmptyQueryText,
    #[error("step text must be non-empty")]
    EmptyStep,
    #[error("step text contains the step delimiter")]
    DelimiterInStep,
    #[error("cannot extend a terminal path")]
    ExtendTerminal,
}

/// A reasoning problem: text, an optional opaque image reference, concept
/// labels, and (for annotation/benchmarks) the reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalQuery {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub kc_labels: Vec<String>,
    #[serde(default)]
    pub answer_key: Option<String>,
}

impl MultimodalQuery {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyQueryText);
        }
        Ok(Self {
            id: id.into(),
            text,
            image_ref: None,
            kc_labels: Vec::new(),
            answer_key: None,
        })
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.image_ref = Some(image_ref.into());
        self
    }

    pub fn with_kc_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.kc_labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.answer_key = Some(answer.into());
        self
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if self.text.trim().is_empty() {
            return Err(TypeError::EmptyQueryText);
        }
        Ok(())
    }
}

/// One generated reasoning step and the insight (if any) it was conditioned on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningStep {
    text: String,
    #[serde(default)]
    insight_id: Option<String>,
}

impl ReasoningStep {
    pub fn new(text: impl Into<String>) -> Result<Self, TypeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyStep);
        }
        if text.contains(STEP_DELIMITER) {
            return Err(TypeError::DelimiterInStep);
        }
        Ok(Self {
            text,
            insight_id: None,
        })
    }

    pub fn with_insight(mut self, insight_id: Option<String>) -> Self {
        self.insight_id = insight_id;
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn insight_id(&self) -> Option<&str> {
        self.insight_id.as_deref()
    }

    pub fn is_terminal(&self) -> bool {
        terminal_answer(&self.text).is_some()
    }

    /// Normalized final answer if this step is terminal.
    pub fn final_answer(&self) -> Option<String> {
        terminal_answer(&self.text).map(|raw| normalize_answer(&extract_answer(raw)))
    }
}

/// Text before the terminal marker, if the marker is the last non-blank token.
fn terminal_answer(text: &str) -> Option<&str> {
    let idx = text.rfind(TERMINAL_MARKER)?;
    let rest = &text[idx + TERMINAL_MARKER.len()..];
    if rest.trim().is_empty() {
        Some(&text[..idx])
    } else {
        None
    }
}

/// Pull the answer span out of a terminal step body: whatever follows the
/// last "answer is", else the last ':', else the whole body.
fn extract_answer(body: &str) -> String {
    let lower = body.to_lowercase();
    if lower.len() == body.len() {
        if let Some(pos) = lower.rfind("answer is") {
            return body[pos + "answer is".len()..].to_string();
        }
    }
    if let Some(pos) = body.rfind(':') {
        return body[pos + 1..].to_string();
    }
    body.to_string()
}

/// An ordered list of steps. `final_answer` is set exactly when the last
/// step is terminal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    steps: Vec<ReasoningStep>,
    #[serde(default)]
    final_answer: Option<String>,
}

impl ReasoningPath {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Rebuild a path from steps, rejecting a terminal step anywhere but last.
    pub fn from_steps(steps: impl IntoIterator<Item = ReasoningStep>) -> Result<Self, TypeError> {
        steps
            .into_iter()
            .try_fold(Self::empty(), |path, step| extend_path(&path, step))
    }

    pub fn steps(&self) -> &[ReasoningStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.final_answer.is_some()
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.final_answer.as_deref()
    }

    pub fn last_step(&self) -> Option<&ReasoningStep> {
        self.steps.last()
    }

    /// Path without its last step.
    pub fn parent_prefix(&self) -> ReasoningPath {
        let mut steps = self.steps.clone();
        steps.pop();
        ReasoningPath {
            steps,
            final_answer: None,
        }
    }

    /// Step texts joined by single spaces.
    pub fn joined_text(&self) -> String {
        self.steps
            .iter()
            .map(ReasoningStep::text)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// t_j = t_0 + y_1 + ... + y_j: the query text followed by every step.
    pub fn compose_query_text(&self, query_text: &str) -> String {
        let mut out = String::from(query_text);
        for step in &self.steps {
            out.push(' ');
            out.push_str(step.text());
        }
        out
    }
}

/// Return a new path with `step` appended. The input is left untouched.
pub fn extend_path(path: &ReasoningPath, step: ReasoningStep) -> Result<ReasoningPath, TypeError> {
    if path.is_terminal() {
        return Err(TypeError::ExtendTerminal);
    }
    let final_answer = step.final_answer();
    let mut steps = path.steps.clone();
    steps.push(step);
    Ok(ReasoningPath {
        steps,
        final_answer,
    })
}

const LEADING_STRIP: &[char] = &['(', '[', '{', '"', '\'', ':', ',', ';', '*', '`'];
const TRAILING_STRIP: &[char] = &[')', ']', '}', '"', '\'', '.', ',', ';', ':', '!', '?', '*', '`'];

/// Canonical answer string: lowercased and trimmed, with a leading
/// `answer:` and surrounding brackets/punctuation removed.
///
/// The rules are applied until nothing changes, so the function is idempotent.
pub fn normalize_answer(raw: &str) -> String {
    let mut current = raw.to_string();
    loop {
        let next = normalize_once(&current);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn normalize_once(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mut out = lowered.trim();
    if let Some(rest) = out.strip_prefix("answer:") {
        out = rest.trim();
    }
    out = out.trim_start_matches(|c: char| LEADING_STRIP.contains(&c) || c.is_whitespace());
    out = out.trim_end_matches(|c: char| TRAILING_STRIP.contains(&c) || c.is_whitespace());
    out.to_string()
}

/// SplitMix64 finalizer folded over `parts`; used to derive independent
/// sub-seeds (per task, per candidate, per depth) from one base seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of a string, independent of the std hasher's
/// per-process randomization.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
