//! Strict `<think>...</think><answer>...</answer>` trajectories.

use serde::{Deserialize, Serialize};

use super::violation::{Violation, ViolationKind};
use crate::model::PdeCategory;

pub const CLOSING_PHRASE: &str =
    "Based on these factors, it is reasonable to claim PDE_category is";
pub const OCCURRENCE_PHRASE: &str = "occurrence resolves to";
pub const SEVERITY_PHRASE: &str = "severity resolves to";

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub think: String,
    pub answer: PdeCategory,
    pub raw: String,
}

impl Trajectory {
    pub fn render(think: &str, answer: PdeCategory) -> String {
        format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
    }

    pub fn new(think: impl Into<String>, answer: PdeCategory) -> Self {
        let think = think.into();
        let raw = Trajectory::render(&think, answer);
        Trajectory { think, answer, raw }
    }
}

fn count_ci(haystack_lower: &str, needle: &str) -> usize {
    haystack_lower.matches(needle).count()
}

/// Parses a trajectory under the strict format contract. Every detectable
/// violation is reported; nothing is repaired.
pub fn parse_trajectory(raw: &str) -> Result<Trajectory, Vec<Violation>> {
    let mut violations = Vec::new();
    let lower = raw.to_ascii_lowercase();
    let tags = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
    let counts: Vec<usize> = tags.iter().map(|t| raw.matches(t).count()).collect();
    for (tag, &exact) in tags.iter().zip(&counts) {
        if count_ci(&lower, tag) > exact {
            violations.push(Violation::new(
                ViolationKind::TagCase,
                format!("non-lowercase {tag}"),
            ));
        }
    }
    let [think_open, think_close, answer_open, answer_close] =
        [counts[0], counts[1], counts[2], counts[3]];
    match think_open {
        0 => violations.push(Violation::bare(ViolationKind::MissingThink)),
        1 => {}
        n => violations.push(Violation::new(
            ViolationKind::MultipleThink,
            format!("{n} <think> blocks"),
        )),
    }
    match answer_open {
        0 => violations.push(Violation::bare(ViolationKind::MissingAnswer)),
        1 => {}
        n => violations.push(Violation::new(
            ViolationKind::MultipleAnswer,
            format!("{n} <answer> blocks"),
        )),
    }
    if think_open >= 1 && think_close == 0 {
        violations.push(Violation::bare(ViolationKind::UnclosedThink));
    }
    if answer_open >= 1 && answer_close == 0 {
        violations.push(Violation::bare(ViolationKind::UnclosedAnswer));
    }
    if think_close > 1 && think_open <= 1 {
        violations.push(Violation::new(
            ViolationKind::MultipleThink,
            "extra </think>",
        ));
    }
    if answer_close > 1 && answer_open <= 1 {
        violations.push(Violation::new(
            ViolationKind::MultipleAnswer,
            "extra </answer>",
        ));
    }
    if !violations.is_empty() {
        return Err(violations);
    }

    let t_open = raw.find(THINK_OPEN).unwrap();
    let t_close = raw.find(THINK_CLOSE).unwrap();
    let a_open = raw.find(ANSWER_OPEN).unwrap();
    let a_close = raw.find(ANSWER_CLOSE).unwrap();
    if t_open > 0 {
        violations.push(Violation::new(
            ViolationKind::StrayContent,
            "text before <think>",
        ));
    }
    if t_close < t_open || a_close < a_open {
        violations.push(Violation::new(
            ViolationKind::UnclosedThink,
            "closing tag precedes opening tag",
        ));
        return Err(violations);
    }
    if a_open < t_close {
        violations.push(Violation::new(
            ViolationKind::MissingAnswer,
            "<answer> not after </think>",
        ));
        return Err(violations);
    }
    if a_open != t_close + THINK_CLOSE.len() {
        violations.push(Violation::new(
            ViolationKind::StrayContent,
            "text between </think> and <answer>",
        ));
    }
    let end = a_close + ANSWER_CLOSE.len();
    if end != raw.len() {
        violations.push(Violation::new(
            ViolationKind::StrayContent,
            "text after </answer>",
        ));
    }
    let token = &raw[a_open + ANSWER_OPEN.len()..a_close];
    let answer = match token {
        "0" => Some(PdeCategory::Low),
        "1" => Some(PdeCategory::Medium),
        "2" => Some(PdeCategory::High),
        other => {
            violations.push(Violation::new(
                ViolationKind::BadAnswerToken,
                format!("answer `{other}`"),
            ));
            None
        }
    };
    if !violations.is_empty() {
        return Err(violations);
    }
    Ok(Trajectory {
        think: raw[t_open + THINK_OPEN.len()..t_close].to_string(),
        answer: answer.unwrap(),
        raw: raw.to_string(),
    })
}

/// Sentence split on ". ", "! " and "? ", trimmed, empties dropped.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?') && bytes[i + 1] == b' ' {
            out.push(text[start..=i].trim());
            start = i + 2;
            i += 2;
        } else {
            i += 1;
        }
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    pub has_single_think_answer: bool,
    pub despite_count: usize,
    pub has_closing_phrase: bool,
    pub has_occurrence_phrase: bool,
    pub has_severity_phrase: bool,
    pub answer_matches_ground_truth: Option<bool>,
    pub violations: Vec<Violation>,
}

impl TrajectoryAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Label stated right after the closing phrase, if any.
pub fn closing_label(think: &str) -> Option<PdeCategory> {
    let pos = think.rfind(CLOSING_PHRASE)?;
    let rest = think[pos + CLOSING_PHRASE.len()..].trim_start();
    let c = rest.chars().next()?;
    c.to_digit(10)
        .and_then(|d| PdeCategory::from_value(d as i64))
}

/// Checks a parsed knowledge-base trajectory against the reasoning contract.
pub fn audit_kb_trajectory(t: &Trajectory, ground_truth: PdeCategory) -> TrajectoryAudit {
    let despite_count = sentences(&t.think)
        .iter()
        .filter(|s| s.starts_with("Despite"))
        .count();
    let has_closing_phrase = t.think.contains(CLOSING_PHRASE);
    let has_occurrence_phrase = t.think.contains(OCCURRENCE_PHRASE);
    let has_severity_phrase = t.think.contains(SEVERITY_PHRASE);
    let matches = t.answer == ground_truth;

    let mut violations = Vec::new();
    if despite_count != 1 {
        violations.push(Violation::new(
            ViolationKind::DespiteCount,
            format!("{despite_count} sentences begin with \"Despite\""),
        ));
    }
    if !has_closing_phrase {
        violations.push(Violation::bare(ViolationKind::MissingClosingPhrase));
    } else if closing_label(&t.think) != Some(t.answer) {
        violations.push(Violation::new(
            ViolationKind::ClosingLabelMismatch,
            "closing phrase names a different label than <answer>",
        ));
    }
    if !has_occurrence_phrase {
        violations.push(Violation::bare(ViolationKind::MissingOccurrencePhrase));
    }
    if ground_truth == PdeCategory::Low {
        if has_severity_phrase {
            violations.push(Violation::bare(ViolationKind::SeverityClaimForZero));
        }
    } else if !has_severity_phrase {
        violations.push(Violation::bare(ViolationKind::MissingSeverityPhrase));
    }
    if !matches {
        violations.push(Violation::new(
            ViolationKind::AnswerMismatch,
            format!("answer {} but ground truth {}", t.answer, ground_truth),
        ));
    }
    TrajectoryAudit {
        has_single_think_answer: true,
        despite_count,
        has_closing_phrase,
        has_occurrence_phrase,
        has_severity_phrase,
        answer_matches_ground_truth: Some(matches),
        violations,
    }
}
