use std::fmt;

use serde::{Deserialize, Serialize};

/// Every contract rule a response can break. Names serialize in snake_case
/// and are the stable identifiers used in transcripts and rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    // JSON line structure
    MalformedJson,
    MissingField,
    UnexpectedField,
    RowIdMismatch,
    UnexpectedRow,
    DuplicateRow,
    MissingRow,
    StrayContent,
    // <think>/<answer> structure
    MissingThink,
    MultipleThink,
    UnclosedThink,
    MissingAnswer,
    MultipleAnswer,
    UnclosedAnswer,
    TagCase,
    BadAnswerToken,
    // prediction lines
    BadLabel,
    LabelAnswerMismatch,
    // text modes
    EmptyTextMode,
    WordLimit,
    PredictiveLanguage,
    // knowledge-base trajectories
    DespiteCount,
    MissingClosingPhrase,
    ClosingLabelMismatch,
    MissingOccurrencePhrase,
    MissingSeverityPhrase,
    SeverityClaimForZero,
    AnswerMismatch,
    // gateway
    BackendFailure,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        use ViolationKind::*;
        match self {
            MalformedJson => "malformed_json",
            MissingField => "missing_field",
            UnexpectedField => "unexpected_field",
            RowIdMismatch => "row_id_mismatch",
            UnexpectedRow => "unexpected_row",
            DuplicateRow => "duplicate_row",
            MissingRow => "missing_row",
            StrayContent => "stray_content",
            MissingThink => "missing_think",
            MultipleThink => "multiple_think",
            UnclosedThink => "unclosed_think",
            MissingAnswer => "missing_answer",
            MultipleAnswer => "multiple_answer",
            UnclosedAnswer => "unclosed_answer",
            TagCase => "tag_case",
            BadAnswerToken => "bad_answer_token",
            BadLabel => "bad_label",
            LabelAnswerMismatch => "label_answer_mismatch",
            EmptyTextMode => "empty_text_mode",
            WordLimit => "word_limit",
            PredictiveLanguage => "predictive_language",
            DespiteCount => "despite_count",
            MissingClosingPhrase => "missing_closing_phrase",
            ClosingLabelMismatch => "closing_label_mismatch",
            MissingOccurrencePhrase => "missing_occurrence_phrase",
            MissingSeverityPhrase => "missing_severity_phrase",
            SeverityClaimForZero => "severity_claim_for_zero",
            AnswerMismatch => "answer_mismatch",
            BackendFailure => "backend_failure",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            detail: detail.into(),
        }
    }

    pub fn bare(kind: ViolationKind) -> Self {
        Violation::new(kind, "")
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.kind, self.detail)
        }
    }
}

pub fn has_kind(violations: &[Violation], kind: ViolationKind) -> bool {
    violations.iter().any(|v| v.kind == kind)
}
