//! Prompt construction and strict response validation for the three LLM
//! call families: text modes, knowledge-base reasoning and prediction.

mod templates;
mod trajectory;
mod validate;
mod violation;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use templates::{
    build_kb_reasoning_prompt, build_prediction_prompt, build_text_mode_prompt, input_lines,
    FreeShotInput, KbInput, NeighborInput, PredictionInput, TargetInput,
};
pub use trajectory::{
    audit_kb_trajectory, closing_label, parse_trajectory, sentences, Trajectory, TrajectoryAudit,
    CLOSING_PHRASE, OCCURRENCE_PHRASE, SEVERITY_PHRASE,
};
pub use validate::{
    parse_kb_object, parse_prediction, validate_batch, validate_text_mode, word_count,
    BatchVerdict, KbTrajectory, KbValidator, ParsedPrediction, PredictionValidator,
    ResponseValidator, TextModeValidator, DEFAULT_DENYLIST, DEFAULT_MAX_WORDS,
};
pub use violation::{has_kind, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TextMode,
    KbReasoning,
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub system: String,
    pub user: String,
    pub expected_rows: Vec<i64>,
}

impl PromptBundle {
    /// Hex SHA-256 of `system`, a NUL separator and `user`. Mock scripts are
    /// keyed by this value.
    pub fn sha256(&self) -> String {
        prompt_sha256(&self.system, &self.user)
    }

    /// Follow-up bundle asking again for the listed rows only, with the
    /// violations from the previous attempt appended.
    pub fn reask(&self, rejected: &[(i64, Vec<Violation>)]) -> PromptBundle {
        let rows: BTreeSet<i64> = rejected.iter().map(|(r, _)| *r).collect();
        let kept: Vec<&str> = self
            .user
            .lines()
            .filter(|line| {
                if !line.starts_with('{') {
                    return true;
                }
                serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("row_id").and_then(|r| r.as_i64()))
                    .is_none_or(|id| rows.contains(&id))
            })
            .collect();
        let mut user = kept.join("\n");
        user.push_str("\n\nYour previous output broke the required format for these rows:");
        for (row, violations) in rejected {
            let names: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            user.push_str(&format!("\n- row {row}: {}", names.join("; ")));
        }
        user.push_str(
            "\nReturn corrected STRICT JSONL for exactly these rows, with no other text.",
        );
        PromptBundle {
            kind: self.kind,
            system: self.system.clone(),
            user,
            expected_rows: self
                .expected_rows
                .iter()
                .copied()
                .filter(|r| rows.contains(r))
                .collect(),
        }
    }
}

pub fn prompt_sha256(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system.as_bytes());
    hasher.update([0u8]);
    hasher.update(user.as_bytes());
    hex::encode(hasher.finalize())
}
