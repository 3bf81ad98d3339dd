//! Response validators. A response is JSON Lines, one object per expected
//! row; each validator checks the per-row payload for its prompt kind.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::trajectory::{audit_kb_trajectory, parse_trajectory, Trajectory, TrajectoryAudit};
use super::violation::{Violation, ViolationKind};
use super::PromptKind;
use crate::model::PdeCategory;

pub const DEFAULT_DENYLIST: [&str; 4] = ["predict", "risk is", "PDE_category is", "likely damage"];
pub const DEFAULT_MAX_WORDS: usize = 120;

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Parses one JSON object from `line`. Text after the object is reported as
/// stray content alongside the object.
fn parse_object(line: &str) -> Result<(Map<String, Value>, Option<Violation>), Violation> {
    let mut stream = serde_json::Deserializer::from_str(line).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(Violation::new(ViolationKind::MalformedJson, e.to_string())),
        None => return Err(Violation::new(ViolationKind::MalformedJson, "empty line")),
    };
    let rest = line[stream.byte_offset()..].trim();
    let stray = (!rest.is_empty())
        .then(|| Violation::new(ViolationKind::StrayContent, "text after the JSON object"));
    match value {
        Value::Object(map) => Ok((map, stray)),
        other => Err(Violation::new(
            ViolationKind::MalformedJson,
            format!("expected a JSON object, got {}", json_type(&other)),
        )),
    }
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn row_id_of(map: &Map<String, Value>) -> Result<i64, Violation> {
    match map.get("row_id") {
        None => Err(Violation::new(ViolationKind::MissingField, "row_id")),
        Some(v) => v.as_i64().ok_or_else(|| {
            Violation::new(ViolationKind::MalformedJson, "row_id is not an integer")
        }),
    }
}

fn check_fields(map: &Map<String, Value>, allowed: &[&str], out: &mut Vec<Violation>) {
    for key in allowed {
        if !map.contains_key(*key) {
            out.push(Violation::new(ViolationKind::MissingField, *key));
        }
    }
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(Violation::new(ViolationKind::UnexpectedField, key.clone()));
        }
    }
}

fn string_field<'a>(
    map: &'a Map<String, Value>,
    key: &str,
    out: &mut Vec<Violation>,
) -> Option<&'a str> {
    match map.get(key) {
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            out.push(Violation::new(
                ViolationKind::MalformedJson,
                format!("{key} is not a string"),
            ));
            None
        }
        None => None,
    }
}

/// Per-kind payload validation. Implementations are pure.
pub trait ResponseValidator: Sync {
    type Item: Clone + Send;

    fn kind(&self) -> PromptKind;

    fn validate_object(
        &self,
        row_id: i64,
        map: &Map<String, Value>,
    ) -> Result<Self::Item, Vec<Violation>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict<T> {
    pub accepted: BTreeMap<i64, T>,
    pub rejected: BTreeMap<i64, Vec<Violation>>,
    /// Problems not attributable to an expected row.
    pub batch_violations: Vec<Violation>,
}

impl<T> BatchVerdict<T> {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty() && self.batch_violations.is_empty()
    }
}

/// Validates a whole JSON Lines response against the rows a bundle expects.
pub fn validate_batch<V: ResponseValidator>(
    validator: &V,
    expected_rows: &[i64],
    response: &str,
) -> BatchVerdict<V::Item> {
    let expected: BTreeSet<i64> = expected_rows.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut accepted = BTreeMap::new();
    let mut rejected: BTreeMap<i64, Vec<Violation>> = BTreeMap::new();
    let mut batch_violations = Vec::new();

    for (idx, line) in response.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (map, stray) = match parse_object(line) {
            Ok(parsed) => parsed,
            Err(mut v) => {
                if !line.starts_with('{') {
                    v = Violation::new(
                        ViolationKind::StrayContent,
                        format!("line {} is not JSON", idx + 1),
                    );
                }
                batch_violations.push(v);
                continue;
            }
        };
        let row_id = match row_id_of(&map) {
            Ok(id) => id,
            Err(v) => {
                batch_violations.push(v);
                continue;
            }
        };
        if !expected.contains(&row_id) {
            batch_violations.push(Violation::new(
                ViolationKind::UnexpectedRow,
                format!("row {row_id}"),
            ));
            continue;
        }
        if !seen.insert(row_id) {
            accepted.remove(&row_id);
            rejected.entry(row_id).or_default().push(Violation::new(
                ViolationKind::DuplicateRow,
                format!("row {row_id}"),
            ));
            continue;
        }
        let mut violations: Vec<Violation> = stray.into_iter().collect();
        match validator.validate_object(row_id, &map) {
            Ok(item) if violations.is_empty() => {
                accepted.insert(row_id, item);
            }
            Ok(_) => {
                rejected.insert(row_id, violations);
            }
            Err(v) => {
                violations.extend(v);
                rejected.insert(row_id, violations);
            }
        }
    }
    for row in expected.difference(&seen) {
        rejected.insert(
            *row,
            vec![Violation::new(
                ViolationKind::MissingRow,
                format!("row {row}"),
            )],
        );
    }
    BatchVerdict {
        accepted,
        rejected,
        batch_violations,
    }
}

fn validate_single<V: ResponseValidator>(
    validator: &V,
    line: &str,
    expected_row: Option<i64>,
) -> Result<(i64, V::Item), Vec<Violation>> {
    let (map, stray) = parse_object(line.trim()).map_err(|v| vec![v])?;
    let row_id = row_id_of(&map).map_err(|v| vec![v])?;
    let mut violations: Vec<Violation> = stray.into_iter().collect();
    if let Some(expected) = expected_row {
        if expected != row_id {
            violations.push(Violation::new(
                ViolationKind::RowIdMismatch,
                format!("expected row {expected}, got {row_id}"),
            ));
        }
    }
    match validator.validate_object(row_id, &map) {
        Ok(item) if violations.is_empty() => Ok((row_id, item)),
        Ok(_) => Err(violations),
        Err(v) => {
            violations.extend(v);
            Err(violations)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextModeValidator {
    pub denylist: Vec<String>,
    pub max_words: usize,
}

impl Default for TextModeValidator {
    fn default() -> Self {
        TextModeValidator {
            denylist: DEFAULT_DENYLIST.iter().map(|s| s.to_string()).collect(),
            max_words: DEFAULT_MAX_WORDS,
        }
    }
}

impl TextModeValidator {
    pub fn check_text(&self, text: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let words = word_count(text);
        if words == 0 {
            out.push(Violation::bare(ViolationKind::EmptyTextMode));
        }
        if words > self.max_words {
            out.push(Violation::new(
                ViolationKind::WordLimit,
                format!("{words} words (limit {})", self.max_words),
            ));
        }
        let lower = text.to_lowercase();
        for term in &self.denylist {
            if lower.contains(&term.to_lowercase()) {
                out.push(Violation::new(
                    ViolationKind::PredictiveLanguage,
                    format!("contains \"{term}\""),
                ));
            }
        }
        out
    }
}

impl ResponseValidator for TextModeValidator {
    type Item = String;

    fn kind(&self) -> PromptKind {
        PromptKind::TextMode
    }

    fn validate_object(
        &self,
        _row_id: i64,
        map: &Map<String, Value>,
    ) -> Result<String, Vec<Violation>> {
        let mut out = Vec::new();
        check_fields(map, &["row_id", "text_mode"], &mut out);
        let text = string_field(map, "text_mode", &mut out);
        if let Some(text) = text {
            out.extend(self.check_text(text));
        }
        match (text, out.is_empty()) {
            (Some(t), true) => Ok(t.to_string()),
            _ => Err(out),
        }
    }
}

/// Validates one text-mode response line for the given row.
pub fn validate_text_mode(
    response_line: &str,
    row_id: i64,
    validator: &TextModeValidator,
) -> Result<String, Vec<Violation>> {
    validate_single(validator, response_line, Some(row_id)).map(|(_, t)| t)
}

/// Knowledge-base lines: `{"row_id", "r1"}` with a trajectory that passes
/// the reasoning audit for the row's ground truth.
#[derive(Debug, Clone, Default)]
pub struct KbValidator {
    pub ground_truth: BTreeMap<i64, PdeCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbTrajectory {
    pub trajectory: Trajectory,
    pub audit: TrajectoryAudit,
}

pub fn parse_kb_object(map: &Map<String, Value>) -> Result<Trajectory, Vec<Violation>> {
    let mut out = Vec::new();
    check_fields(map, &["row_id", "r1"], &mut out);
    let r1 = string_field(map, "r1", &mut out);
    let parsed = r1.map(parse_trajectory);
    match parsed {
        Some(Ok(t)) if out.is_empty() => Ok(t),
        Some(Err(v)) => {
            out.extend(v);
            Err(out)
        }
        _ => Err(out),
    }
}

impl ResponseValidator for KbValidator {
    type Item = KbTrajectory;

    fn kind(&self) -> PromptKind {
        PromptKind::KbReasoning
    }

    fn validate_object(
        &self,
        row_id: i64,
        map: &Map<String, Value>,
    ) -> Result<KbTrajectory, Vec<Violation>> {
        let trajectory = parse_kb_object(map)?;
        let Some(&gt) = self.ground_truth.get(&row_id) else {
            return Err(vec![Violation::new(
                ViolationKind::UnexpectedRow,
                format!("no ground truth for row {row_id}"),
            )]);
        };
        let audit = audit_kb_trajectory(&trajectory, gt);
        if audit.is_clean() {
            Ok(KbTrajectory { trajectory, audit })
        } else {
            Err(audit.violations)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub row_id: i64,
    pub pred_label: PdeCategory,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PredictionValidator;

impl ResponseValidator for PredictionValidator {
    type Item = ParsedPrediction;

    fn kind(&self) -> PromptKind {
        PromptKind::Prediction
    }

    fn validate_object(
        &self,
        row_id: i64,
        map: &Map<String, Value>,
    ) -> Result<ParsedPrediction, Vec<Violation>> {
        let mut out = Vec::new();
        check_fields(map, &["row_id", "pred_label", "r1"], &mut out);
        let label = match map.get("pred_label") {
            Some(v) => {
                let label = v.as_i64().and_then(PdeCategory::from_value);
                if label.is_none() {
                    out.push(Violation::new(
                        ViolationKind::BadLabel,
                        format!("pred_label {v}"),
                    ));
                }
                label
            }
            None => None,
        };
        let trajectory = match string_field(map, "r1", &mut out).map(parse_trajectory) {
            Some(Ok(t)) => Some(t),
            Some(Err(v)) => {
                out.extend(v);
                None
            }
            None => None,
        };
        if let (Some(label), Some(t)) = (label, &trajectory) {
            if label != t.answer {
                out.push(Violation::new(
                    ViolationKind::LabelAnswerMismatch,
                    format!("pred_label {label} but <answer> {}", t.answer),
                ));
            }
        }
        match (label, trajectory) {
            (Some(pred_label), Some(trajectory)) if out.is_empty() => Ok(ParsedPrediction {
                row_id,
                pred_label,
                trajectory,
            }),
            _ => Err(out),
        }
    }
}

/// Parses one prediction line.
pub fn parse_prediction(response_line: &str) -> Result<ParsedPrediction, Vec<Violation>> {
    validate_single(&PredictionValidator, response_line, None).map(|(_, p)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::violation::has_kind;

    #[test]
    fn text_mode_word_limit_boundary() {
        let v = TextModeValidator::default();
        let words = |n: usize| vec!["w"; n].join(" ");
        let ok = serde_json::json!({"row_id": 1, "text_mode": words(120)}).to_string();
        assert!(validate_text_mode(&ok, 1, &v).is_ok());
        let bad = serde_json::json!({"row_id": 1, "text_mode": words(121)}).to_string();
        assert!(has_kind(
            &validate_text_mode(&bad, 1, &v).unwrap_err(),
            ViolationKind::WordLimit
        ));
    }

    #[test]
    fn text_mode_denylist_and_row_mismatch() {
        let v = TextModeValidator::default();
        let line = r#"{"row_id":1,"text_mode":"so PDE_category is 2"}"#;
        assert!(has_kind(
            &validate_text_mode(line, 1, &v).unwrap_err(),
            ViolationKind::PredictiveLanguage
        ));
        let line = r#"{"row_id":2,"text_mode":"hand is 2 m"}"#;
        assert!(has_kind(
            &validate_text_mode(line, 1, &v).unwrap_err(),
            ViolationKind::RowIdMismatch
        ));
        assert!(has_kind(
            &validate_text_mode("{oops", 1, &v).unwrap_err(),
            ViolationKind::MalformedJson
        ));
        let line = r#"{"row_id":1,"text_mode":"hand is 2 m","extra":1}"#;
        assert!(has_kind(
            &validate_text_mode(line, 1, &v).unwrap_err(),
            ViolationKind::UnexpectedField
        ));
    }

    #[test]
    fn prediction_line_checks() {
        let ok = r#"{"row_id":5,"pred_label":1,"r1":"<think>t</think><answer>1</answer>"}"#;
        let p = parse_prediction(ok).unwrap();
        assert_eq!((p.row_id, p.pred_label), (5, PdeCategory::Medium));
        let mismatch = r#"{"row_id":5,"pred_label":2,"r1":"<think>t</think><answer>1</answer>"}"#;
        assert!(has_kind(
            &parse_prediction(mismatch).unwrap_err(),
            ViolationKind::LabelAnswerMismatch
        ));
        let trailing = format!("{ok} Note: done");
        assert!(has_kind(
            &parse_prediction(&trailing).unwrap_err(),
            ViolationKind::StrayContent
        ));
        let bad = r#"{"row_id":5,"pred_label":3,"r1":"<think>t</think><answer>1</answer>"}"#;
        assert!(has_kind(
            &parse_prediction(bad).unwrap_err(),
            ViolationKind::BadLabel
        ));
    }

    #[test]
    fn batch_reports_missing_unexpected_and_duplicates() {
        let response = "Here you go:\n\
            {\"row_id\":1,\"text_mode\":\"a\"}\n\
            {\"row_id\":9,\"text_mode\":\"b\"}\n\
            {\"row_id\":3,\"text_mode\":\"c\"}\n\
            {\"row_id\":3,\"text_mode\":\"d\"}";
        let verdict = validate_batch(&TextModeValidator::default(), &[1, 2, 3], response);
        assert_eq!(
            verdict.accepted.keys().copied().collect::<Vec<_>>(),
            vec![1]
        );
        assert!(has_kind(&verdict.rejected[&2], ViolationKind::MissingRow));
        assert!(has_kind(&verdict.rejected[&3], ViolationKind::DuplicateRow));
        assert!(has_kind(
            &verdict.batch_violations,
            ViolationKind::StrayContent
        ));
        assert!(has_kind(
            &verdict.batch_violations,
            ViolationKind::UnexpectedRow
        ));
    }
}
