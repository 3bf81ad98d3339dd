//! The three prompt families. Template wording is fixed; only the bracketed
//! slots are filled in.

use serde::{Deserialize, Serialize};

use super::{PromptBundle, PromptKind};
use crate::error::{Error, Result};
use crate::kb::ShotKind;
use crate::model::{Feature, FeatureVec, Huc12, PdeCategory, Record, VariableDictionary};

const TEXT_MODE_SYSTEM: &str = "Convert tabular rows into a concise human-readable text_mode. \
Output STRICT JSONL, one line per row: {\"row_id\":<int>, \"text_mode\":\"<string>\"}. No extra text.";

const KB_SYSTEM: &str = "You are an expert flood risk analyst.\n\
Task: For each input item, output STRICT JSONL with exactly one line: \
{\"row_id\":<int>, \"r1\":\"<think>...</think><answer>...</answer>\"}.\n\
Format rules: r1 contains exactly one <think> block immediately followed by one <answer> block. \
Tag names are lowercase. Nothing before <think> or after </answer>. \
The content of <answer> is exactly one of \"0\", \"1\", \"2\". \
Output is valid single-line JSON with no trailing commas.\n\
Reasoning rules: use only the provided text_mode and the given ground_truth. Write about 200 words. \
Apply a two-stage structure: first occurrence (class 0 versus classes 1 or 2), then severity \
(class 1 versus class 2 when the outcome is nonzero). For occurrence, focus on structural, exposure, \
and history cues such as stream proximity, foundation height, building density or imperviousness, \
prior claims, and elevation. Rainfall intensity alone must not force a nonzero occurrence. \
Imperviousness or prior claims can support nonzero, but they do not overrule strong protection cues \
such as higher elevation or a raised foundation if text_mode frames them as protective. \
For severity, discuss rainfall intensity, duration and accumulation, local drainage such as HAND or \
elevation, and vulnerability such as FAR or low clearance. Use the exact phrases \
\"occurrence resolves to ...\" and \"severity resolves to ...\" when applicable. \
Include exactly one sentence that begins with \"Despite\" to resolve conflicts. \
End <think> with \"Based on these factors, it is reasonable to claim PDE_category is X.\". \
The content of <answer> must equal the provided ground_truth. If <answer> is \"0\", do not claim \
\"severity resolves to ...\"; you may state a conditional sentence about severity.";

const KB_USER_HEAD: &str = "For each item you will receive text_mode, ground_truth where 0=L, 1=M, 2=H, and huc12.\n\
Write a single <think>...</think> block followed immediately by a single <answer>...</answer> block, \
following the rules above. Include one conflict sentence that starts with \"Despite\". \
Conclude the <think> block with \"Based on these factors, it is reasonable to claim PDE_category is X.\". \
Ensure that <answer> exactly matches ground_truth (\"0\", \"1\", or \"2\").\n\
Finally, output STRICT JSONL with no extra lines or commentary: \
{\"row_id\":<int>, \"r1\":\"<think>...</think><answer>...</answer>\"}.";

const PREDICTION_SYSTEM_HEAD: &str = "You are an expert flood risk analyst.\n\
Task: For each item, predict PDE_category in {0,1,2} using only the provided fields. \
Neighbors within one kilometer are weighted by distance and rank. \
Use free-shots only as few-shot guidance when the number of neighbors is less than three.\n\
Allowed inputs: target text_mode; up to three neighbors (each with text_mode, reasoning, distance_km, rank); \
conditional free-shots (prototypes and hard examples). No external knowledge.\n\
Output format: STRICT JSONL, exactly one line per item: \
{\"row_id\":<int>, \"pred_label\":<0|1|2>, \"r1\":\"<think>...</think><answer>...</answer>\"}. \
Keep <think> concise, about two hundred words. The <answer> tag is only one of 0, 1, 2. \
If no neighbors are available, state this in <think> and rely on the target and the free-shots.\n\
Downgrade rule: When the prediction in <answer> contradicts the narrative evidence in <think>, \
adjust pred_label according to [DOWNGRADE_RULE] while keeping <think> faithful to the inputs.";

const PREDICTION_USER_HEAD: &str = "For each JSON line, understand the target from its text_mode and coordinates, \
then compare it against labeled neighbors and optional free-shots.\n\
Treat neighbors with smaller distance_km and lower rank as more influential examples. \
Use free-shots mainly as prototypes or boundary cases when local neighbor evidence is sparse or ambiguous.\n\
In <think>, explain how the target resembles or differs from neighbors and free-shots, then apply the \
downgrade rule if the narrative evidence and the final label would otherwise be inconsistent.\n\
=== INPUT JSONL ===";

const PREDICTION_USER_TAIL: &str = "Each JSON line contains:\n  \"row_id\":<int>,\n  \
\"target\":{\"text_mode\":<string>,\"x\":<float>,\"y\":<float>},\n  \
\"neighbors\":[{\"n_label\":<0|1|2>, \"n_text_mode\":<string>, \"n_reasoning\":<string>, \
\"distance_km\":<float>, \"within_1km\":true, \"rank\":<int>}, ...],\n  \
\"free_shots\":[{\"type\":\"prototype\"|\"hard_example\", \"PDE_category\":<0|1|2>, \"text_mode\":<string>, \
\"reasoning\":<string>, \"why_selected\":<string>}, ...]\n\
Return STRICT JSONL with no extra lines or commentary: \
{\"row_id\":<int>, \"pred_label\":<0|1|2>, \"r1\":\"<think>...</think><answer>...</answer>\"}.";

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|item| serde_json::to_string(item).expect("prompt inputs serialize"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Serialize)]
struct TextModeInput<'a> {
    row_id: i64,
    #[serde(flatten)]
    predictors: &'a FeatureVec,
}

pub fn build_text_mode_prompt(
    records: &[Record],
    ordered_features: &[Feature],
    dictionary: &VariableDictionary,
) -> Result<PromptBundle> {
    if records.is_empty() {
        return Err(Error::InvalidInput("text-mode batch has no records".into()));
    }
    let order = ordered_features
        .iter()
        .map(|f| f.key())
        .collect::<Vec<_>>()
        .join(", ");
    let inputs: Vec<TextModeInput> = records
        .iter()
        .map(|r| TextModeInput {
            row_id: r.row_id,
            predictors: &r.predictors,
        })
        .collect();
    let user = format!(
        "Write a \u{2264}120-word paragraph that only paraphrases feature values. Follow order: [{order}]. \
Do not infer risk or predict. Skip NULL or trivial zeros. Use units from the legend when useful. \
Keep numbers compact. Input legend: [{legend}]. Input JSONL: [\n{input}\n].",
        legend = dictionary.legend(),
        input = jsonl(&inputs),
    );
    Ok(PromptBundle {
        kind: PromptKind::TextMode,
        system: TEXT_MODE_SYSTEM.to_string(),
        user,
        expected_rows: records.iter().map(|r| r.row_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbInput {
    pub row_id: i64,
    pub text_mode: String,
    pub ground_truth: Option<PdeCategory>,
    pub huc12: Huc12,
}

pub fn build_kb_reasoning_prompt(entries: &[KbInput]) -> Result<PromptBundle> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("reasoning batch has no entries".into()));
    }
    for e in entries {
        if e.ground_truth.is_none() {
            return Err(Error::InvalidInput(format!(
                "row {} has no ground-truth label",
                e.row_id
            )));
        }
        if e.text_mode.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "row {} has an empty text mode",
                e.row_id
            )));
        }
    }
    let user = format!("{KB_USER_HEAD}\nInputs: [\n{}\n]", jsonl(entries));
    Ok(PromptBundle {
        kind: PromptKind::KbReasoning,
        system: KB_SYSTEM.to_string(),
        user,
        expected_rows: entries.iter().map(|e| e.row_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInput {
    pub text_mode: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborInput {
    pub n_label: PdeCategory,
    pub n_text_mode: String,
    pub n_reasoning: String,
    pub distance_km: f64,
    pub within_1km: bool,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeShotInput {
    #[serde(rename = "type")]
    pub kind: ShotKind,
    #[serde(rename = "PDE_category")]
    pub level: PdeCategory,
    pub text_mode: String,
    pub reasoning: String,
    pub why_selected: String,
}

/// One prediction item: the target plus its retrieved context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInput {
    pub row_id: i64,
    pub target: TargetInput,
    pub neighbors: Vec<NeighborInput>,
    pub free_shots: Vec<FreeShotInput>,
}

pub fn build_prediction_prompt(
    items: &[PredictionInput],
    downgrade_rule: &str,
) -> Result<PromptBundle> {
    if items.is_empty() {
        return Err(Error::InvalidInput("prediction batch has no items".into()));
    }
    let system = format!(
        "{PREDICTION_SYSTEM_HEAD}\n[DOWNGRADE_RULE]\n{}",
        downgrade_rule.trim_end()
    );
    let user = format!(
        "{PREDICTION_USER_HEAD}\n[\n{}\n]\n{PREDICTION_USER_TAIL}",
        jsonl(items)
    );
    Ok(PromptBundle {
        kind: PromptKind::Prediction,
        system,
        user,
        expected_rows: items.iter().map(|i| i.row_id).collect(),
    })
}

/// Input lines of a bundle's user message (lines that open a JSON object).
pub fn input_lines(user: &str) -> impl Iterator<Item = &str> {
    user.lines().filter(|l| l.starts_with('{'))
}
