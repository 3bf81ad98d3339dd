//! Rule-based stand-in for an LLM. It answers the three prompt families with
//! contract-conforming output derived from the prompt inputs alone, so a
//! full pipeline run can be scripted without a model.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::eval::{Magnitude, Terciles};
use crate::model::{Feature, PdeCategory, RiskDirection, VariableDictionary};
use crate::prompt::{input_lines, PromptBundle, PromptKind, Trajectory, CLOSING_PHRASE};

/// Sentence added to weakly supported predictions. It carries two light cues
/// and no severity cue, so the host post-check lowers such labels.
const WEAK_SENTENCE: &str =
    "Support for this level is limited and the profile reads as minor exposure.";

#[derive(Debug, Clone)]
pub struct SyntheticResponder {
    dictionary: VariableDictionary,
    terciles: Terciles,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Effect {
    Risk,
    Protective,
}

fn display_name(f: Feature) -> &'static str {
    match f {
        Feature::Age => "building age",
        Feature::Far => "FAR",
        Feature::PolyNum => "building count",
        Feature::PoiNum => "POI count",
        Feature::Fndn => "foundation height",
        Feature::PopuNum => "population",
        Feature::Elevation => "elevation",
        Feature::DisCoa => "distance to coast",
        Feature::Impervious => "imperviousness",
        Feature::Roughness => "roughness",
        Feature::DisStream => "distance to stream",
        Feature::Hand => "HAND",
        Feature::ClaimsPast50yr => "prior claims",
        Feature::RainMax => "rainfall",
    }
}

fn compact(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// "key is value unit" clauses of a text mode, in order.
fn parse_text_mode(text: &str) -> Vec<(Feature, f64)> {
    text.trim_end_matches('.')
        .split("; ")
        .filter_map(|clause| {
            let (key, rest) = clause.split_once(" is ")?;
            let f = Feature::from_key(key.trim())?;
            let v: f64 = rest.split_whitespace().next()?.parse().ok()?;
            Some((f, v))
        })
        .collect()
}

impl SyntheticResponder {
    /// `terciles` should come from the training records; magnitude words in
    /// the generated rationales follow them.
    pub fn new(dictionary: VariableDictionary, terciles: Terciles) -> SyntheticResponder {
        SyntheticResponder {
            dictionary,
            terciles,
        }
    }

    pub fn respond(&self, bundle: &PromptBundle) -> String {
        let lines: Vec<String> = input_lines(&bundle.user)
            .filter_map(|l| serde_json::from_str::<Value>(l).ok())
            .filter_map(|v| match bundle.kind {
                PromptKind::TextMode => self.text_mode(&v, &bundle.user),
                PromptKind::KbReasoning => self.kb(&v),
                PromptKind::Prediction => self.prediction(&v),
            })
            .map(|v| v.to_string())
            .collect();
        lines.join("\n")
    }

    fn text_mode(&self, item: &Value, user: &str) -> Option<Value> {
        let row_id = item["row_id"].as_i64()?;
        let order: Vec<Feature> = user
            .split_once("Follow order: [")
            .and_then(|(_, rest)| rest.split_once(']'))
            .map(|(list, _)| list.split(", ").filter_map(Feature::from_key).collect())
            .unwrap_or_else(|| Feature::ALL.to_vec());
        let clauses: Vec<String> = order
            .iter()
            .filter_map(|&f| {
                let v = item[f.key()].as_f64().filter(|v| *v != 0.0)?;
                let unit = &self.dictionary.get(f).unit;
                Some(if unit.is_empty() {
                    format!("{} is {}", f.key(), compact(v))
                } else {
                    format!("{} is {} {}", f.key(), compact(v), unit)
                })
            })
            .collect();
        let text = if clauses.is_empty() {
            "All listed values are missing or zero.".to_string()
        } else {
            clauses.join("; ") + "."
        };
        Some(json!({"row_id": row_id, "text_mode": text}))
    }

    fn effect(&self, f: Feature, m: Magnitude) -> Option<Effect> {
        let dir = self.dictionary.risk_direction(f);
        match (m, dir) {
            (_, RiskDirection::Neutral) | (Magnitude::Moderate, _) => None,
            (Magnitude::High, RiskDirection::HigherIsRiskier)
            | (Magnitude::Low, RiskDirection::HigherIsProtective) => Some(Effect::Risk),
            _ => Some(Effect::Protective),
        }
    }

    fn describe(&self, values: &[(Feature, f64)]) -> Vec<(String, Option<Effect>)> {
        values
            .iter()
            .filter_map(|&(f, v)| {
                let m = self.terciles.magnitude(f, v)?;
                let adj = match m {
                    Magnitude::High => "high",
                    Magnitude::Moderate => "moderate",
                    Magnitude::Low => "low",
                };
                let effect = self.effect(f, m);
                let tail = match effect {
                    Some(Effect::Risk) => ", which raises risk",
                    Some(Effect::Protective) => ", which is protective",
                    _ => "",
                };
                Some((
                    format!("{} is {adj} ({}){tail}", display_name(f), compact(v)),
                    effect,
                ))
            })
            .collect()
    }

    /// The factor sentences shared by reasoning and prediction rationales.
    fn factor_sentences(&self, values: &[(Feature, f64)]) -> (String, String, String) {
        let described = self.describe(values);
        let occ: Vec<&str> = described.iter().take(3).map(|(s, _)| s.as_str()).collect();
        let sev: Vec<&str> = described
            .iter()
            .skip(3)
            .take(3)
            .map(|(s, _)| s.as_str())
            .collect();
        let occurrence = if occ.is_empty() {
            "For occurrence, the text mode gives no usable values.".to_string()
        } else {
            format!("For occurrence, {}.", occ.join(", and "))
        };
        let severity = if sev.is_empty() {
            "the remaining values add little".to_string()
        } else {
            sev.join(", and ")
        };
        let short = |e: Effect| -> Vec<String> {
            values
                .iter()
                .filter_map(|&(f, v)| {
                    let m = self.terciles.magnitude(f, v)?;
                    (self.effect(f, m) == Some(e)).then(|| {
                        let adj = if m == Magnitude::High { "high" } else { "low" };
                        format!("{adj} {}", display_name(f))
                    })
                })
                .take(2)
                .collect()
        };
        let (risk, protective) = (short(Effect::Risk), short(Effect::Protective));
        let despite = match (risk.is_empty(), protective.is_empty()) {
            (false, false) => format!(
                "Despite protective cues such as {}, exposure remains through {}.",
                protective.join(" and "),
                risk.join(" and ")
            ),
            (false, true) => format!(
                "Despite the absence of clear protective cues, exposure rests mainly on {}.",
                risk.join(" and ")
            ),
            (true, false) => format!(
                "Despite protective cues such as {}, some residual exposure cannot be excluded.",
                protective.join(" and ")
            ),
            (true, true) => "Despite mixed signals, no single factor dominates.".to_string(),
        };
        (occurrence, severity, despite)
    }

    fn kb(&self, item: &Value) -> Option<Value> {
        let row_id = item["row_id"].as_i64()?;
        let gt = PdeCategory::from_value(item["ground_truth"].as_i64()?)?;
        let values = parse_text_mode(item["text_mode"].as_str()?);
        let (occurrence, severity, despite) = self.factor_sentences(&values);
        let resolution = match gt {
            PdeCategory::Low => "Overall occurrence resolves to 0. If water did reach the cell, severity would stay at the lower level.".to_string(),
            _ => format!("Overall occurrence resolves to 1. For severity, {severity}, so severity resolves to {gt}."),
        };
        let think = format!("{occurrence} {despite} {resolution} {CLOSING_PHRASE} {gt}.");
        Some(json!({"row_id": row_id, "r1": Trajectory::render(&think, gt)}))
    }

    fn prediction(&self, item: &Value) -> Option<Value> {
        let row_id = item["row_id"].as_i64()?;
        let values = parse_text_mode(item["target"]["text_mode"].as_str()?);
        let neighbors = item["neighbors"].as_array().cloned().unwrap_or_default();
        let shots = item["free_shots"].as_array().cloned().unwrap_or_default();

        let (pred, share, basis) = if !neighbors.is_empty() {
            let mut votes = [0.0f64; 3];
            for n in &neighbors {
                let (Some(l), Some(d)) = (n["n_label"].as_u64(), n["distance_km"].as_f64()) else {
                    continue;
                };
                if l < 3 {
                    votes[l as usize] += 1.0 / (d + 0.1);
                }
            }
            let total: f64 = votes.iter().sum();
            let best = (0..3).fold(0, |b, i| if votes[i] > votes[b] { i } else { b });
            let nearest = &neighbors[0];
            let basis = format!(
                "There are {} neighbors within 1 km; the nearest is class {} at {} km, and the distance-weighted vote favors class {best}.",
                neighbors.len(),
                nearest["n_label"],
                compact(nearest["distance_km"].as_f64().unwrap_or(0.0))
            );
            (
                best as u8,
                if total > 0.0 {
                    votes[best] / total
                } else {
                    0.0
                },
                basis,
            )
        } else if let Some(level) = self.nearest_shot(&values, &shots) {
            (
                level,
                0.0,
                format!("No neighbors are available within 1 km, so the decision leans on the free-shots; the closest prototype is class {level}."),
            )
        } else {
            let score: i32 = self
                .describe(&values)
                .iter()
                .map(|(_, e)| match e {
                    Some(Effect::Risk) => 1,
                    Some(Effect::Protective) => -1,
                    _ => 0,
                })
                .sum();
            let level = match score {
                i32::MIN..=0 => 0,
                1..=3 => 1,
                _ => 2,
            };
            (
                level,
                0.0,
                "No neighbors are available within 1 km and no free-shots are given, so the decision rests on the target text mode.".to_string(),
            )
        };
        let pred = PdeCategory::from_value(pred as i64)?;
        let weak = match pred {
            PdeCategory::High => share < 0.67,
            PdeCategory::Medium => neighbors.is_empty() || share < 0.5,
            PdeCategory::Low => false,
        };
        let (occurrence, severity, despite) = self.factor_sentences(&values);
        let mut think = format!("{basis} {occurrence} {despite}");
        match pred {
            PdeCategory::Low => think.push_str(" Overall occurrence resolves to 0."),
            _ => think.push_str(&format!(
                " Overall occurrence resolves to 1. For severity, {severity}, so severity resolves to {pred}."
            )),
        }
        if weak {
            think.push(' ');
            think.push_str(WEAK_SENTENCE);
        }
        think.push_str(&format!(" {CLOSING_PHRASE} {pred}."));
        Some(
            json!({"row_id": row_id, "pred_label": pred.value(), "r1": Trajectory::render(&think, pred)}),
        )
    }

    /// Level of the prototype closest to the target, with each feature
    /// scaled by its tercile spread.
    fn nearest_shot(&self, values: &[(Feature, f64)], shots: &[Value]) -> Option<u8> {
        let target: BTreeMap<Feature, f64> = values.iter().copied().collect();
        shots
            .iter()
            .filter(|s| s["type"] == "prototype")
            .filter_map(|s| {
                let level = s["PDE_category"].as_u64()? as u8;
                let proto = parse_text_mode(s["text_mode"].as_str()?);
                let mut d = 0.0;
                let mut n = 0;
                for (f, p) in proto {
                    let Some(x) = target.get(&f) else { continue };
                    let spread = self
                        .terciles
                        .cuts
                        .get(&f)
                        .map(|(a, b)| b - a)
                        .filter(|s| *s > 0.0)
                        .unwrap_or(1.0);
                    d += (x - p).abs() / spread;
                    n += 1;
                }
                (n > 0).then_some((d / n as f64, level))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, l)| l)
    }
}
