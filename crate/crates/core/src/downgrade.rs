//! Host-side downgrade post-check. The `<think>` text of a prediction is
//! re-read against three cue lexicons; when the narrative contradicts the
//! predicted label the label drops by one level. Neighbor reasoning is
//! reported as a secondary signal and never fires a rule on its own.

use serde::{Deserialize, Serialize};

use crate::model::PdeCategory;
use crate::prompt::sentences;

pub const SEVERITY_CUES: [&str; 12] = [
    "deep inundation",
    "indoor damage",
    "water entered building",
    "long-lasting flooding",
    "prolonged",
    "severe structural",
    "impassable",
    "major damage",
    "over-topping",
    "overtopping",
    "high water depth",
    "significant damage",
];

pub const LIGHT_CUES: [&str; 11] = [
    "minor",
    "shallow",
    "surface-level",
    "brief",
    "quickly receded",
    "passable",
    "no indoor",
    "limited",
    "localized",
    "light impact",
    "nuisance flooding",
];

pub const UNCERTAIN_CUES: [&str; 5] = [
    "uncertain",
    "insufficient",
    "not enough evidence",
    "ambiguous",
    "unsure",
];

/// Rule text placed in every prediction prompt.
pub const DOWNGRADE_RULE: &str = "[RULE] Only apply the following rules when your <think> clearly shows uncertainty or a contradiction between the predicted class and your own description.

[2\u{2192}1] High damage to medium. If you output class 2 but in your <think> the text mainly matches {LIGHT_CUES} and does not strongly match {SEVERITY_CUES}, or you use expressions that match {UNCERTAIN_CUES} about the evidence for high damage, then you must downgrade the answer from 2 to 1. Neighbors are only a secondary signal: when the target text_mode contains very few {SEVERITY_CUES} and in this weak-evidence setting the closest neighbors within one kilometer are mostly class 0 or 1 with reasoning dominated by {LIGHT_CUES}, you should treat this as confirming the contradiction and keep the downgrade from 2 to 1.

[1\u{2192}0] Medium damage to low. If you output class 1 but in your <think> the text mainly matches {LIGHT_CUES} and clearly does not describe a state supported by {SEVERITY_CUES}, or you say that there is not enough evidence of damage in a way that matches {UNCERTAIN_CUES} and your description is closer to no damage than to medium damage, then you must downgrade the answer from 1 to 0. Neighbors are only a secondary signal: when the target text_mode contains very few {SEVERITY_CUES} and the closest neighbors within one kilometer are class 0 with reasoning dominated by {LIGHT_CUES}, you should treat this as confirming the contradiction and keep the downgrade from 1 to 0.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CueLexicon {
    pub severity_cues: Vec<String>,
    pub light_cues: Vec<String>,
    pub uncertain_cues: Vec<String>,
}

impl Default for CueLexicon {
    fn default() -> Self {
        let owned = |list: &[&str]| list.iter().map(|s| s.to_string()).collect();
        CueLexicon {
            severity_cues: owned(&SEVERITY_CUES),
            light_cues: owned(&LIGHT_CUES),
            uncertain_cues: owned(&UNCERTAIN_CUES),
        }
    }
}

impl CueLexicon {
    /// The rule text followed by the three cue sets it refers to.
    pub fn render_rule(&self, rule: &str) -> String {
        let list = |cues: &[String]| serde_json::to_string(cues).expect("cue lists serialize");
        format!(
            "{rule}\n\nSEVERITY_CUES = {}\nLIGHT_CUES = {}\nUNCERTAIN_CUES = {}",
            list(&self.severity_cues),
            list(&self.light_cues),
            list(&self.uncertain_cues)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueHits {
    pub severity: Vec<String>,
    pub light: Vec<String>,
    pub uncertain: Vec<String>,
}

/// Replaces every occurrence of `phrases` in `text` (already lowercase) with spaces.
fn mask(text: &str, phrases: &[String]) -> String {
    let mut out = text.to_string();
    for p in phrases {
        let p = p.to_lowercase();
        if p.is_empty() {
            continue;
        }
        out = out.replace(&p, &" ".repeat(p.len()));
    }
    out
}

/// Case-insensitive substring hits, each phrase reported once, in lexicon
/// order. A light cue that is part of a severity cue ("passable" inside
/// "impassable") is not counted from that severity phrase.
pub fn scan_cues(text: &str, lexicon: &CueLexicon) -> CueHits {
    let lower = text.to_lowercase();
    let hits = |cues: &[String], hay: &dyn Fn(&str) -> String| -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cue in cues {
            let c = cue.to_lowercase();
            if !c.is_empty() && hay(&c).contains(&c) && !out.contains(cue) {
                out.push(cue.clone());
            }
        }
        out
    };
    let raw = |_: &str| lower.clone();
    let light_hay = |cue: &str| {
        let containing: Vec<String> = lexicon
            .severity_cues
            .iter()
            .filter(|s| s.to_lowercase().contains(cue))
            .cloned()
            .collect();
        mask(&lower, &containing)
    };
    CueHits {
        severity: hits(&lexicon.severity_cues, &raw),
        light: hits(&lexicon.light_cues, &light_hay),
        uncertain: hits(&lexicon.uncertain_cues, &raw),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DowngradeThresholds {
    /// Light hits needed for "mainly matches light cues".
    pub light_min: usize,
    /// Severity hits tolerated for "does not strongly match severity cues".
    pub severity_max: usize,
    /// Severity hits at or below which neighbor reasoning is consulted.
    pub weak_evidence_max: usize,
    /// Words that make an uncertain sentence concern high damage.
    pub high_damage_terms: Vec<String>,
}

impl Default for DowngradeThresholds {
    fn default() -> Self {
        DowngradeThresholds {
            light_min: 2,
            severity_max: 0,
            weak_evidence_max: 1,
            high_damage_terms: vec!["high".into(), "class 2".into(), "severe".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiredRule {
    None,
    #[serde(rename = "rule_2_to_1")]
    Rule2To1,
    #[serde(rename = "rule_1_to_0")]
    Rule1To0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSignal {
    Unused,
    Confirming,
    NonConfirming,
}

/// What the post-check needs to know about one retrieved neighbor.
#[derive(Debug, Clone, Copy)]
pub struct NeighborEvidence<'a> {
    pub label: PdeCategory,
    pub reasoning: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowngradeDecision {
    pub input_label: PdeCategory,
    pub output_label: PdeCategory,
    pub fired_rule: FiredRule,
    pub matched: CueHits,
    pub neighbor_signal: NeighborSignal,
}

/// True when some sentence carries an uncertain cue next to a high-damage
/// term. Severity-cue phrases are masked first so that "high water depth" or
/// "severe structural" never count as the high-damage term.
fn uncertain_about_high(
    think: &str,
    lexicon: &CueLexicon,
    thresholds: &DowngradeThresholds,
) -> bool {
    sentences(think).iter().any(|s| {
        let masked = mask(&s.to_lowercase(), &lexicon.severity_cues);
        let uncertain = lexicon
            .uncertain_cues
            .iter()
            .any(|c| !c.is_empty() && masked.contains(&c.to_lowercase()));
        uncertain
            && thresholds
                .high_damage_terms
                .iter()
                .any(|t| masked.contains(&t.to_lowercase()))
    })
}

fn light_dominated(reasoning: &str, lexicon: &CueLexicon) -> bool {
    let hits = scan_cues(reasoning, lexicon);
    !hits.light.is_empty() && hits.light.len() > hits.severity.len()
}

fn neighbor_signal(
    neighbors: &[NeighborEvidence<'_>],
    severity_hits: usize,
    lexicon: &CueLexicon,
    thresholds: &DowngradeThresholds,
    allowed: &[PdeCategory],
) -> NeighborSignal {
    if neighbors.is_empty() || severity_hits > thresholds.weak_evidence_max {
        return NeighborSignal::Unused;
    }
    let supporting = neighbors
        .iter()
        .filter(|n| allowed.contains(&n.label) && light_dominated(n.reasoning, lexicon))
        .count();
    if 2 * supporting > neighbors.len() {
        NeighborSignal::Confirming
    } else {
        NeighborSignal::NonConfirming
    }
}

/// Applies at most one downgrade step to `pred`.
pub fn apply_downgrade(
    pred: PdeCategory,
    think: &str,
    neighbors: &[NeighborEvidence<'_>],
    lexicon: &CueLexicon,
    thresholds: &DowngradeThresholds,
) -> DowngradeDecision {
    let matched = scan_cues(think, lexicon);
    let (sev, light, unc) = (
        matched.severity.len(),
        matched.light.len(),
        matched.uncertain.len(),
    );
    let light_branch = light >= thresholds.light_min && sev <= thresholds.severity_max;
    let (fired_rule, signal) = match pred {
        PdeCategory::Low => (FiredRule::None, NeighborSignal::Unused),
        PdeCategory::High => {
            let fires = light_branch || uncertain_about_high(think, lexicon, thresholds);
            let signal = if fires {
                neighbor_signal(
                    neighbors,
                    sev,
                    lexicon,
                    thresholds,
                    &[PdeCategory::Low, PdeCategory::Medium],
                )
            } else {
                NeighborSignal::Unused
            };
            (
                if fires {
                    FiredRule::Rule2To1
                } else {
                    FiredRule::None
                },
                signal,
            )
        }
        PdeCategory::Medium => {
            let fires = light_branch || (unc >= 1 && light > sev);
            let signal = if fires {
                neighbor_signal(neighbors, sev, lexicon, thresholds, &[PdeCategory::Low])
            } else {
                NeighborSignal::Unused
            };
            (
                if fires {
                    FiredRule::Rule1To0
                } else {
                    FiredRule::None
                },
                signal,
            )
        }
    };
    let output_label = if fired_rule == FiredRule::None {
        pred
    } else {
        pred.step_down()
    };
    DowngradeDecision {
        input_label: pred,
        output_label,
        fired_rule,
        matched,
        neighbor_signal: signal,
    }
}
