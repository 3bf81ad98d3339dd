//! Rationale metrics: label agreement, salient-feature coverage, directional
//! consistency, prototype alignment and boundary tradeoff language.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::mentions::{
    directional_mentions, mentioned_features, normalize_whitespace, AliasTable, Magnitude, Terciles,
};
use super::metrics::quantile_type7;
use crate::downgrade::{scan_cues, CueLexicon};
use crate::error::{Error, Result};
use crate::kb::{CueWeights, FreeShot, FreeShotLibrary, EPSILON};
use crate::model::{Feature, PdeCategory, Record, RiskDirection, VariableDictionary};
use crate::prompt::{Trajectory, OCCURRENCE_PHRASE, SEVERITY_PHRASE};

/// Tail of the closing phrase; matching on it tolerates rewording of the
/// lead-in.
const CLOSING_TAIL: &str = "claim PDE_category is";

fn digit_after(text: &str, phrase: &str) -> Option<char> {
    let lower = text.to_ascii_lowercase();
    let pos = lower.rfind(&phrase.to_ascii_lowercase())?;
    let rest = lower[pos + phrase.len()..].trim_start();
    if rest.starts_with("zero") {
        return Some('0');
    }
    rest.chars().next().filter(char::is_ascii_digit)
}

/// Label implied by the rationale text: the closing phrase, then a severity
/// resolution (1 or 2), then an occurrence resolution to 0. `None` when the
/// text states none of these.
pub fn label_from_rationale(think: &str) -> Option<PdeCategory> {
    let think = normalize_whitespace(think);
    if let Some(l) = digit_after(&think, CLOSING_TAIL)
        .and_then(|c| PdeCategory::from_value(c as i64 - '0' as i64))
    {
        return Some(l);
    }
    match digit_after(&think, SEVERITY_PHRASE) {
        Some('1') => return Some(PdeCategory::Medium),
        Some('2') => return Some(PdeCategory::High),
        _ => {}
    }
    match digit_after(&think, OCCURRENCE_PHRASE) {
        Some('0') => Some(PdeCategory::Low),
        _ => None,
    }
}

/// 1 when the rationale's implied label (or the answer tag, if the text
/// implies none) equals `pred`, else 0.
pub fn lra(trajectory: &Trajectory, pred: PdeCategory) -> f64 {
    let implied = label_from_rationale(&trajectory.think).unwrap_or(trajectory.answer);
    if implied == pred {
        1.0
    } else {
        0.0
    }
}

/// Share of salient features mentioned in the rationale.
pub fn sfc(think: &str, salient: &BTreeSet<Feature>, aliases: &AliasTable) -> Result<f64> {
    if salient.is_empty() {
        return Err(Error::InvalidInput("salient feature set is empty".into()));
    }
    let mentioned = mentioned_features(think, aliases);
    Ok(salient.intersection(&mentioned).count() as f64 / salient.len() as f64)
}

/// Directional mentions and how many of them agree with the record or the
/// priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdcCounts {
    pub mentions: usize,
    pub consistent: usize,
}

impl FdcCounts {
    pub fn score(self) -> f64 {
        if self.mentions == 0 {
            1.0
        } else {
            self.consistent as f64 / self.mentions as f64
        }
    }
}

pub fn fdc_counts(
    think: &str,
    record: &Record,
    dictionary: &VariableDictionary,
    terciles: &Terciles,
    aliases: &AliasTable,
) -> FdcCounts {
    let mentions = directional_mentions(think, aliases);
    let consistent = mentions
        .iter()
        .filter(|m| {
            let tercile = record
                .predictors
                .get(m.feature)
                .and_then(|v| terciles.magnitude(m.feature, v));
            tercile == Some(m.magnitude)
                || m.stated
                    .is_some_and(|d| d == dictionary.risk_direction(m.feature))
        })
        .count();
    FdcCounts {
        mentions: mentions.len(),
        consistent,
    }
}

/// Share of magnitude statements consistent with the record's tercile or the
/// feature's prior direction; 1 when the rationale makes none.
pub fn fdc(
    think: &str,
    record: &Record,
    dictionary: &VariableDictionary,
    terciles: &Terciles,
    aliases: &AliasTable,
) -> f64 {
    fdc_counts(think, record, dictionary, terciles, aliases).score()
}

/// Nearest class-`level` prototype of `library` to `record`, by
/// Σ w_j |x_j − p_j| / (σ_j + ε) with the class statistics of that library.
pub fn nearest_prototype<'a>(
    record: &Record,
    level: PdeCategory,
    library: &'a FreeShotLibrary,
    weights: &CueWeights,
) -> Option<&'a FreeShot> {
    let stats = library.class_stats.levels.get(&level)?;
    let w = weights.for_level(level);
    library
        .prototypes(level)
        .iter()
        .map(|p| {
            let d: f64 = w
                .iter()
                .filter_map(|(f, wj)| {
                    let s = stats.per_feature.get(f)?;
                    Some(
                        wj * (record.predictors.get(*f)? - p.features.get(*f)?).abs()
                            / (s.sigma + EPSILON),
                    )
                })
                .sum();
            (d, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.row_id.cmp(&b.1.row_id)))
        .map(|(_, p)| p)
}

/// Top-`k` features of a prototype by contribution, ties by feature order.
pub fn top_contributors(shot: &FreeShot, k: usize) -> Vec<Feature> {
    let mut items: Vec<(Feature, f64)> = shot
        .per_feature_contrib
        .iter()
        .map(|(f, c)| (*f, *c))
        .collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    items.into_iter().take(k).map(|(f, _)| f).collect()
}

/// Share of the nearest predicted-class prototype's top-`k` contributors that
/// the rationale mentions. `None` when the library has no such prototype.
pub fn pas(
    think: &str,
    pred: PdeCategory,
    library: &FreeShotLibrary,
    record: &Record,
    weights: &CueWeights,
    aliases: &AliasTable,
    k: usize,
) -> Option<f64> {
    let proto = nearest_prototype(record, pred, library, weights)?;
    let top = top_contributors(proto, k);
    if top.is_empty() {
        return None;
    }
    let mentioned = mentioned_features(think, aliases);
    Some(top.iter().filter(|f| mentioned.contains(f)).count() as f64 / top.len() as f64)
}

/// Library used for a record's prototype lookups: its HUC12 library when that
/// one holds prototypes of `level`, else the global one.
pub fn library_for<'a>(
    libraries: &'a BTreeMap<String, FreeShotLibrary>,
    huc12: &str,
    level: PdeCategory,
) -> Option<&'a FreeShotLibrary> {
    libraries
        .get(huc12)
        .filter(|l| !l.prototypes(level).is_empty())
        .or_else(|| libraries.get(crate::kb::GLOBAL_SCOPE))
}

/// Lexicons behind the tradeoff flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCues {
    pub lexicon: CueLexicon,
    /// Whole-word connectives, matched case-insensitively.
    pub connectives: Vec<String>,
    /// Connectives that may start a longer word ("offset", "offsets").
    pub connective_prefixes: Vec<String>,
}

impl Default for BoundaryCues {
    fn default() -> Self {
        BoundaryCues {
            lexicon: CueLexicon::default(),
            connectives: ["despite", "however", "although", "but"]
                .map(String::from)
                .to_vec(),
            connective_prefixes: vec!["offset".to_string()],
        }
    }
}

fn has_word(lower: &str, word: &str, prefix: bool) -> bool {
    let b = lower.as_bytes();
    lower.match_indices(word).any(|(at, m)| {
        let end = at + m.len();
        let before = at == 0 || !b[at - 1].is_ascii_alphanumeric();
        let after = prefix || end == b.len() || !b[end].is_ascii_alphanumeric();
        before && after
    })
}

/// Whether a rationale names a risk-increasing cue, a protective cue and a
/// tradeoff connective. Magnitude statements count as risk or protective by
/// the feature's prior direction ("high HAND" is protective).
pub fn bts_flag(
    think: &str,
    dictionary: &VariableDictionary,
    cues: &BoundaryCues,
    aliases: &AliasTable,
) -> bool {
    let text = normalize_whitespace(think);
    let hits = scan_cues(&text, &cues.lexicon);
    let mut risk = !hits.severity.is_empty();
    let mut protective = !hits.light.is_empty();
    for m in directional_mentions(&text, aliases) {
        let prior = dictionary.risk_direction(m.feature);
        match (m.magnitude, prior) {
            (Magnitude::High, RiskDirection::HigherIsRiskier)
            | (Magnitude::Low, RiskDirection::HigherIsProtective) => risk = true,
            (Magnitude::High, RiskDirection::HigherIsProtective)
            | (Magnitude::Low, RiskDirection::HigherIsRiskier) => protective = true,
            _ => {}
        }
    }
    let lower = text.to_lowercase();
    let connective = cues
        .connectives
        .iter()
        .any(|c| has_word(&lower, &c.to_lowercase(), false))
        || cues
            .connective_prefixes
            .iter()
            .any(|c| has_word(&lower, &c.to_lowercase(), true));
    risk && protective && connective
}

/// Mean tradeoff flag over samples whose margin is at or below the
/// `quantile` of all margins. Returns the score and the subset size; `None`
/// when the subset is empty. Samples without a margin never enter it.
pub fn bts(
    flags: &[bool],
    min_margins: &[Option<f64>],
    quantile: f64,
) -> Result<Option<(f64, usize)>> {
    if flags.len() != min_margins.len() {
        return Err(Error::LengthMismatch(flags.len(), min_margins.len()));
    }
    let present: Vec<f64> = min_margins.iter().flatten().copied().collect();
    let Some(cut) = quantile_type7(&present, quantile) else {
        return Ok(None);
    };
    let subset: Vec<bool> = flags
        .iter()
        .zip(min_margins)
        .filter(|(_, m)| m.is_some_and(|m| m <= cut))
        .map(|(f, _)| *f)
        .collect();
    if subset.is_empty() {
        return Ok(None);
    }
    let n = subset.len();
    Ok(Some((
        subset.iter().filter(|f| **f).count() as f64 / n as f64,
        n,
    )))
}

/// Per-sample inputs to the reasoning metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAudit {
    pub row_id: i64,
    pub pred: PdeCategory,
    pub implied_label: Option<PdeCategory>,
    pub lra: f64,
    pub mentioned: BTreeSet<Feature>,
    pub sfc: f64,
    pub fdc_mentions: usize,
    pub fdc_consistent: usize,
    pub fdc: f64,
    pub pas: Option<f64>,
    pub min_margin: Option<f64>,
    pub tradeoff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningMetrics {
    pub n: usize,
    pub lra: f64,
    pub sfc: f64,
    pub fdc: f64,
    /// Mean over samples with a predicted-class prototype.
    pub pas: Option<f64>,
    pub pas_n: usize,
    pub bts: Option<f64>,
    pub boundary_subset_size: usize,
}

impl ReasoningMetrics {
    pub fn aggregate(samples: &[SampleAudit], boundary_quantile: f64) -> Result<ReasoningMetrics> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = samples.len() as f64;
        let mean = |f: &dyn Fn(&SampleAudit) -> f64| samples.iter().map(f).sum::<f64>() / n;
        let pas: Vec<f64> = samples.iter().filter_map(|s| s.pas).collect();
        let flags: Vec<bool> = samples.iter().map(|s| s.tradeoff).collect();
        let margins: Vec<Option<f64>> = samples.iter().map(|s| s.min_margin).collect();
        let b = bts(&flags, &margins, boundary_quantile)?;
        Ok(ReasoningMetrics {
            n: samples.len(),
            lra: mean(&|s| s.lra),
            sfc: mean(&|s| s.sfc),
            fdc: mean(&|s| s.fdc),
            pas: (!pas.is_empty()).then(|| pas.iter().sum::<f64>() / pas.len() as f64),
            pas_n: pas.len(),
            bts: b.map(|(v, _)| v),
            boundary_subset_size: b.map_or(0, |(_, k)| k),
        })
    }
}
