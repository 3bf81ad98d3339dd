//! Finding features, magnitude adjectives and stated risk directions in
//! rationale text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::quantile_type7;
use crate::model::{Feature, Record, RiskDirection};

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offsets of `needle` in `hay` that sit on word boundaries. When
/// `prefix` is set the match may continue into a longer word.
fn word_matches(hay: &str, needle: &str, prefix: bool) -> Vec<usize> {
    let h = hay.as_bytes();
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let mut start = 0;
    while let Some(pos) = hay[start..].find(needle) {
        let at = start + pos;
        let end = at + needle.len();
        let before_ok = at == 0 || !is_word_byte(h[at - 1]);
        let after_ok = prefix || end >= h.len() || !is_word_byte(h[end]);
        if before_ok && after_ok {
            out.push(at);
        }
        start = at + needle.len().max(1);
        while !hay.is_char_boundary(start) && start < hay.len() {
            start += 1;
        }
        if start >= hay.len() {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alias {
    pub text: String,
    pub case_sensitive: bool,
}

/// Surface forms per feature. Matching is on word boundaries; aliases are
/// case-insensitive unless flagged (acronyms such as HAND or FAR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliasTable {
    pub aliases: BTreeMap<Feature, Vec<Alias>>,
    /// Phrases masked before matching, e.g. "other hand".
    pub exclusions: Vec<String>,
}

impl Default for AliasTable {
    fn default() -> Self {
        let ci = |s: &str| Alias {
            text: s.to_string(),
            case_sensitive: false,
        };
        let cs = |s: &str| Alias {
            text: s.to_string(),
            case_sensitive: true,
        };
        use Feature::*;
        let aliases = BTreeMap::from([
            (
                Age,
                vec![
                    ci("age"),
                    ci("building age"),
                    ci("older buildings"),
                    ci("newer buildings"),
                ],
            ),
            (
                Far,
                vec![cs("FAR"), ci("floor area ratio"), ci("floor-area ratio")],
            ),
            (
                PolyNum,
                vec![
                    ci("poly_num"),
                    ci("building count"),
                    ci("number of buildings"),
                    ci("building number"),
                    ci("building density"),
                ],
            ),
            (
                PoiNum,
                vec![
                    ci("poi_num"),
                    cs("POI"),
                    cs("POIs"),
                    ci("point of interest"),
                    ci("points of interest"),
                ],
            ),
            (Fndn, vec![ci("fndn"), ci("foundation"), ci("foundations")]),
            (
                PopuNum,
                vec![ci("popu_num"), ci("population"), ci("residents")],
            ),
            (Elevation, vec![ci("elevation"), ci("elevated terrain")]),
            (
                DisCoa,
                vec![
                    ci("dis_coa"),
                    ci("distance to coast"),
                    ci("distance to the coast"),
                    ci("from coast"),
                    ci("from the coast"),
                    ci("coastal distance"),
                ],
            ),
            (Impervious, vec![ci("impervious"), ci("imperviousness")]),
            (Roughness, vec![ci("roughness")]),
            (
                DisStream,
                vec![
                    ci("dis_stream"),
                    ci("distance to stream"),
                    ci("distance to the stream"),
                    ci("stream distance"),
                    ci("stream proximity"),
                    ci("nearest stream"),
                ],
            ),
            (
                Hand,
                vec![cs("HAND"), ci("hand"), ci("height above nearest drainage")],
            ),
            (
                ClaimsPast50yr,
                vec![
                    ci("claims_past_50yr"),
                    ci("claims"),
                    ci("claim history"),
                    ci("claims history"),
                ],
            ),
            (RainMax, vec![ci("rain_max"), ci("rainfall"), ci("rain")]),
        ]);
        AliasTable {
            aliases,
            exclusions: [
                "other hand",
                "one hand",
                "first hand",
                "at hand",
                "hand in hand",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl AliasTable {
    fn masked(&self, text: &str) -> (String, String) {
        let mut original = normalize_whitespace(text);
        let mut lower = original.to_ascii_lowercase();
        for ex in &self.exclusions {
            let ex = ex.to_ascii_lowercase();
            for at in word_matches(&lower.clone(), &ex, false) {
                let blank = " ".repeat(ex.len());
                lower.replace_range(at..at + ex.len(), &blank);
                original.replace_range(at..at + ex.len(), &blank);
            }
        }
        (original, lower)
    }

    /// Every (byte offset, feature) mention in the whitespace-normalized text.
    pub fn spans(&self, text: &str) -> (String, Vec<(usize, usize, Feature)>) {
        let (original, lower) = self.masked(text);
        let mut spans = Vec::new();
        for (f, list) in &self.aliases {
            for a in list {
                let hits = if a.case_sensitive {
                    word_matches(&original, &a.text, false)
                } else {
                    word_matches(&lower, &a.text.to_ascii_lowercase(), false)
                };
                spans.extend(hits.into_iter().map(|at| (at, at + a.text.len(), *f)));
            }
        }
        spans.sort();
        spans.dedup();
        (original, spans)
    }
}

/// Features mentioned anywhere in `text`.
pub fn mentioned_features(text: &str, aliases: &AliasTable) -> BTreeSet<Feature> {
    aliases
        .spans(text)
        .1
        .into_iter()
        .map(|(_, _, f)| f)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnitude {
    Low,
    Moderate,
    High,
}

pub const HIGH_ADJECTIVES: [&str; 10] = [
    "high",
    "higher",
    "elevated",
    "raised",
    "deep",
    "large",
    "heavy",
    "significant",
    "substantial",
    "intense",
];
pub const MODERATE_ADJECTIVES: [&str; 4] = ["moderate", "medium", "average", "intermediate"];
pub const LOW_ADJECTIVES: [&str; 7] = [
    "low", "lower", "shallow", "small", "minimal", "modest", "slight",
];

const RISK_WORDS: [&str; 15] = [
    "risk-increasing",
    "raises risk",
    "raise risk",
    "increases risk",
    "increase risk",
    "higher risk",
    "heightens",
    "exposure",
    "exposed",
    "vulnerab",
    "worsen",
    "amplif",
    "prone",
    "susceptib",
    "aggravat",
];
const PROTECTIVE_WORDS: [&str; 11] = [
    "protective",
    "protects",
    "protection",
    "reduces risk",
    "reduce risk",
    "mitigat",
    "lower risk",
    "less risk",
    "buffer",
    "safer",
    "resilien",
];

/// Tercile cut points (type-7 quantiles at 1/3 and 2/3) per feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Terciles {
    pub cuts: BTreeMap<Feature, (f64, f64)>,
}

impl Terciles {
    pub fn from_records(records: &[Record]) -> Terciles {
        let mut cuts = BTreeMap::new();
        for f in Feature::ALL {
            let values: Vec<f64> = records.iter().filter_map(|r| r.predictors.get(f)).collect();
            if let (Some(a), Some(b)) = (
                quantile_type7(&values, 1.0 / 3.0),
                quantile_type7(&values, 2.0 / 3.0),
            ) {
                cuts.insert(f, (a, b));
            }
        }
        Terciles { cuts }
    }

    pub fn magnitude(&self, feature: Feature, value: f64) -> Option<Magnitude> {
        let (a, b) = *self.cuts.get(&feature)?;
        Some(if value <= a {
            Magnitude::Low
        } else if value <= b {
            Magnitude::Moderate
        } else {
            Magnitude::High
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalMention {
    pub feature: Feature,
    pub adjective: String,
    pub magnitude: Magnitude,
    /// Direction implied by the adjective together with a stated effect
    /// ("high HAND, which is protective" → higher is protective).
    pub stated: Option<RiskDirection>,
}

/// Clause byte ranges: breaks at ". ", ", ", "; ", ": ", "! ", "? " and
/// before " and ", " but ", " while ", " whereas ", " although ", " however ".
fn clauses(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let lower = text.to_ascii_lowercase();
    let mut cuts = vec![0];
    for i in 0..b.len() {
        if matches!(b[i], b'.' | b',' | b';' | b':' | b'!' | b'?')
            && (i + 1 == b.len() || b[i + 1] == b' ')
        {
            cuts.push(i + 1);
        }
    }
    for conj in [
        " and ",
        " but ",
        " while ",
        " whereas ",
        " although ",
        " however ",
    ] {
        let mut start = 0;
        while let Some(p) = lower[start..].find(conj) {
            cuts.push(start + p);
            start += p + conj.len();
        }
    }
    cuts.push(b.len());
    cuts.sort();
    cuts.dedup();
    cuts.windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, z)| z > a)
        .collect()
}

fn stated_effect(clause: &str) -> Option<bool> {
    let l = clause.to_ascii_lowercase();
    let risk = RISK_WORDS.iter().any(|w| l.contains(w));
    let prot = PROTECTIVE_WORDS.iter().any(|w| l.contains(w));
    match (risk, prot) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

/// Feature mentions paired with the nearest magnitude adjective in the same
/// clause. A stated effect is read from that clause and the one after it.
pub fn directional_mentions(text: &str, aliases: &AliasTable) -> Vec<DirectionalMention> {
    let (normalized, spans) = aliases.spans(text);
    let lower = normalized.to_ascii_lowercase();
    let adjectives: Vec<(usize, &str, Magnitude)> = [
        (&HIGH_ADJECTIVES[..], Magnitude::High),
        (&MODERATE_ADJECTIVES[..], Magnitude::Moderate),
        (&LOW_ADJECTIVES[..], Magnitude::Low),
    ]
    .iter()
    .flat_map(|(list, m)| {
        let lower = &lower;
        list.iter().flat_map(move |a| {
            word_matches(lower, a, false)
                .into_iter()
                .map(move |at| (at, *a, *m))
        })
    })
    .collect();
    let parts = clauses(&normalized);
    let mut out = Vec::new();
    for (ci, &(start, end)) in parts.iter().enumerate() {
        let in_clause = |at: usize| at >= start && at < end;
        let mut seen = BTreeSet::new();
        for &(s, e, f) in spans.iter().filter(|(s, _, _)| in_clause(*s)) {
            if !seen.insert(f) {
                continue;
            }
            let nearest = adjectives
                .iter()
                .filter(|(at, a, _)| {
                    in_clause(*at) && !(*at >= s && *at < e) && !overlaps(*at, a.len(), &spans)
                })
                .min_by_key(|(at, _, _)| if *at >= e { at - e } else { s - at });
            let Some(&(_, adj, magnitude)) = nearest else {
                continue;
            };
            let scope_end = parts.get(ci + 1).map_or(end, |p| p.1);
            let effect = stated_effect(&normalized[start..scope_end]);
            let stated = match (magnitude, effect) {
                (Magnitude::High, Some(true)) | (Magnitude::Low, Some(false)) => {
                    Some(RiskDirection::HigherIsRiskier)
                }
                (Magnitude::High, Some(false)) | (Magnitude::Low, Some(true)) => {
                    Some(RiskDirection::HigherIsProtective)
                }
                _ => None,
            };
            out.push(DirectionalMention {
                feature: f,
                adjective: adj.to_string(),
                magnitude,
                stated,
            });
        }
    }
    out
}

/// Whether an adjective occurrence is itself part of a feature alias
/// ("elevated terrain").
fn overlaps(at: usize, len: usize, spans: &[(usize, usize, Feature)]) -> bool {
    spans.iter().any(|(s, e, _)| at < *e && at + len > *s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_respect_word_boundaries_and_case() {
        let t = AliasTable::default();
        let m = mentioned_features("Drainage and damage are average; the far side.", &t);
        assert!(m.is_empty(), "{m:?}");
        let m = mentioned_features("HAND is 14 m, FAR is 0.1 and the foundation is low", &t);
        assert_eq!(
            m,
            BTreeSet::from([Feature::Far, Feature::Fndn, Feature::Hand])
        );
        let m = mentioned_features("On the other hand, rainfall was heavy.", &t);
        assert_eq!(m, BTreeSet::from([Feature::RainMax]));
    }

    #[test]
    fn directional_pairs_and_stated_effects() {
        let t = AliasTable::default();
        let text = "For occurrence, the foundation is moderate (1.66 ft), and HAND is very high (19.75 m), which is highly protective. Elevation is also high (67.1 ft).";
        let d = directional_mentions(text, &t);
        let by: BTreeMap<Feature, &DirectionalMention> = d.iter().map(|m| (m.feature, m)).collect();
        assert_eq!(by[&Feature::Fndn].magnitude, Magnitude::Moderate);
        assert_eq!(by[&Feature::Hand].magnitude, Magnitude::High);
        assert_eq!(
            by[&Feature::Hand].stated,
            Some(RiskDirection::HigherIsProtective)
        );
        assert_eq!(by[&Feature::Elevation].magnitude, Magnitude::High);
    }

    #[test]
    fn terciles_classify() {
        let mut t = Terciles::default();
        t.cuts.insert(Feature::Hand, (1.0, 2.0));
        assert_eq!(t.magnitude(Feature::Hand, 0.5), Some(Magnitude::Low));
        assert_eq!(t.magnitude(Feature::Hand, 1.5), Some(Magnitude::Moderate));
        assert_eq!(t.magnitude(Feature::Hand, 9.0), Some(Magnitude::High));
        assert_eq!(t.magnitude(Feature::Age, 9.0), None);
    }
}
