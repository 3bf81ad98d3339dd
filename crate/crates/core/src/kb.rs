//! Knowledge base entries and free-shot libraries.
//!
//! Each labeled record with an audited reasoning trajectory becomes a
//! [`KbEntry`]. Libraries hold two prototypes per PDE level (smallest
//! divergence-weighted z-distance to the level's class profile) and the
//! entries closest to the occurrence and severity boundaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::divergence::{Boundary, DivergenceProfile};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Feature, FeatureVec, PdeCategory, Record};
use crate::prompt::{audit_kb_trajectory, Trajectory, TrajectoryAudit};

pub const EPSILON: f64 = 1e-6;
pub const GLOBAL_SCOPE: &str = "global";
pub const DEFAULT_MIN_SCOPE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub record: Record,
    pub text_mode: String,
    pub trajectory: Trajectory,
    pub audit: TrajectoryAudit,
}

impl KbEntry {
    /// Audits `trajectory` against the record's label; only clean
    /// trajectories make an entry.
    pub fn new(record: Record, text_mode: String, trajectory: Trajectory) -> Result<KbEntry> {
        let label = record
            .label
            .ok_or_else(|| Error::InvalidInput(format!("row {} is unlabeled", record.row_id)))?;
        let audit = audit_kb_trajectory(&trajectory, label);
        if !audit.is_clean() {
            let names: Vec<String> = audit.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidInput(format!(
                "row {} trajectory fails audit: {}",
                record.row_id,
                names.join(", ")
            )));
        }
        Ok(KbEntry {
            record,
            text_mode,
            trajectory,
            audit,
        })
    }

    pub fn label(&self) -> PdeCategory {
        self.record.label.expect("KB entries are labeled")
    }

    pub fn row_id(&self) -> i64 {
        self.record.row_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

/// Per-feature mean and sample standard deviation of one PDE level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub level: PdeCategory,
    pub per_feature: BTreeMap<Feature, FeatureStats>,
}

impl ClassStats {
    /// Statistics over the given predictor vectors; features with no values
    /// are left out. σ uses the n−1 denominator and is 0 for a single value.
    pub fn from_vectors<'a>(
        level: PdeCategory,
        vectors: impl IntoIterator<Item = &'a FeatureVec>,
    ) -> ClassStats {
        let mut values: BTreeMap<Feature, Vec<f64>> = BTreeMap::new();
        for v in vectors {
            for (f, x) in v.iter() {
                values.entry(f).or_default().push(x);
            }
        }
        let per_feature = values
            .into_iter()
            .map(|(f, xs)| {
                let n = xs.len();
                let mu = xs.iter().sum::<f64>() / n as f64;
                let sigma = if n > 1 {
                    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                (f, FeatureStats { mu, sigma, n })
            })
            .collect();
        ClassStats { level, per_feature }
    }
}

/// Class statistics of one scope, per level present in it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopeStats {
    pub levels: BTreeMap<PdeCategory, ClassStats>,
}

impl ScopeStats {
    pub fn from_entries(entries: &[&KbEntry]) -> ScopeStats {
        let levels = PdeCategory::ALL
            .iter()
            .filter_map(|&level| {
                let vectors: Vec<&FeatureVec> = entries
                    .iter()
                    .filter(|e| e.label() == level)
                    .map(|e| &e.record.predictors)
                    .collect();
                (!vectors.is_empty()).then(|| (level, ClassStats::from_vectors(level, vectors)))
            })
            .collect();
        ScopeStats { levels }
    }

    pub fn get(&self, level: PdeCategory) -> Result<&ClassStats> {
        self.levels
            .get(&level)
            .ok_or(Error::MissingClassStats(level.value()))
    }
}

/// Cue weights per boundary. Distances to the Low profile use the occurrence
/// weights, distances to Medium and High the severity weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueWeights {
    pub occurrence: BTreeMap<Feature, f64>,
    pub severity: BTreeMap<Feature, f64>,
}

impl CueWeights {
    pub fn from_profile(profile: &DivergenceProfile) -> CueWeights {
        CueWeights {
            occurrence: profile.weights(Boundary::Occurrence).clone(),
            severity: profile.weights(Boundary::Severity).clone(),
        }
    }

    /// Same weights for both boundaries.
    pub fn uniform(weights: BTreeMap<Feature, f64>) -> CueWeights {
        CueWeights {
            occurrence: weights.clone(),
            severity: weights,
        }
    }

    pub fn for_boundary(&self, boundary: Boundary) -> &BTreeMap<Feature, f64> {
        match boundary {
            Boundary::Occurrence => &self.occurrence,
            Boundary::Severity => &self.severity,
        }
    }

    pub fn for_level(&self, level: PdeCategory) -> &BTreeMap<Feature, f64> {
        self.for_boundary(Boundary::for_level(level))
    }
}

/// z_j = |x_j − μ_j| / (σ_j + ε) for every feature present in both.
pub fn standardized_distance(
    predictors: &FeatureVec,
    stats: &ClassStats,
    epsilon: f64,
) -> Result<BTreeMap<Feature, f64>> {
    let z: BTreeMap<Feature, f64> = stats
        .per_feature
        .iter()
        .filter_map(|(&f, s)| {
            predictors
                .get(f)
                .map(|x| (f, (x - s.mu).abs() / (s.sigma + epsilon)))
        })
        .collect();
    if z.is_empty() {
        Err(Error::NoOverlappingFeatures)
    } else {
        Ok(z)
    }
}

/// Per-feature contributions w_j·z_j over the weighted features present in `z`.
pub fn contributions(
    z: &BTreeMap<Feature, f64>,
    weights: &BTreeMap<Feature, f64>,
) -> Result<BTreeMap<Feature, f64>> {
    let c: BTreeMap<Feature, f64> = weights
        .iter()
        .filter_map(|(f, w)| z.get(f).map(|zj| (*f, w * zj)))
        .collect();
    if c.is_empty() {
        Err(Error::NoOverlappingFeatures)
    } else {
        Ok(c)
    }
}

/// d = Σ w_j z_j over features present in both maps.
pub fn weighted_zdistance(
    z: &BTreeMap<Feature, f64>,
    weights: &BTreeMap<Feature, f64>,
) -> Result<f64> {
    Ok(contributions(z, weights)?.values().sum())
}

/// Distance of a predictor vector to one level's profile, with contributions
/// and raw z values.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDistance {
    pub d: f64,
    pub contrib: BTreeMap<Feature, f64>,
    pub z: BTreeMap<Feature, f64>,
}

pub fn level_distance(
    predictors: &FeatureVec,
    stats: &ClassStats,
    weights: &BTreeMap<Feature, f64>,
) -> Result<LevelDistance> {
    let z = standardized_distance(predictors, stats, EPSILON)?;
    let contrib = contributions(&z, weights)?;
    let z = z
        .into_iter()
        .filter(|(f, _)| contrib.contains_key(f))
        .collect();
    Ok(LevelDistance {
        d: contrib.values().sum(),
        contrib,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub m_occ: f64,
    pub m_sev: f64,
    /// d to Low, Medium, High under the occurrence weights.
    pub d_occ: [f64; 3],
    /// d to Low, Medium, High under the severity weights.
    pub d_sev: [f64; 3],
}

impl Margins {
    pub fn min_margin(&self) -> f64 {
        self.m_occ.min(self.m_sev)
    }
}

/// m_occ = |d_Low − min(d_Med, d_High)|, m_sev = |d_Med − d_High|.
pub fn margins_from_distances(d_low: f64, d_med: f64, d_high: f64) -> (f64, f64) {
    ((d_low - d_med.min(d_high)).abs(), (d_med - d_high).abs())
}

/// Occurrence and severity margins of a predictor vector. The occurrence
/// margin uses the occurrence weights throughout, the severity margin the
/// severity weights.
pub fn boundary_margins(
    predictors: &FeatureVec,
    stats: &ScopeStats,
    weights: &CueWeights,
) -> Result<Margins> {
    let mut d_occ = [0.0; 3];
    let mut d_sev = [0.0; 3];
    for level in PdeCategory::ALL {
        let s = stats.get(level)?;
        d_occ[level.value() as usize] = level_distance(predictors, s, &weights.occurrence)?.d;
        d_sev[level.value() as usize] = level_distance(predictors, s, &weights.severity)?.d;
    }
    let (m_occ, _) = margins_from_distances(d_occ[0], d_occ[1], d_occ[2]);
    let (_, m_sev) = margins_from_distances(d_sev[0], d_sev[1], d_sev[2]);
    Ok(Margins {
        m_occ,
        m_sev,
        d_occ,
        d_sev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotKind {
    Prototype,
    HardExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeShotKind {
    Prototype,
    HardOccurrence,
    HardSeverity,
}

impl FreeShotKind {
    pub fn shot_kind(self) -> ShotKind {
        match self {
            FreeShotKind::Prototype => ShotKind::Prototype,
            _ => ShotKind::HardExample,
        }
    }
}

/// Side of a boundary a hard example stands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "for_0")]
    For0,
    #[serde(rename = "for_1")]
    For1,
    #[serde(rename = "for_2")]
    For2,
}

impl Side {
    pub fn key(self) -> &'static str {
        match self {
            Side::For0 => "for_0",
            Side::For1 => "for_1",
            Side::For2 => "for_2",
        }
    }

    /// Labels eligible for this side of `boundary`.
    pub fn labels(self, boundary: Boundary) -> &'static [PdeCategory] {
        match (boundary, self) {
            (Boundary::Occurrence, Side::For0) => &[PdeCategory::Low],
            (Boundary::Occurrence, _) => &[PdeCategory::Medium, PdeCategory::High],
            (Boundary::Severity, Side::For2) => &[PdeCategory::High],
            (Boundary::Severity, _) => &[PdeCategory::Medium],
        }
    }

    pub fn sides(boundary: Boundary) -> [Side; 2] {
        match boundary {
            Boundary::Occurrence => [Side::For0, Side::For1],
            Boundary::Severity => [Side::For1, Side::For2],
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeShot {
    pub kind: FreeShotKind,
    #[serde(rename = "row_pos")]
    pub row_id: i64,
    #[serde(rename = "PDE_category")]
    pub level: PdeCategory,
    pub features: FeatureVec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_zdist: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Distances quoted in `why_selected`, keyed d0/d1/d2/d12.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub distances: BTreeMap<String, f64>,
    /// Weighted contributions w_j·z_j to the shot's own-level distance.
    #[serde(rename = "per_feature")]
    pub per_feature_contrib: BTreeMap<Feature, f64>,
    pub per_feature_z: BTreeMap<Feature, f64>,
    pub why_selected: String,
    pub text_mode: String,
    pub reasoning: String,
}

fn top_contributors(
    contrib: &BTreeMap<Feature, f64>,
    z: &BTreeMap<Feature, f64>,
    k: usize,
) -> String {
    let mut items: Vec<(&Feature, &f64)> = contrib.iter().collect();
    items.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    items
        .into_iter()
        .take(k)
        .map(|(f, c)| {
            format!(
                "{}: {:.3} (z={:.3})",
                f.key(),
                c,
                z.get(f).copied().unwrap_or(f64::NAN)
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn shot(entry: &KbEntry, kind: FreeShotKind, dist: &LevelDistance, why: String) -> FreeShot {
    FreeShot {
        kind,
        row_id: entry.row_id(),
        level: entry.label(),
        features: entry.record.predictors,
        weighted_zdist: None,
        margin: None,
        distances: BTreeMap::new(),
        per_feature_contrib: dist.contrib.clone(),
        per_feature_z: dist.z.clone(),
        why_selected: why,
        text_mode: entry.text_mode.clone(),
        reasoning: entry.trajectory.raw.clone(),
    }
}

fn by_score_then_row(a: (f64, i64), b: (f64, i64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Two prototypes per level: smallest d to the level's own profile, ties by
/// row_id. Levels without entries are missing from the result.
pub fn select_prototypes(
    entries: &[&KbEntry],
    stats: &ScopeStats,
    weights: &CueWeights,
) -> BTreeMap<PdeCategory, Vec<FreeShot>> {
    let mut out = BTreeMap::new();
    for level in PdeCategory::ALL {
        let Ok(level_stats) = stats.get(level) else {
            continue;
        };
        let w = weights.for_level(level);
        let mut scored: Vec<(&KbEntry, LevelDistance)> = entries
            .iter()
            .filter(|e| e.label() == level)
            .filter_map(|e| {
                level_distance(&e.record.predictors, level_stats, w)
                    .ok()
                    .map(|d| (*e, d))
            })
            .collect();
        scored.sort_by(|a, b| by_score_then_row((a.1.d, a.0.row_id()), (b.1.d, b.0.row_id())));
        let shots: Vec<FreeShot> = scored
            .iter()
            .take(2)
            .map(|(e, dist)| {
                let why = format!(
                    "Selected as class {level} prototype by minimal weighted z-distance; d={:.4}. Top contributors: {}.",
                    dist.d,
                    top_contributors(&dist.contrib, &dist.z, 3)
                );
                let mut s = shot(e, FreeShotKind::Prototype, dist, why);
                s.weighted_zdist = Some(dist.d);
                s
            })
            .collect();
        if !shots.is_empty() {
            out.insert(level, shots);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HardExamples {
    pub occurrence_boundary: BTreeMap<Side, FreeShot>,
    pub severity_boundary: BTreeMap<Side, FreeShot>,
}

impl HardExamples {
    pub fn get(&self, boundary: Boundary, side: Side) -> Option<&FreeShot> {
        match boundary {
            Boundary::Occurrence => self.occurrence_boundary.get(&side),
            Boundary::Severity => self.severity_boundary.get(&side),
        }
    }
}

/// Per boundary and side, the entry with the smallest margin (ties by row_id).
pub fn select_hard_examples(
    entries: &[&KbEntry],
    stats: &ScopeStats,
    weights: &CueWeights,
) -> HardExamples {
    let scored: Vec<(&KbEntry, Margins)> = entries
        .iter()
        .filter_map(|e| {
            boundary_margins(&e.record.predictors, stats, weights)
                .ok()
                .map(|m| (*e, m))
        })
        .collect();
    let mut out = HardExamples::default();
    for boundary in [Boundary::Occurrence, Boundary::Severity] {
        for side in Side::sides(boundary) {
            let labels = side.labels(boundary);
            let margin_of = |m: &Margins| match boundary {
                Boundary::Occurrence => m.m_occ,
                Boundary::Severity => m.m_sev,
            };
            let best = scored
                .iter()
                .filter(|(e, _)| labels.contains(&e.label()))
                .min_by(|a, b| {
                    by_score_then_row(
                        (margin_of(&a.1), a.0.row_id()),
                        (margin_of(&b.1), b.0.row_id()),
                    )
                });
            let Some((entry, m)) = best else { continue };
            let level = entry.label();
            let Ok(own) = stats.get(level).and_then(|s| {
                level_distance(&entry.record.predictors, s, weights.for_boundary(boundary))
            }) else {
                continue;
            };
            let (kind, why, distances) = match boundary {
                Boundary::Occurrence => {
                    let d12 = m.d_occ[1].min(m.d_occ[2]);
                    (
                        FreeShotKind::HardOccurrence,
                        format!(
                            "Closest to 0/1 occurrence boundary (margin={:.4}; d0={:.4}, d12={:.4}). Top contributors: {}.",
                            m.m_occ,
                            m.d_occ[0],
                            d12,
                            top_contributors(&own.contrib, &own.z, 3)
                        ),
                        BTreeMap::from([("d0".to_string(), m.d_occ[0]), ("d12".to_string(), d12)]),
                    )
                }
                Boundary::Severity => (
                    FreeShotKind::HardSeverity,
                    format!(
                        "Closest to 1/2 severity boundary (margin={:.4}; d1={:.4}, d2={:.4}). Top contributors: {}.",
                        m.m_sev,
                        m.d_sev[1],
                        m.d_sev[2],
                        top_contributors(&own.contrib, &own.z, 3)
                    ),
                    BTreeMap::from([("d1".to_string(), m.d_sev[1]), ("d2".to_string(), m.d_sev[2])]),
                ),
            };
            let mut s = shot(entry, kind, &own, why);
            s.margin = Some(margin_of(m));
            s.distances = distances;
            match boundary {
                Boundary::Occurrence => out.occurrence_boundary.insert(side, s),
                Boundary::Severity => out.severity_boundary.insert(side, s),
            };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeShotLibrary {
    pub scope: String,
    pub n_entries: usize,
    pub class_stats: ScopeStats,
    pub prototypes: BTreeMap<PdeCategory, Vec<FreeShot>>,
    pub hard_examples: HardExamples,
    /// Slots that could not be filled in this scope, e.g. "prototypes.2" or
    /// "severity_boundary.for_1".
    pub absent: Vec<String>,
}

impl FreeShotLibrary {
    pub fn build(
        scope: impl Into<String>,
        entries: &[&KbEntry],
        weights: &CueWeights,
    ) -> FreeShotLibrary {
        let stats = ScopeStats::from_entries(entries);
        let prototypes = select_prototypes(entries, &stats, weights);
        let hard_examples = select_hard_examples(entries, &stats, weights);
        let mut absent = Vec::new();
        for level in PdeCategory::ALL {
            let n = prototypes.get(&level).map_or(0, Vec::len);
            if n < 2 {
                absent.push(format!("prototypes.{level}"));
            }
        }
        for (name, map, boundary) in [
            (
                "occurrence_boundary",
                &hard_examples.occurrence_boundary,
                Boundary::Occurrence,
            ),
            (
                "severity_boundary",
                &hard_examples.severity_boundary,
                Boundary::Severity,
            ),
        ] {
            for side in Side::sides(boundary) {
                if !map.contains_key(&side) {
                    absent.push(format!("{name}.{side}"));
                }
            }
        }
        FreeShotLibrary {
            scope: scope.into(),
            n_entries: entries.len(),
            class_stats: stats,
            prototypes,
            hard_examples,
            absent,
        }
    }

    pub fn prototypes(&self, level: PdeCategory) -> &[FreeShot] {
        self.prototypes.get(&level).map_or(&[], Vec::as_slice)
    }

    pub fn is_complete(&self) -> bool {
        self.absent.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes")
    }
}

/// One library per HUC12 with at least `min_scope` entries, plus the global
/// library over all entries. Scopes are built independently.
pub fn build_libraries(
    entries: &[KbEntry],
    weights: &CueWeights,
    min_scope: usize,
    exec: Execution,
) -> Result<BTreeMap<String, FreeShotLibrary>> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("knowledge base is empty".into()));
    }
    let mut groups: BTreeMap<String, Vec<&KbEntry>> = BTreeMap::new();
    for e in entries {
        groups
            .entry(e.record.huc12.to_string())
            .or_default()
            .push(e);
    }
    let mut scopes: Vec<(String, Vec<&KbEntry>)> = groups
        .into_iter()
        .filter(|(_, g)| g.len() >= min_scope)
        .collect();
    scopes.push((GLOBAL_SCOPE.to_string(), entries.iter().collect()));
    let libraries = exec.map(&scopes, |(scope, group)| {
        FreeShotLibrary::build(scope.clone(), group, weights)
    });
    Ok(libraries
        .into_iter()
        .map(|l| (l.scope.clone(), l))
        .collect())
}

pub fn write_kb_jsonl(entries: &[KbEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("KB entry serializes"));
        out.push('\n');
    }
    out
}

pub fn read_kb_jsonl(text: &str) -> Result<Vec<KbEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Huc12;
    use crate::prompt::CLOSING_PHRASE;

    fn entry(row_id: i64, label: PdeCategory, values: &[(Feature, f64)]) -> KbEntry {
        let record = Record {
            row_id,
            x: 0.0,
            y: 0.0,
            huc12: Huc12::new("120401040102").unwrap(),
            predictors: FeatureVec::from_pairs(values.iter().copied()),
            sum_pde: None,
            label: Some(label),
        };
        let severity = if label == PdeCategory::Low {
            String::new()
        } else {
            format!("severity resolves to {label}. ")
        };
        let think = format!(
            "occurrence resolves to {}. {severity}Despite mixed cues, the record holds. {CLOSING_PHRASE} {label}.",
            (label != PdeCategory::Low) as u8
        );
        KbEntry::new(
            record,
            format!("row {row_id}"),
            Trajectory::new(think, label),
        )
        .unwrap()
    }

    #[test]
    fn standardized_distance_examples() {
        let stats = ClassStats {
            level: PdeCategory::Low,
            per_feature: BTreeMap::from([
                (
                    Feature::Age,
                    FeatureStats {
                        mu: 3.0,
                        sigma: 1.0,
                        n: 4,
                    },
                ),
                (
                    Feature::Far,
                    FeatureStats {
                        mu: 2.0,
                        sigma: 0.0,
                        n: 4,
                    },
                ),
            ]),
        };
        let v = FeatureVec::from_pairs([(Feature::Age, 5.0), (Feature::Far, 2.0)]);
        let z = standardized_distance(&v, &stats, EPSILON).unwrap();
        assert!((z[&Feature::Age] - 2.0 / (1.0 + EPSILON)).abs() < 1e-12);
        assert_eq!(z[&Feature::Far], 0.0);
        let none = FeatureVec::from_pairs([(Feature::Hand, 1.0)]);
        assert!(matches!(
            standardized_distance(&none, &stats, EPSILON),
            Err(Error::NoOverlappingFeatures)
        ));
    }

    #[test]
    fn weighted_distance_hand_sum() {
        let z = BTreeMap::from([(Feature::Age, 1.0), (Feature::Far, 2.0)]);
        let w = BTreeMap::from([(Feature::Age, 0.6), (Feature::Far, 0.4)]);
        assert!((weighted_zdistance(&z, &w).unwrap() - 1.4).abs() < 1e-12);
        let w2 = BTreeMap::from([(Feature::Hand, 1.0)]);
        assert!(weighted_zdistance(&z, &w2).is_err());
    }

    #[test]
    fn margins_match_worked_examples() {
        let (m_occ, _) = margins_from_distances(0.4455, 0.4461, 0.9);
        assert!((m_occ - 0.0006).abs() < 1e-12);
        let (_, m_sev) = margins_from_distances(0.0, 0.8826, 0.8812);
        assert!((m_sev - 0.0014).abs() < 1e-12);
        assert_eq!(margins_from_distances(0.5, 0.5, 0.5), (0.0, 0.0));
    }

    #[test]
    fn library_has_prototypes_and_hard_examples() {
        let mut entries = Vec::new();
        for i in 0..12 {
            let label = PdeCategory::ALL[(i % 3) as usize];
            let base = label.value() as f64 * 10.0;
            entries.push(entry(
                i,
                label,
                &[
                    (Feature::Age, base + i as f64 * 0.1),
                    (Feature::Hand, base - i as f64 * 0.2),
                ],
            ));
        }
        let weights =
            CueWeights::uniform(BTreeMap::from([(Feature::Age, 0.5), (Feature::Hand, 0.5)]));
        let libs = build_libraries(&entries, &weights, 100, Execution::Sequential).unwrap();
        assert_eq!(libs.len(), 1);
        let global = &libs[GLOBAL_SCOPE];
        assert!(global.is_complete(), "absent: {:?}", global.absent);
        for level in PdeCategory::ALL {
            assert_eq!(global.prototypes(level).len(), 2);
            assert!(global.prototypes(level).iter().all(|s| s.level == level));
        }
        let json = global.to_json();
        let back: FreeShotLibrary = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, global);
    }

    #[test]
    fn single_class_scope_has_no_hard_examples() {
        let entries: Vec<KbEntry> = (0..4)
            .map(|i| entry(i, PdeCategory::Medium, &[(Feature::Age, i as f64)]))
            .collect();
        let refs: Vec<&KbEntry> = entries.iter().collect();
        let lib = FreeShotLibrary::build(
            "x",
            &refs,
            &CueWeights::uniform(BTreeMap::from([(Feature::Age, 1.0)])),
        );
        assert!(lib.hard_examples.occurrence_boundary.is_empty());
        assert!(lib.hard_examples.severity_boundary.is_empty());
        assert_eq!(lib.prototypes(PdeCategory::Medium).len(), 2);
        assert!(lib.absent.contains(&"prototypes.0".to_string()));
    }
}
