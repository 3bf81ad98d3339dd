//! Per-feature distributional separation at the occurrence (0 vs 1+2) and
//! severity (1 vs 2) boundaries.
//!
//! Each feature gets a two-sample Kolmogorov-Smirnov statistic and a
//! histogram Jensen-Shannon divergence; the composite score
//! `w_js * js + w_ks * ks` orders the features. The profile also carries the
//! salient feature set and the normalized cue weights used by free-shot
//! selection and the reasoning metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Feature, PdeCategory, Record, VariableDictionary};

/// The two ordinal decision boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Occurrence,
    Severity,
}

impl Boundary {
    pub const ALL: [Boundary; 2] = [Boundary::Occurrence, Boundary::Severity];

    /// Label groups compared at this boundary: (a, b).
    pub fn groups(self) -> (&'static [PdeCategory], &'static [PdeCategory]) {
        match self {
            Boundary::Occurrence => (
                &[PdeCategory::Low],
                &[PdeCategory::Medium, PdeCategory::High],
            ),
            Boundary::Severity => (&[PdeCategory::Medium], &[PdeCategory::High]),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Boundary::Occurrence => "0|1+2",
            Boundary::Severity => "1|2",
        }
    }

    /// Boundary whose cue weights drive distances to `level`'s class profile.
    pub fn for_level(level: PdeCategory) -> Boundary {
        match level {
            PdeCategory::Low => Boundary::Occurrence,
            _ => Boundary::Severity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceConfig {
    pub w_js: f64,
    pub w_ks: f64,
    pub bins: usize,
    pub log_base: f64,
    /// Top-k features per boundary that enter the salient set.
    pub salient_top_k: usize,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            w_js: 0.7,
            w_ks: 0.3,
            bins: 64,
            log_base: 2.0,
            salient_top_k: 5,
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_js", self.w_js), ("w_ks", self.w_ks)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {w}")));
            }
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "bins must be >= 2, got {}",
                self.bins
            )));
        }
        if !(self.log_base > 1.0) {
            return Err(Error::Config(format!(
                "log_base must exceed 1, got {}",
                self.log_base
            )));
        }
        if self.salient_top_k == 0 {
            return Err(Error::Config("salient_top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDivergence {
    pub feature: Feature,
    pub js: f64,
    pub ks: f64,
    pub score: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Set when a group had no usable values and the feature was scored 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProfile {
    pub w_js: f64,
    pub w_ks: f64,
    pub bins: usize,
    pub log_base: f64,
    pub per_boundary: BTreeMap<Boundary, Vec<FeatureDivergence>>,
    pub ordered_features: BTreeMap<Boundary, Vec<Feature>>,
    pub salient_set: BTreeSet<Feature>,
    /// Per-boundary weights over the salient set, each map summing to 1.
    pub cue_weights: BTreeMap<Boundary, BTreeMap<Feature, f64>>,
}

impl DivergenceProfile {
    pub fn weights(&self, boundary: Boundary) -> &BTreeMap<Feature, f64> {
        &self.cue_weights[&boundary]
    }

    pub fn weights_for_level(&self, level: PdeCategory) -> &BTreeMap<Feature, f64> {
        self.weights(Boundary::for_level(level))
    }

    pub fn ordered(&self, boundary: Boundary) -> &[Feature] {
        &self.ordered_features[&boundary]
    }

    pub fn divergence(&self, boundary: Boundary, feature: Feature) -> Option<&FeatureDivergence> {
        self.per_boundary[&boundary]
            .iter()
            .find(|d| d.feature == feature)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// Aligned-column score table, rows in occurrence order.
    pub fn report(&self, dictionary: &VariableDictionary) -> String {
        let names: Vec<(Feature, String)> = self
            .ordered(Boundary::Occurrence)
            .iter()
            .map(|&f| (f, format!("{} ({})", dictionary.get(f).full_name, f.key())))
            .collect();
        let w = names
            .iter()
            .map(|(_, n)| n.len())
            .max()
            .unwrap_or(0)
            .max("Feature".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$} {:>12} {:>10} {:>10} {:>10} {:>8} {:>8}",
            "Feature", "Score(0|1+2)", "Score(1|2)", "JS(0|1+2)", "KS(0|1+2)", "JS(1|2)", "KS(1|2)"
        );
        for (f, name) in names {
            let occ = self
                .divergence(Boundary::Occurrence, f)
                .expect("complete table");
            let sev = self
                .divergence(Boundary::Severity, f)
                .expect("complete table");
            let _ = writeln!(
                out,
                "{:<w$} {:>12.4} {:>10.4} {:>10.3} {:>10.3} {:>8.3} {:>8.3}",
                name, occ.score, sev.score, occ.js, occ.ks, sev.js, sev.ks
            );
        }
        out
    }
}

fn check_sample(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN in sample".into()));
    }
    Ok(())
}

/// Two-sample KS statistic: sup over x of |F_a(x) - F_b(x)|.
pub fn ks_statistic(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    check_sample(samples_a)?;
    check_sample(samples_b)?;
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    // once one sample is exhausted the gap only shrinks towards 0
    Ok(sup)
}

/// Jensen-Shannon divergence between two probability vectors, using the
/// given logarithm base. Zero-mass terms contribute nothing.
pub fn js_from_probabilities(p: &[f64], q: &[f64], log_base: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(Error::EmptySample);
    }
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter()
            .zip(m)
            .filter(|(&xi, _)| xi > 0.0)
            .map(|(&xi, &mi)| xi * (xi / mi).ln())
            .sum::<f64>()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl(p, &m) + 0.5 * kl(q, &m);
    Ok((js / log_base.ln()).max(0.0))
}

/// Normalized equal-width histograms of both samples over their pooled range.
/// `None` when every value is identical (zero-width range).
pub fn shared_histograms(
    samples_a: &[f64],
    samples_b: &[f64],
    bins: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = samples_a
        .iter()
        .chain(samples_b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if hi <= lo {
        return None;
    }
    let width = hi - lo;
    let hist = |xs: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let idx = (((x - lo) / width) * bins as f64).floor() as usize;
            h[idx.min(bins - 1)] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    Some((hist(samples_a), hist(samples_b)))
}

/// Base-2 histogram JS divergence of two samples.
pub fn js_divergence(samples_a: &[f64], samples_b: &[f64], bins: usize) -> Result<f64> {
    js_divergence_with_base(samples_a, samples_b, bins, 2.0)
}

pub fn js_divergence_with_base(
    samples_a: &[f64],
    samples_b: &[f64],
    bins: usize,
    log_base: f64,
) -> Result<f64> {
    check_sample(samples_a)?;
    check_sample(samples_b)?;
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "bins must be >= 2, got {bins}"
        )));
    }
    match shared_histograms(samples_a, samples_b, bins) {
        None => Ok(0.0),
        Some((p, q)) => js_from_probabilities(&p, &q, log_base),
    }
}

pub fn composite_score(js: f64, ks: f64, w_js: f64, w_ks: f64) -> f64 {
    w_js * js + w_ks * ks
}

fn feature_divergence(
    feature: Feature,
    group_a: &[&Record],
    group_b: &[&Record],
    config: &DivergenceConfig,
) -> FeatureDivergence {
    let values = |g: &[&Record]| -> Vec<f64> {
        g.iter().filter_map(|r| r.predictors.get(feature)).collect()
    };
    let a = values(group_a);
    let b = values(group_b);
    let (n_a, n_b) = (a.len(), b.len());
    if a.is_empty() || b.is_empty() || group_a.len() < 2 || group_b.len() < 2 {
        return FeatureDivergence {
            feature,
            js: 0.0,
            ks: 0.0,
            score: 0.0,
            n_a,
            n_b,
            insufficient: true,
        };
    }
    let js =
        js_divergence_with_base(&a, &b, config.bins, config.log_base).expect("checked non-empty");
    let ks = ks_statistic(&a, &b).expect("checked non-empty");
    FeatureDivergence {
        feature,
        js,
        ks,
        score: composite_score(js, ks, config.w_js, config.w_ks),
        n_a,
        n_b,
        insufficient: false,
    }
}

/// Descending score, ties by feature key.
fn sort_divergences(list: &mut [FeatureDivergence]) {
    list.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| x.feature.key().cmp(y.feature.key()))
    });
}

pub fn build_profile(records: &[Record], config: &DivergenceConfig) -> Result<DivergenceProfile> {
    build_profile_with(records, config, Execution::default())
}

pub fn build_profile_with(
    records: &[Record],
    config: &DivergenceConfig,
    exec: Execution,
) -> Result<DivergenceProfile> {
    config.validate()?;
    let labeled: Vec<&Record> = records.iter().filter(|r| r.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::NoLabeledRecords);
    }
    let mut groups = BTreeMap::new();
    for boundary in Boundary::ALL {
        let (ga, gb) = boundary.groups();
        let pick = |set: &[PdeCategory]| -> Vec<&Record> {
            labeled
                .iter()
                .copied()
                .filter(|r| set.contains(&r.label.unwrap()))
                .collect()
        };
        let (a, b) = (pick(ga), pick(gb));
        if a.is_empty() {
            return Err(Error::EmptyBoundaryGroup(format!(
                "{} group a",
                boundary.label()
            )));
        }
        if b.is_empty() {
            return Err(Error::EmptyBoundaryGroup(format!(
                "{} group b",
                boundary.label()
            )));
        }
        groups.insert(boundary, (a, b));
    }

    let tasks: Vec<(Boundary, Feature)> = Boundary::ALL
        .iter()
        .flat_map(|&b| Feature::ALL.iter().map(move |&f| (b, f)))
        .collect();
    let results = exec.map(&tasks, |&(boundary, feature)| {
        let (a, b) = &groups[&boundary];
        (boundary, feature_divergence(feature, a, b, config))
    });

    let mut per_boundary: BTreeMap<Boundary, Vec<FeatureDivergence>> = BTreeMap::new();
    for (boundary, fd) in results {
        per_boundary.entry(boundary).or_default().push(fd);
    }
    per_boundary.values_mut().for_each(|l| sort_divergences(l));

    let ordered_features: BTreeMap<Boundary, Vec<Feature>> = per_boundary
        .iter()
        .map(|(&b, l)| (b, l.iter().map(|d| d.feature).collect()))
        .collect();
    let salient_set: BTreeSet<Feature> = ordered_features
        .values()
        .flat_map(|l| l.iter().take(config.salient_top_k).copied())
        .collect();

    let cue_weights = per_boundary
        .iter()
        .map(|(&b, list)| {
            let scores: Vec<(Feature, f64)> = salient_set
                .iter()
                .map(|&f| {
                    (
                        f,
                        list.iter()
                            .find(|d| d.feature == f)
                            .map_or(0.0, |d| d.score),
                    )
                })
                .collect();
            let total: f64 = scores.iter().map(|(_, s)| s).sum();
            let n = scores.len() as f64;
            let weights = scores
                .into_iter()
                .map(|(f, s)| (f, if total > 0.0 { s / total } else { 1.0 / n }))
                .collect();
            (b, weights)
        })
        .collect();

    Ok(DivergenceProfile {
        w_js: config.w_js,
        w_ks: config.w_ks,
        bins: config.bins,
        log_base: config.log_base,
        per_boundary,
        ordered_features,
        salient_set,
        cue_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureVec, Huc12};

    #[test]
    fn ks_examples() {
        assert_eq!(
            ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ks_statistic(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(ks_statistic(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn js_examples() {
        assert_eq!(
            js_divergence(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 8).unwrap(),
            0.0
        );
        assert!((js_divergence(&[0.0, 0.0], &[5.0, 5.0], 4).unwrap() - 1.0).abs() < 1e-15);
        let v = js_from_probabilities(&[0.5, 0.5], &[1.0, 0.0], 2.0).unwrap();
        assert!((v - 0.31128).abs() < 1e-5, "{v}");
        // all values identical in both samples
        assert_eq!(js_divergence(&[4.0, 4.0], &[4.0], 16).unwrap(), 0.0);
        assert!(js_divergence(&[1.0], &[2.0], 1).is_err());
        assert!(js_divergence(&[], &[2.0], 4).is_err());
    }

    #[test]
    fn natural_log_base_scales_by_ln2() {
        let a = [0.0, 1.0, 2.0, 2.0];
        let b = [1.0, 3.0, 3.0, 4.0];
        let base2 = js_divergence_with_base(&a, &b, 8, 2.0).unwrap();
        let nat = js_divergence_with_base(&a, &b, 8, std::f64::consts::E).unwrap();
        assert!((nat - base2 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn composite_examples_from_published_table() {
        assert!((composite_score(0.685, 0.647, 0.7, 0.3) - 0.6736).abs() < 5e-4);
        assert!((composite_score(0.221, 0.165, 0.7, 0.3) - 0.2042).abs() < 5e-4);
        assert_eq!(composite_score(0.0, 0.0, 0.7, 0.3), 0.0);
    }

    fn rec(id: i64, label: u8, pairs: &[(Feature, f64)]) -> Record {
        Record {
            row_id: id,
            x: -95.0,
            y: 30.0,
            huc12: Huc12::new("120401020103").unwrap(),
            predictors: FeatureVec::from_pairs(pairs.iter().copied()),
            sum_pde: None,
            label: PdeCategory::from_value(label as i64),
        }
    }

    #[test]
    fn separating_feature_ranks_first_and_takes_the_weight() {
        // Poly_num separates every class; hand is the same noise everywhere.
        let mut recs = Vec::new();
        let noise = [1.0, 2.0, 3.0, 4.0];
        let mut id = 0;
        for label in 0..3u8 {
            for &n in &noise {
                recs.push(rec(
                    id,
                    label,
                    &[
                        (Feature::PolyNum, 100.0 * label as f64 + n),
                        (Feature::Hand, n),
                    ],
                ));
                id += 1;
            }
        }
        let profile = build_profile(&recs, &DivergenceConfig::default()).unwrap();
        for b in Boundary::ALL {
            let order = profile.ordered(b);
            assert_eq!(order.len(), 14);
            assert_eq!(order[0], Feature::PolyNum);
            let w = profile.weights(b);
            assert!((w[&Feature::PolyNum] - 1.0).abs() < 1e-12);
            assert_eq!(w.get(&Feature::Hand).copied().unwrap_or(0.0), 0.0);
            assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let missing = profile
            .divergence(Boundary::Occurrence, Feature::Age)
            .unwrap();
        assert!(missing.insufficient);
        assert_eq!(missing.score, 0.0);
    }

    #[test]
    fn profile_errors() {
        assert!(matches!(
            build_profile(&[], &DivergenceConfig::default()),
            Err(Error::NoLabeledRecords)
        ));
        let recs = vec![rec(1, 0, &[]), rec(2, 1, &[])];
        assert!(matches!(
            build_profile(&recs, &DivergenceConfig::default()),
            Err(Error::EmptyBoundaryGroup(_))
        ));
    }
}
