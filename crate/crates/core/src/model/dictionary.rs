use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Feature;
use crate::error::{Error, Result};

/// How a larger value of a predictor relates to flood damage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskDirection {
    HigherIsRiskier,
    HigherIsProtective,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub key: String,
    pub full_name: String,
    pub unit: String,
    pub description: String,
    pub risk_direction: RiskDirection,
}

/// Variable reference dictionary: one entry per predictor plus the label field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDictionary {
    entries: Vec<VariableEntry>,
    label: VariableEntry,
}

fn entry(
    f: Feature,
    full_name: &str,
    unit: &str,
    description: &str,
    dir: RiskDirection,
) -> VariableEntry {
    VariableEntry {
        key: f.key().to_string(),
        full_name: full_name.to_string(),
        unit: unit.to_string(),
        description: description.to_string(),
        risk_direction: dir,
    }
}

impl Default for VariableDictionary {
    fn default() -> Self {
        use RiskDirection::*;
        let entries = vec![
            entry(
                Feature::Age,
                "Building Age",
                "years",
                "median age of buildings in the cell",
                HigherIsRiskier,
            ),
            entry(
                Feature::Far,
                "Floor Area Ratio",
                "",
                "total building floor area divided by cell land area",
                HigherIsRiskier,
            ),
            entry(
                Feature::PolyNum,
                "Building Number",
                "buildings",
                "count of building footprints in the cell",
                HigherIsRiskier,
            ),
            entry(
                Feature::PoiNum,
                "POI Number",
                "points",
                "count of points of interest in the cell",
                HigherIsRiskier,
            ),
            entry(
                Feature::Fndn,
                "Foundation Height",
                "ft",
                "mean first-floor foundation height",
                HigherIsProtective,
            ),
            entry(
                Feature::PopuNum,
                "Population Number",
                "people",
                "residential population in the cell",
                HigherIsRiskier,
            ),
            entry(
                Feature::Elevation,
                "Elevation",
                "ft",
                "mean ground elevation",
                HigherIsProtective,
            ),
            entry(
                Feature::DisCoa,
                "Distance to Coast",
                "km",
                "distance from the cell to the coastline",
                HigherIsProtective,
            ),
            entry(
                Feature::Impervious,
                "Imperviousness",
                "%",
                "share of impervious land cover",
                HigherIsRiskier,
            ),
            entry(
                Feature::Roughness,
                "Terrain Roughness",
                "",
                "terrain roughness index from land cover",
                HigherIsProtective,
            ),
            entry(
                Feature::DisStream,
                "Distance to Stream",
                "km",
                "distance to the nearest stream channel",
                HigherIsProtective,
            ),
            entry(
                Feature::Hand,
                "Height above Nearest Drainage (HAND)",
                "m",
                "vertical height above the nearest drainage",
                HigherIsProtective,
            ),
            entry(
                Feature::ClaimsPast50yr,
                "Flood Claims in the Past 50 Years",
                "claims",
                "historical flood insurance claims in the cell",
                HigherIsRiskier,
            ),
            entry(
                Feature::RainMax,
                "Maximum Rainfall",
                "inches",
                "maximum event rainfall at the nearest gauge",
                HigherIsRiskier,
            ),
        ];
        let label = VariableEntry {
            key: "PDE_category".to_string(),
            full_name: "Property Damage Extent category".to_string(),
            unit: String::new(),
            description: "ordinal damage level: 0 low, 1 medium, 2 high".to_string(),
            risk_direction: RiskDirection::Neutral,
        };
        VariableDictionary { entries, label }
    }
}

impl VariableDictionary {
    /// Default dictionary with risk-direction priors replaced by `overrides`.
    pub fn with_overrides(overrides: &BTreeMap<String, RiskDirection>) -> Result<Self> {
        let mut dict = VariableDictionary::default();
        for (key, dir) in overrides {
            let feature = Feature::from_key(key)
                .ok_or_else(|| Error::Config(format!("risk prior for unknown feature `{key}`")))?;
            dict.entries[feature.index()].risk_direction = *dir;
        }
        Ok(dict)
    }

    pub fn get(&self, feature: Feature) -> &VariableEntry {
        &self.entries[feature.index()]
    }

    pub fn lookup(&self, key: &str) -> Option<&VariableEntry> {
        Feature::from_key(key).map(|f| self.get(f))
    }

    pub fn risk_direction(&self, feature: Feature) -> RiskDirection {
        self.get(feature).risk_direction
    }

    pub fn entries(&self) -> &[VariableEntry] {
        &self.entries
    }

    pub fn label_entry(&self) -> &VariableEntry {
        &self.label
    }

    /// Compact `key=full name (unit)` legend used in text-mode prompts.
    pub fn legend(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                if e.unit.is_empty() {
                    format!("{}={}", e.key, e.full_name)
                } else {
                    format!("{}={} ({})", e.key, e.full_name, e.unit)
                }
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_predictor_once() {
        let dict = VariableDictionary::default();
        let keys: Vec<&str> = dict.entries().iter().map(|e| e.key.as_str()).collect();
        let expected = [
            "age",
            "FAR",
            "Poly_num",
            "poi_num",
            "fndn",
            "Popu_num",
            "elevation",
            "dis_coa",
            "impervious",
            "roughness",
            "dis_stream",
            "hand",
            "claims_past_50yr",
            "Rain_max",
        ];
        assert_eq!(keys, expected);
        for k in expected {
            assert!(dict.lookup(k).is_some());
        }
        assert_eq!(dict.label_entry().key, "PDE_category");
    }

    #[test]
    fn priors_follow_defaults_and_overrides() {
        let dict = VariableDictionary::default();
        assert_eq!(
            dict.risk_direction(Feature::Hand),
            RiskDirection::HigherIsProtective
        );
        assert_eq!(
            dict.risk_direction(Feature::RainMax),
            RiskDirection::HigherIsRiskier
        );
        assert_eq!(
            dict.risk_direction(Feature::Age),
            RiskDirection::HigherIsRiskier
        );

        let mut ov = BTreeMap::new();
        ov.insert("age".to_string(), RiskDirection::Neutral);
        let dict = VariableDictionary::with_overrides(&ov).unwrap();
        assert_eq!(dict.risk_direction(Feature::Age), RiskDirection::Neutral);

        ov.insert("bogus".to_string(), RiskDirection::Neutral);
        assert!(VariableDictionary::with_overrides(&ov).is_err());
    }

    #[test]
    fn legend_mentions_units() {
        let legend = VariableDictionary::default().legend();
        assert!(legend.contains("hand=Height above Nearest Drainage (HAND) (m)"));
        assert!(legend.contains("Rain_max=Maximum Rainfall (inches)"));
    }
}
