//! Domain types shared by every stage: predictors, PDE labels, grid records,
//! the variable reference dictionary and dataset ingestion.

mod dataset;
mod dictionary;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

pub use dataset::{
    load_dataset, records_to_csv, records_to_jsonl, write_jsonl, LoadedDataset, RowWarning,
};
pub use dictionary::{RiskDirection, VariableDictionary, VariableEntry};

use crate::error::{Error, Result};

/// The 14 grid-cell predictors, in dictionary order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Age,
    Far,
    PolyNum,
    PoiNum,
    Fndn,
    PopuNum,
    Elevation,
    DisCoa,
    Impervious,
    Roughness,
    DisStream,
    Hand,
    ClaimsPast50yr,
    RainMax,
}

impl Feature {
    pub const COUNT: usize = 14;

    pub const ALL: [Feature; Feature::COUNT] = [
        Feature::Age,
        Feature::Far,
        Feature::PolyNum,
        Feature::PoiNum,
        Feature::Fndn,
        Feature::PopuNum,
        Feature::Elevation,
        Feature::DisCoa,
        Feature::Impervious,
        Feature::Roughness,
        Feature::DisStream,
        Feature::Hand,
        Feature::ClaimsPast50yr,
        Feature::RainMax,
    ];

    /// Column key as it appears in the tabular data.
    pub fn key(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Far => "FAR",
            Feature::PolyNum => "Poly_num",
            Feature::PoiNum => "poi_num",
            Feature::Fndn => "fndn",
            Feature::PopuNum => "Popu_num",
            Feature::Elevation => "elevation",
            Feature::DisCoa => "dis_coa",
            Feature::Impervious => "impervious",
            Feature::Roughness => "roughness",
            Feature::DisStream => "dis_stream",
            Feature::Hand => "hand",
            Feature::ClaimsPast50yr => "claims_past_50yr",
            Feature::RainMax => "Rain_max",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_key(key: &str) -> Option<Feature> {
        Feature::ALL.iter().copied().find(|f| f.key() == key)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::from_key(s).ok_or_else(|| Error::InvalidInput(format!("unknown feature `{s}`")))
    }
}

impl Serialize for Feature {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Feature::from_key(&s).ok_or_else(|| de::Error::custom(format!("unknown feature `{s}`")))
    }
}

/// Predictor values of one record; `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVec([Option<f64>; Feature::COUNT]);

impl FeatureVec {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.0[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: Option<f64>) {
        self.0[feature.index()] = value;
    }

    /// Present (feature, value) pairs in dictionary order.
    pub fn iter(&self) -> impl Iterator<Item = (Feature, f64)> + '_ {
        Feature::ALL
            .iter()
            .filter_map(move |&f| self.get(f).map(|v| (f, v)))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Feature, f64)>) -> Self {
        let mut v = FeatureVec::default();
        for (f, x) in pairs {
            v.set(f, Some(x));
        }
        v
    }
}

impl Serialize for FeatureVec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(Feature::COUNT))?;
        for f in Feature::ALL {
            map.serialize_entry(f.key(), &self.get(f))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct FvVisitor;
        impl<'de> Visitor<'de> for FvVisitor {
            type Value = FeatureVec;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of predictor key to number or null")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<FeatureVec, A::Error> {
                let mut out = FeatureVec::default();
                while let Some(key) = map.next_key::<String>()? {
                    let value: Option<f64> = map.next_value()?;
                    let feature = Feature::from_key(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown feature `{key}`")))?;
                    out.set(feature, value);
                }
                Ok(out)
            }
        }
        deserializer.deserialize_map(FvVisitor)
    }
}

/// Ordinal property damage extent: 0 Low, 1 Medium, 2 High.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PdeCategory {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl PdeCategory {
    pub const ALL: [PdeCategory; 3] = [PdeCategory::Low, PdeCategory::Medium, PdeCategory::High];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: i64) -> Option<PdeCategory> {
        match v {
            0 => Some(PdeCategory::Low),
            1 => Some(PdeCategory::Medium),
            2 => Some(PdeCategory::High),
            _ => None,
        }
    }

    /// One level down, saturating at Low.
    pub fn step_down(self) -> PdeCategory {
        match self {
            PdeCategory::High => PdeCategory::Medium,
            _ => PdeCategory::Low,
        }
    }
}

impl fmt::Display for PdeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for PdeCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.value())
    }
}

impl<'de> Deserialize<'de> for PdeCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        PdeCategory::from_value(v)
            .ok_or_else(|| de::Error::custom(format!("PDE category out of range: {v}")))
    }
}

/// Maps a normalized claim amount onto the three PDE levels:
/// 0 when zero, 1 on (0, 1], 2 above 1.
pub fn label_from_sum_pde(sum_pde: f64) -> Result<PdeCategory> {
    if sum_pde.is_nan() || sum_pde < 0.0 {
        return Err(Error::InvalidInput(format!(
            "negative or NaN Sum_PDE: {sum_pde}"
        )));
    }
    Ok(if sum_pde == 0.0 {
        PdeCategory::Low
    } else if sum_pde <= 1.0 {
        PdeCategory::Medium
    } else {
        PdeCategory::High
    })
}

/// A 12-digit hydrologic unit code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Huc12(String);

impl Huc12 {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.len() == 12 && code.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Huc12(code))
        } else {
            Err(Error::InvalidInput(format!("malformed huc12 `{code}`")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Huc12 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Huc12 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Huc12::new(s).map_err(de::Error::custom)
    }
}

/// One 500 m grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub row_id: i64,
    pub x: f64,
    pub y: f64,
    pub huc12: Huc12,
    pub predictors: FeatureVec,
    #[serde(rename = "Sum_PDE")]
    pub sum_pde: Option<f64>,
    #[serde(rename = "PDE_category")]
    pub label: Option<PdeCategory>,
}

impl Record {
    pub fn coords(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Fraction of labeled records at each PDE level. Unlabeled records are ignored.
pub fn class_distribution(records: &[Record]) -> Result<BTreeMap<PdeCategory, f64>> {
    let mut counts = [0usize; 3];
    for label in records.iter().filter_map(|r| r.label) {
        counts[label.value() as usize] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::NoLabeledRecords);
    }
    Ok(PdeCategory::ALL
        .iter()
        .map(|&c| (c, counts[c.value() as usize] as f64 / total as f64))
        .collect())
}
