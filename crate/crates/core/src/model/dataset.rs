//! Ingestion of grid records from delimiter-separated tables or JSON Lines.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    label_from_sum_pde, Feature, FeatureVec, Huc12, PdeCategory, Record, VariableDictionary,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowWarning {
    /// 1-based line number in the source file.
    pub line: usize,
    pub row_id: Option<i64>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub records: Vec<Record>,
    pub warnings: Vec<RowWarning>,
}

const ROW_ID_KEYS: [&str; 2] = ["row_id", "index"];
const SUM_KEYS: [&str; 2] = ["Sum_PDE", "sum_pde"];
const LABEL_KEYS: [&str; 2] = ["PDE_category", "label"];
const MISSING_TOKENS: [&str; 8] = ["", "NULL", "null", "NaN", "nan", "NA", "None", "none"];

enum Format {
    Delimited(u8),
    JsonLines,
}

fn detect_format(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("csv") => Ok(Format::Delimited(b',')),
        Some("tsv") => Ok(Format::Delimited(b'\t')),
        Some("jsonl") | Some("ndjson") => Ok(Format::JsonLines),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

/// Reads a dataset, skipping (and reporting) rows whose coordinates or HUC12
/// code cannot be parsed. Missing predictor values stay missing.
pub fn load_dataset(path: &Path, dictionary: &VariableDictionary) -> Result<LoadedDataset> {
    let format = detect_format(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows = match format {
        Format::Delimited(delim) => delimited_rows(&text, delim)?,
        Format::JsonLines => json_rows(&text)?,
    };

    let mut records = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for (line, row) in rows {
        match parse_row(&row, dictionary) {
            Ok((record, row_warnings)) => {
                warnings.extend(row_warnings.into_iter().map(|message| RowWarning {
                    line,
                    row_id: Some(record.row_id),
                    message,
                }));
                records.push(record);
            }
            Err((row_id, message)) => warnings.push(RowWarning {
                line,
                row_id,
                message,
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LoadedDataset { records, warnings })
}

type RawRow = HashMap<String, Value>;

fn check_header<'a>(keys: impl Iterator<Item = &'a str> + Clone) -> Result<()> {
    if !keys.clone().any(|k| ROW_ID_KEYS.contains(&k)) {
        return Err(Error::MissingColumn("row_id".into()));
    }
    for required in ["x", "y", "huc12"] {
        if !keys.clone().any(|k| k == required) {
            return Err(Error::MissingColumn(required.into()));
        }
    }
    Ok(())
}

fn delimited_rows(text: &str, delim: u8) -> Result<Vec<(usize, RawRow)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    check_header(headers.iter().map(String::as_str))?;
    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: RawRow = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| (h.clone(), Value::String(v.trim().to_string())))
            .collect();
        rows.push((line, row));
    }
    Ok(rows)
}

fn json_rows(text: &str) -> Result<Vec<(usize, RawRow)>> {
    let mut rows = Vec::new();
    let mut header_checked = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, Value> = match serde_json::from_str(line) {
            Ok(o) => o,
            Err(e) => {
                // keep the line so it is reported as a skipped row
                let mut row = RawRow::new();
                row.insert("__parse_error".into(), Value::String(e.to_string()));
                rows.push((i + 1, row));
                continue;
            }
        };
        if !header_checked {
            check_header(obj.keys().map(String::as_str))?;
            header_checked = true;
        }
        rows.push((i + 1, obj.into_iter().collect()));
    }
    Ok(rows)
}

fn raw_number(v: &Value) -> std::result::Result<Option<f64>, String> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => n
            .as_f64()
            .map(Some)
            .ok_or_else(|| format!("bad number {n}")),
        Value::String(s) => {
            let s = s.trim();
            if MISSING_TOKENS.contains(&s) {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| format!("unparseable number `{s}`"))
            }
        }
        other => Err(format!("unexpected value {other}")),
    }
}

fn first<'a>(row: &'a RawRow, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| row.get(*k))
}

fn parse_row(
    row: &RawRow,
    dictionary: &VariableDictionary,
) -> std::result::Result<(Record, Vec<String>), (Option<i64>, String)> {
    if let Some(Value::String(e)) = row.get("__parse_error") {
        return Err((None, format!("malformed json line: {e}")));
    }
    let row_id = match first(row, &ROW_ID_KEYS).map(raw_number) {
        Some(Ok(Some(v))) if v.fract() == 0.0 => v as i64,
        _ => return Err((None, "malformed row_id".into())),
    };
    let coord = |key: &str, bound: f64| -> std::result::Result<f64, (Option<i64>, String)> {
        match row.get(key).map(raw_number) {
            Some(Ok(Some(v))) if v.is_finite() && v.abs() <= bound => Ok(v),
            _ => Err((Some(row_id), format!("malformed coordinate {key}"))),
        }
    };
    let x = coord("x", 180.0)?;
    let y = coord("y", 90.0)?;
    let huc_text = match row.get("huc12") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(u) => u.to_string(),
            None => n.to_string(),
        },
        _ => String::new(),
    };
    let huc12 = Huc12::new(huc_text).map_err(|_| (Some(row_id), "malformed huc12".to_string()))?;

    let mut warnings = Vec::new();
    let mut predictors = FeatureVec::default();
    for e in dictionary.entries() {
        let feature = Feature::from_key(&e.key).expect("dictionary keys are predictors");
        match row.get(&e.key).map(raw_number) {
            None => {}
            Some(Ok(v)) => predictors.set(feature, v.filter(|x| x.is_finite())),
            Some(Err(msg)) => warnings.push(format!("{}: {msg}; treated as missing", e.key)),
        }
    }

    let mut sum_pde = match first(row, &SUM_KEYS).map(raw_number) {
        None | Some(Ok(None)) => None,
        Some(Ok(Some(v))) if v >= 0.0 => Some(v),
        Some(Ok(Some(v))) => {
            warnings.push(format!("negative Sum_PDE {v} dropped"));
            None
        }
        Some(Err(msg)) => {
            warnings.push(format!("Sum_PDE: {msg}"));
            None
        }
    };
    if sum_pde.is_some_and(|v| !v.is_finite()) {
        sum_pde = None;
    }
    let mut label = match first(row, &LABEL_KEYS).map(raw_number) {
        None | Some(Ok(None)) => None,
        Some(Ok(Some(v))) if v.fract() == 0.0 => match PdeCategory::from_value(v as i64) {
            Some(c) => Some(c),
            None => {
                warnings.push(format!("PDE_category {v} out of range; dropped"));
                None
            }
        },
        Some(_) => {
            warnings.push("malformed PDE_category; dropped".into());
            None
        }
    };
    if let Some(sum) = sum_pde {
        let derived = label_from_sum_pde(sum).expect("sum checked nonnegative");
        match label {
            Some(l) if l != derived => {
                warnings.push(format!(
                    "label/Sum_PDE inconsistency: PDE_category {l} but Sum_PDE {sum} implies {derived}; using {derived}"
                ));
                label = Some(derived);
            }
            None => label = Some(derived),
            _ => {}
        }
    }

    Ok((
        Record {
            row_id,
            x,
            y,
            huc12,
            predictors,
            sum_pde,
            label,
        },
        warnings,
    ))
}

#[derive(Serialize)]
struct CanonicalRow<'a> {
    row_id: i64,
    x: f64,
    y: f64,
    huc12: &'a str,
    #[serde(flatten)]
    predictors: &'a FeatureVec,
    #[serde(rename = "Sum_PDE")]
    sum_pde: Option<f64>,
    #[serde(rename = "PDE_category")]
    label: Option<PdeCategory>,
}

/// Canonical JSON Lines rendering: one record per line, fixed key order.
pub fn records_to_jsonl(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let row = CanonicalRow {
            row_id: r.row_id,
            x: r.x,
            y: r.y,
            huc12: r.huc12.as_str(),
            predictors: &r.predictors,
            sum_pde: r.sum_pde,
            label: r.label,
        };
        out.push_str(&serde_json::to_string(&row).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(records: &[Record], path: &Path) -> Result<()> {
    fs::write(path, records_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// Comma-separated rendering with a fixed header; missing values are empty.
pub fn records_to_csv(records: &[Record]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row_id", "x", "y", "huc12"];
    header.extend(Feature::ALL.iter().map(|f| f.key()));
    header.extend(["Sum_PDE", "PDE_category"]);
    w.write_record(&header).expect("in-memory csv");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in records {
        let mut row = vec![
            r.row_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.huc12.as_str().to_string(),
        ];
        row.extend(Feature::ALL.iter().map(|f| opt(r.predictors.get(*f))));
        row.push(opt(r.sum_pde));
        row.push(r.label.map_or_else(String::new, |l| l.to_string()));
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const SAMPLE_ROW: &str = r#"{"index": 429, "zip": "77447", "x": -95.8234621479532, "y": 30.0165830483419, "age": 27.0, "FAR": 0.020766014868859997, "poi_num": 0.0, "Popu_num": 21.871354761343653, "claims_past_50yr": 18, "dis_stream": 24.14419964597232, "elevation": 67.1029411764706, "dis_coa": 73.44553213879476, "hand": 19.75105811403509, "impervious": 10.078431, "roughness": 0.186187946428571, "Poly_num": 39.0, "Rain_max": 13.24, "fndn": 1.661290322580647, "Cluster": "0", "Sum_PDE": 0.045665492259151, "huc12": "120401020103", "PDE_category": 1, "imp_bin": "all", "strata_key": "PDE_category"}"#;

    fn write_tmp(suffix: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sample_row_loads_as_medium() {
        let f = write_tmp(".jsonl", SAMPLE_ROW);
        let ds = load_dataset(f.path(), &VariableDictionary::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        let r = &ds.records[0];
        assert_eq!(r.row_id, 429);
        assert_eq!(r.label, Some(PdeCategory::Medium));
        assert_eq!(r.huc12.as_str(), "120401020103");
        assert_eq!(r.predictors.get(Feature::RainMax), Some(13.24));
        assert_eq!(r.predictors.get(Feature::ClaimsPast50yr), Some(18.0));
        assert!(ds.warnings.is_empty(), "{:?}", ds.warnings);
    }

    #[test]
    fn malformed_huc12_is_skipped_with_warning() {
        let body = "row_id,x,y,huc12,hand\n1,-95.5,30.0,12AB,3.0\n2,-95.5,30.0,120401020103,\n";
        let f = write_tmp(".csv", body);
        let ds = load_dataset(f.path(), &VariableDictionary::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].row_id, 2);
        assert_eq!(ds.records[0].predictors.get(Feature::Hand), None);
        assert_eq!(ds.warnings.len(), 1);
        assert_eq!(ds.warnings[0].message, "malformed huc12");
    }

    #[test]
    fn empty_file_and_missing_columns() {
        let f = write_tmp(".csv", "");
        assert!(matches!(
            load_dataset(f.path(), &VariableDictionary::default()),
            Err(Error::EmptyDataset)
        ));
        let f = write_tmp(".csv", "row_id,x,y\n1,0,0\n");
        assert!(matches!(
            load_dataset(f.path(), &VariableDictionary::default()),
            Err(Error::MissingColumn(c)) if c == "huc12"
        ));
        let f = write_tmp(".txt", "x");
        assert!(matches!(
            load_dataset(f.path(), &VariableDictionary::default()),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn inconsistent_label_warns_and_follows_sum() {
        let body = "index\tx\ty\thuc12\tSum_PDE\tPDE_category\n7\t-95\t30\t120401020103\t1.5\t1\n";
        let f = write_tmp(".tsv", body);
        let ds = load_dataset(f.path(), &VariableDictionary::default()).unwrap();
        assert_eq!(ds.records[0].label, Some(PdeCategory::High));
        assert!(ds.warnings[0].message.contains("inconsistency"));
    }

    #[test]
    fn csv_round_trip() {
        let f = write_tmp(".jsonl", SAMPLE_ROW);
        let ds = load_dataset(f.path(), &VariableDictionary::default()).unwrap();
        let g = write_tmp(".csv", &records_to_csv(&ds.records));
        let back = load_dataset(g.path(), &VariableDictionary::default()).unwrap();
        assert_eq!(back.records, ds.records);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn out_of_range_coordinates_are_skipped() {
        let body = "row_id,x,y,huc12\n1,-195,30,120401020103\n2,-95,30,120401020103\n";
        let f = write_tmp(".csv", body);
        let ds = load_dataset(f.path(), &VariableDictionary::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert!(ds.warnings[0].message.contains("coordinate x"));
    }
}
