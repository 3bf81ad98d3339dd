//! Aligned-column text tables for metric reports.

use serde::{Deserialize, Serialize};

use super::metrics::{efficiency, PredictionMetrics};
use super::reasoning::ReasoningMetrics;
use crate::error::Result;

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push('\n');
    }
    out
}

/// Prediction metrics per run, with reasoning metrics where available.
pub fn metrics_table(rows: &[(String, PredictionMetrics, Option<ReasoningMetrics>)]) -> String {
    let header = [
        "run",
        "n",
        "accuracy",
        "macro_f1",
        "damage_acc",
        "severity",
        "recall_2",
        "LRA",
        "SFC",
        "FDC",
        "PAS",
        "BTS",
        "|B|",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m, r)| {
            let mut cells = vec![
                name.clone(),
                m.n.to_string(),
                format!("{:.4}", m.overall_accuracy),
                format!("{:.4}", m.macro_f1),
                opt(m.damage_class_accuracy, 4),
                format!("{:.4}", m.severity_score),
                opt(m.recall_2, 4),
            ];
            match r {
                Some(r) => cells.extend([
                    format!("{:.4}", r.lra),
                    format!("{:.4}", r.sfc),
                    format!("{:.4}", r.fdc),
                    opt(r.pas, 4),
                    opt(r.bts, 4),
                    r.boundary_subset_size.to_string(),
                ]),
                None => cells.extend(std::iter::repeat_n("-".to_string(), 6)),
            }
            cells
        })
        .collect();
    render(&header, &body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model: String,
    pub severity_score: f64,
    pub cost_idx: f64,
    /// Externally reported efficiency, shown next to the recomputed value.
    #[serde(default)]
    pub reported: Option<f64>,
}

impl EfficiencyRow {
    pub fn efficiency(&self) -> Result<f64> {
        efficiency(self.severity_score, self.cost_idx)
    }
}

/// Severity, cost index and severity-per-cost per model.
pub fn efficiency_table(rows: &[EfficiencyRow]) -> Result<String> {
    let header = ["model", "severity", "cost_idx", "efficiency", "reported"];
    let mut body = Vec::new();
    for r in rows {
        body.push(vec![
            r.model.clone(),
            format!("{:.4}", r.severity_score),
            format!("{:.4}", r.cost_idx),
            format!("{:.2}", r.efficiency()?),
            opt(r.reported, 1),
        ]);
    }
    Ok(render(&header, &body))
}

/// Macro-F1 and the other prediction metrics per ablation configuration.
pub fn ablation_table(rows: &[(String, PredictionMetrics)]) -> String {
    let header = [
        "config",
        "macro_f1",
        "accuracy",
        "damage_acc",
        "severity",
        "recall_2",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            vec![
                name.clone(),
                format!("{:.4}", m.macro_f1),
                format!("{:.4}", m.overall_accuracy),
                opt(m.damage_class_accuracy, 4),
                format!("{:.4}", m.severity_score),
                opt(m.recall_2, 4),
            ]
        })
        .collect();
    render(&header, &body)
}
