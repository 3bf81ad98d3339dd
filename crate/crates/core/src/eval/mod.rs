//! Prediction metrics, reasoning-quality metrics and efficiency.

mod mentions;
mod metrics;
mod reasoning;
mod report;

pub use mentions::{
    directional_mentions, mentioned_features, normalize_whitespace, AliasTable, DirectionalMention,
    Magnitude, Terciles,
};
pub use metrics::{
    classification_metrics, efficiency, quantile_type7, severity_score, PredictionMetrics,
};
pub use reasoning::{
    bts, bts_flag, fdc, fdc_counts, label_from_rationale, library_for, lra, nearest_prototype, pas,
    sfc, top_contributors, BoundaryCues, FdcCounts, ReasoningMetrics, SampleAudit,
};
pub use report::{ablation_table, efficiency_table, metrics_table, EfficiencyRow};
