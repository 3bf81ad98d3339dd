//! Stage orchestration over a run directory. Each stage reads only files
//! written by earlier stages, so stages can be rerun one at a time.
//!
//! Layout: `config.json`, `inputs.json`, `profile.json`,
//! `profile_report.txt`, `textmodes.jsonl`, `kb.jsonl`, `libraries/`,
//! `predictions.jsonl`, `audits.jsonl`, `metrics.json`, `metrics.txt`,
//! `transcript.jsonl`, `usage.jsonl`, and `ablation/` for the I–IV grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{AblationConfig, RunConfig};
use crate::divergence::{build_profile_with, Boundary, DivergenceProfile};
use crate::downgrade::{
    apply_downgrade, CueHits, FiredRule, NeighborEvidence, NeighborSignal, DOWNGRADE_RULE,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_table, bts_flag, classification_metrics, efficiency, fdc_counts, label_from_rationale,
    library_for, lra, mentioned_features, metrics_table, pas, sfc, AliasTable, BoundaryCues,
    PredictionMetrics, ReasoningMetrics, SampleAudit, Terciles,
};
use crate::exec::Execution;
use crate::gateway::{
    cost_index, totals_of, Backend, Gateway, HttpBackend, MockBackend, SyntheticResponder,
    UsageRecord, UsageTotals,
};
use crate::kb::{
    boundary_margins, build_libraries, read_kb_jsonl, write_kb_jsonl, CueWeights, FreeShotLibrary,
    KbEntry, GLOBAL_SCOPE,
};
use crate::model::{load_dataset, Feature, PdeCategory, Record, VariableDictionary};
use crate::prompt::{
    build_kb_reasoning_prompt, build_prediction_prompt, build_text_mode_prompt, parse_trajectory,
    FreeShotInput, KbInput, KbValidator, NeighborInput, PredictionInput, PredictionValidator,
    PromptBundle, TargetInput, TextModeValidator, Violation, ViolationKind,
};
use crate::retrieval::{
    plan_injection, resolve_free_shots, InjectionPlan, NeighborIndex, ResolvedShots, RetrievalAudit,
};

pub const TEXT_MODE_STAGE: &str = "text_mode";
pub const KB_STAGE: &str = "kb_reasoning";
pub const PREDICT_STAGE: &str = "predict";

/// Row counts of one stage; `failed > 0` makes the run partial.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub ok: usize,
    pub failed: usize,
}

impl StageReport {
    pub fn is_clean(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModeLine {
    pub row_id: i64,
    pub text_mode: String,
}

/// A row the backend never answered acceptably, with the violations of every
/// attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectLine {
    pub row_id: i64,
    pub attempts: Vec<Vec<Violation>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub row_id: i64,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_label: Option<PdeCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_label: Option<PdeCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fired_rule: Option<FiredRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_cues: Option<CueHits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_signal: Option<NeighborSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Vec<Violation>>,
}

/// Metrics of one prediction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: AblationConfig,
    pub n_targets: usize,
    pub n_scored: usize,
    pub n_failed: usize,
    pub downgrades_fired: usize,
    pub prediction: Option<PredictionMetrics>,
    pub reasoning: Option<ReasoningMetrics>,
    pub usage: UsageTotals,
    pub cost_index: Option<f64>,
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub metrics: MetricsReport,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).expect("run file rows serialize"));
        out.push('\n');
    }
    out
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn round_to(v: f64, places: i32) -> f64 {
    let m = 10f64.powi(places);
    (v * m).round() / m
}

/// Feature order for text modes: by the larger of the two boundary scores,
/// ties by key.
pub fn text_mode_order(profile: &DivergenceProfile) -> Vec<Feature> {
    let score = |f: Feature| {
        Boundary::ALL
            .iter()
            .filter_map(|b| profile.divergence(*b, f).map(|d| d.score))
            .fold(0.0, f64::max)
    };
    let mut order = Feature::ALL.to_vec();
    order.sort_by(|a, b| score(*b).total_cmp(&score(*a)).then(a.key().cmp(b.key())));
    order
}

pub struct Pipeline {
    cfg: RunConfig,
    dictionary: VariableDictionary,
    root: PathBuf,
    /// Overrides the configured backend; used by tests.
    backend: Option<Arc<dyn Backend>>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let dictionary = VariableDictionary::with_overrides(&cfg.risk_directions)?;
        let root = cfg.output_dir.clone();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Pipeline {
            cfg,
            dictionary,
            root,
            backend: None,
        })
    }

    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Pipeline {
        self.backend = Some(backend);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn exec(&self) -> Execution {
        self.cfg.execution()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    fn read(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    fn load(&self, path: &Path) -> Result<Vec<Record>> {
        let ds = load_dataset(path, &self.dictionary)?;
        for w in &ds.warnings {
            log::warn!("{}:{}: {}", path.display(), w.line, w.message);
        }
        Ok(ds.records)
    }

    pub fn train_records(&self) -> Result<Vec<Record>> {
        self.load(&self.cfg.train_path)
    }

    pub fn test_records(&self) -> Result<Vec<Record>> {
        self.load(&self.cfg.test_path)
    }

    /// Writes the configuration echo and input hashes.
    pub fn write_echo(&self) -> Result<()> {
        self.write("config.json", &serde_json::to_string_pretty(&self.cfg)?)?;
        let mut inputs = BTreeMap::new();
        let mut files = vec![
            ("train", &self.cfg.train_path),
            ("test", &self.cfg.test_path),
        ];
        if let Some(s) = &self.cfg.mock.script {
            files.push(("mock_script", s));
        }
        for (name, p) in files {
            if let Ok(bytes) = fs::read(p) {
                inputs.insert(name.to_string(), sha256_hex(&bytes));
            }
        }
        self.write("inputs.json", &serde_json::to_string_pretty(&inputs)?)
    }

    fn make_backend(&self) -> Result<Arc<dyn Backend>> {
        if let Some(b) = &self.backend {
            return Ok(b.clone());
        }
        if !self.cfg.backend.is_mock() {
            return Ok(Arc::new(HttpBackend));
        }
        let mut mock = match &self.cfg.mock.script {
            Some(p) => MockBackend::from_script_file(p)?,
            None => MockBackend::new([]),
        };
        mock = mock.with_faults(self.cfg.mock.faults.clone());
        if self.cfg.mock.synthetic_fallback {
            let terciles = Terciles::from_records(&self.train_records()?);
            mock = mock.with_fallback(SyntheticResponder::new(self.dictionary.clone(), terciles));
        }
        Ok(Arc::new(mock))
    }

    fn gateway(&self) -> Result<Gateway> {
        Gateway::new(self.make_backend()?, self.cfg.backend.clone())
    }

    /// Replaces the entries of `stage` in a merged call log.
    fn merge_log(&self, name: &str, stage: &str, new_lines: &str) -> Result<()> {
        let mut rows: Vec<Value> = match self.read(name) {
            Ok(text) => parse_jsonl::<Value>(&text)?
                .into_iter()
                .filter(|v| v["stage"].as_str() != Some(stage))
                .collect(),
            Err(_) => Vec::new(),
        };
        rows.extend(parse_jsonl::<Value>(new_lines)?);
        rows.sort_by(|a, b| {
            let key = |v: &Value| {
                (
                    v["stage"].as_str().unwrap_or("").to_string(),
                    v["batch"].as_u64().unwrap_or(0),
                    v["attempt"].as_u64().unwrap_or(0),
                )
            };
            key(a).cmp(&key(b))
        });
        self.write(name, &jsonl(&rows))
    }

    fn save_calls(&self, gw: &Gateway, stage: &str) -> Result<()> {
        self.merge_log("transcript.jsonl", stage, &gw.transcript().to_jsonl())?;
        self.merge_log("usage.jsonl", stage, &jsonl(&gw.ledger().records()))
    }

    // ---- profile ----

    pub fn profile(&self) -> Result<DivergenceProfile> {
        self.write_echo()?;
        let train = self.train_records()?;
        let profile = build_profile_with(&train, &self.cfg.divergence, self.exec())?;
        self.write("profile.json", &profile.to_json())?;
        self.write("profile_report.txt", &profile.report(&self.dictionary))?;
        Ok(profile)
    }

    pub fn load_profile(&self) -> Result<DivergenceProfile> {
        Ok(serde_json::from_str(&self.read("profile.json")?)?)
    }

    // ---- text modes ----

    pub fn textmode(&self) -> Result<StageReport> {
        self.write_echo()?;
        let profile = self.load_profile()?;
        let order = text_mode_order(&profile);
        let mut records = self.train_records()?;
        records.extend(self.test_records()?);
        records.sort_by_key(|r| r.row_id);
        records.dedup_by_key(|r| r.row_id);
        let bundles = records
            .chunks(self.cfg.batch.text_mode)
            .map(|c| build_text_mode_prompt(c, &order, &self.dictionary))
            .collect::<Result<Vec<_>>>()?;
        let gw = self.gateway()?;
        let results = gw.invoke_many(
            &bundles,
            &TextModeValidator::default(),
            TEXT_MODE_STAGE,
            self.cfg.batch.max_reasks,
        );
        self.save_calls(&gw, TEXT_MODE_STAGE)?;
        let results = results?;
        let mut lines = Vec::new();
        let mut rejects = Vec::new();
        for batch in results {
            lines.extend(
                batch
                    .accepted
                    .into_iter()
                    .map(|(row_id, text_mode)| TextModeLine { row_id, text_mode }),
            );
            rejects.extend(
                batch
                    .failures
                    .into_iter()
                    .map(|(row_id, attempts)| RejectLine { row_id, attempts }),
            );
        }
        lines.sort_by_key(|l| l.row_id);
        rejects.sort_by_key(|r| r.row_id);
        self.write("textmodes.jsonl", &jsonl(&lines))?;
        self.write("textmode_rejects.jsonl", &jsonl(&rejects))?;
        Ok(StageReport {
            stage: TEXT_MODE_STAGE.into(),
            ok: lines.len(),
            failed: rejects.len(),
        })
    }

    pub fn load_text_modes(&self) -> Result<BTreeMap<i64, String>> {
        let lines: Vec<TextModeLine> = parse_jsonl(&self.read("textmodes.jsonl")?)?;
        Ok(lines.into_iter().map(|l| (l.row_id, l.text_mode)).collect())
    }

    // ---- knowledge base ----

    pub fn build_kb(&self) -> Result<StageReport> {
        self.write_echo()?;
        let text_modes = self.load_text_modes()?;
        let mut train = self.train_records()?;
        train.sort_by_key(|r| r.row_id);
        let mut rejects = Vec::new();
        let mut inputs = Vec::new();
        let mut by_row = BTreeMap::new();
        for r in train {
            let Some(label) = r.label else {
                log::warn!(
                    "training row {} has no label; left out of the knowledge base",
                    r.row_id
                );
                continue;
            };
            match text_modes.get(&r.row_id) {
                Some(t) => {
                    inputs.push(KbInput {
                        row_id: r.row_id,
                        text_mode: t.clone(),
                        ground_truth: Some(label),
                        huc12: r.huc12.clone(),
                    });
                    by_row.insert(r.row_id, r);
                }
                None => rejects.push(RejectLine {
                    row_id: r.row_id,
                    attempts: vec![vec![Violation::new(
                        ViolationKind::EmptyTextMode,
                        "no text mode for this row",
                    )]],
                }),
            }
        }
        let bundles = inputs
            .chunks(self.cfg.batch.kb)
            .map(build_kb_reasoning_prompt)
            .collect::<Result<Vec<_>>>()?;
        let validator = KbValidator {
            ground_truth: by_row
                .iter()
                .filter_map(|(id, r)| r.label.map(|l| (*id, l)))
                .collect(),
        };
        let gw = self.gateway()?;
        let results = gw.invoke_many(&bundles, &validator, KB_STAGE, self.cfg.batch.max_reasks);
        self.save_calls(&gw, KB_STAGE)?;
        let mut entries = Vec::new();
        for batch in results? {
            for (row_id, kt) in batch.accepted {
                let record = by_row[&row_id].clone();
                let text = text_modes[&row_id].clone();
                match KbEntry::new(record, text, kt.trajectory) {
                    Ok(e) => entries.push(e),
                    Err(e) => rejects.push(RejectLine {
                        row_id,
                        attempts: vec![vec![Violation::new(
                            ViolationKind::AnswerMismatch,
                            e.to_string(),
                        )]],
                    }),
                }
            }
            rejects.extend(
                batch
                    .failures
                    .into_iter()
                    .map(|(row_id, attempts)| RejectLine { row_id, attempts }),
            );
        }
        entries.sort_by_key(|e| e.row_id());
        rejects.sort_by_key(|r| r.row_id);
        self.write("kb.jsonl", &write_kb_jsonl(&entries))?;
        self.write("kb_rejects.jsonl", &jsonl(&rejects))?;
        Ok(StageReport {
            stage: KB_STAGE.into(),
            ok: entries.len(),
            failed: rejects.len(),
        })
    }

    pub fn load_kb(&self) -> Result<Vec<KbEntry>> {
        read_kb_jsonl(&self.read("kb.jsonl")?)
    }

    // ---- free-shot libraries ----

    pub fn freeshots(&self) -> Result<BTreeMap<String, FreeShotLibrary>> {
        self.write_echo()?;
        let kb = self.load_kb()?;
        let weights = CueWeights::from_profile(&self.load_profile()?);
        let libraries = build_libraries(&kb, &weights, self.cfg.freeshots.min_scope, self.exec())?;
        let dir = self.path("libraries");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (scope, lib) in &libraries {
            self.write(&format!("libraries/{scope}.json"), &lib.to_json())?;
        }
        Ok(libraries)
    }

    pub fn load_libraries(&self) -> Result<BTreeMap<String, FreeShotLibrary>> {
        let dir = self.path("libraries");
        let mut out = BTreeMap::new();
        let mut names: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        for p in names {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let lib: FreeShotLibrary = serde_json::from_str(&text)?;
            out.insert(lib.scope.clone(), lib);
        }
        if !out.contains_key(GLOBAL_SCOPE) {
            return Err(Error::InvalidInput(
                "no global free-shot library; run freeshots first".into(),
            ));
        }
        Ok(out)
    }

    // ---- prediction ----

    /// Prompt items and retrieval audits for every test target under the
    /// context of `config`. Targets without a text mode are returned apart.
    fn prediction_items(
        &self,
        config: AblationConfig,
        targets: &[Record],
        kb: &[KbEntry],
        libraries: &BTreeMap<String, FreeShotLibrary>,
        text_modes: &BTreeMap<i64, String>,
    ) -> Result<Vec<(PredictionInput, RetrievalAudit, Vec<(PdeCategory, String)>)>> {
        let index = NeighborIndex::build(kb);
        let (k_max, radius) = (self.cfg.retrieval.k_max, self.cfg.retrieval.radius_km);
        let built = self.exec().map(targets, |t| -> Result<_> {
            let neighbors = if config.uses_neighbors() {
                index.find_neighbors(t, k_max, radius)
            } else {
                Vec::new()
            };
            let plan = if config.uses_free_shots() {
                plan_injection(&neighbors)?
            } else {
                InjectionPlan {
                    neighbor_count: neighbors.len(),
                    prototypes_per_level: 0,
                    hard_examples: Vec::new(),
                }
            };
            let shots = if plan.total_shots() > 0 {
                resolve_free_shots(&plan, t.huc12.as_str(), libraries)?
            } else {
                ResolvedShots::default()
            };
            let audit = RetrievalAudit::new(t.row_id, &neighbors, &plan, &shots);
            let input = PredictionInput {
                row_id: t.row_id,
                target: TargetInput {
                    text_mode: text_modes[&t.row_id].clone(),
                    x: t.x,
                    y: t.y,
                },
                neighbors: neighbors
                    .iter()
                    .map(|n| NeighborInput {
                        n_label: n.entry.label(),
                        n_text_mode: n.entry.text_mode.clone(),
                        n_reasoning: n.entry.trajectory.raw.clone(),
                        distance_km: round_to(n.distance_km, 4),
                        within_1km: n.within_1km,
                        rank: n.rank,
                    })
                    .collect(),
                free_shots: shots
                    .shots
                    .iter()
                    .map(|s| FreeShotInput {
                        kind: s.shot.kind.shot_kind(),
                        level: s.shot.level,
                        text_mode: s.shot.text_mode.clone(),
                        reasoning: s.shot.reasoning.clone(),
                        why_selected: s.shot.why_selected.clone(),
                    })
                    .collect(),
            };
            let evidence = neighbors
                .iter()
                .map(|n| (n.entry.label(), n.entry.trajectory.think.clone()))
                .collect();
            Ok((input, audit, evidence))
        });
        built.into_iter().collect()
    }

    /// Calls the backend for every target and returns one record per target
    /// with the raw label only, plus the neighbor evidence for the post-check
    /// and the retrieval audits.
    fn raw_predictions(&self, config: AblationConfig, stage: &str) -> Result<RawRun> {
        let mut targets = self.test_records()?;
        targets.sort_by_key(|r| r.row_id);
        let kb = self.load_kb()?;
        let libraries = if config.uses_free_shots() {
            self.load_libraries()?
        } else {
            BTreeMap::new()
        };
        let text_modes = self.load_text_modes()?;
        let (ready, missing): (Vec<Record>, Vec<Record>) = targets
            .into_iter()
            .partition(|t| text_modes.contains_key(&t.row_id));
        let items = self.prediction_items(config, &ready, &kb, &libraries, &text_modes)?;
        let rule = self.cfg.downgrade.lexicon.render_rule(DOWNGRADE_RULE);
        let inputs: Vec<PredictionInput> = items.iter().map(|(i, _, _)| i.clone()).collect();
        let bundles: Vec<PromptBundle> = inputs
            .chunks(self.cfg.batch.predict)
            .map(|c| build_prediction_prompt(c, &rule))
            .collect::<Result<_>>()?;
        let gw = self.gateway()?;
        let results = gw.invoke_many(
            &bundles,
            &PredictionValidator,
            stage,
            self.cfg.batch.max_reasks,
        );
        self.save_calls(&gw, stage)?;
        let mut records = Vec::new();
        for batch in results? {
            for (row_id, p) in batch.accepted {
                records.push(PredictionRecord {
                    row_id,
                    status: RowStatus::Ok,
                    raw_label: Some(p.pred_label),
                    final_label: Some(p.pred_label),
                    fired_rule: None,
                    matched_cues: None,
                    neighbor_signal: None,
                    r1: Some(p.trajectory.raw),
                    violations: Vec::new(),
                });
            }
            for (row_id, attempts) in batch.failures {
                records.push(failed(row_id, attempts));
            }
        }
        for t in missing {
            records.push(failed(
                t.row_id,
                vec![vec![Violation::new(
                    ViolationKind::EmptyTextMode,
                    "no text mode for this target",
                )]],
            ));
        }
        records.sort_by_key(|r| r.row_id);
        let evidence = items
            .iter()
            .map(|(i, _, e)| (i.row_id, e.clone()))
            .collect();
        let audits = items.into_iter().map(|(_, a, _)| a).collect();
        Ok(RawRun {
            records,
            evidence,
            audits,
        })
    }

    /// Applies (IV) or skips the downgrade post-check.
    fn finalize(&self, raw: &RawRun, apply: bool) -> Vec<PredictionRecord> {
        let lex = &self.cfg.downgrade.lexicon;
        let th = &self.cfg.downgrade.thresholds;
        raw.records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                let (Some(label), Some(r1)) = (r.raw_label, r.r1.as_deref()) else {
                    return r;
                };
                if !apply {
                    r.fired_rule = Some(FiredRule::None);
                    return r;
                }
                let think = parse_trajectory(r1).map(|t| t.think).unwrap_or_default();
                let evidence: Vec<NeighborEvidence> = raw
                    .evidence
                    .get(&r.row_id)
                    .map(|list| {
                        list.iter()
                            .map(|(label, reasoning)| NeighborEvidence {
                                label: *label,
                                reasoning,
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                let d = apply_downgrade(label, &think, &evidence, lex, th);
                r.final_label = Some(d.output_label);
                r.fired_rule = Some(d.fired_rule);
                r.matched_cues = Some(d.matched);
                r.neighbor_signal = Some(d.neighbor_signal);
                r
            })
            .collect()
    }

    fn write_predictions(
        &self,
        dir: &str,
        records: &[PredictionRecord],
        audits: &[RetrievalAudit],
    ) -> Result<StageReport> {
        self.write(&format!("{dir}predictions.jsonl"), &jsonl(records))?;
        self.write(&format!("{dir}audits.jsonl"), &jsonl(audits))?;
        let failed = records
            .iter()
            .filter(|r| r.status == RowStatus::Failed)
            .count();
        Ok(StageReport {
            stage: format!("{dir}{PREDICT_STAGE}"),
            ok: records.len() - failed,
            failed,
        })
    }

    /// Predicts every test target under the configured ablation setting.
    pub fn predict(&self) -> Result<StageReport> {
        self.write_echo()?;
        let config = self.cfg.ablation;
        let raw = self.raw_predictions(config, PREDICT_STAGE)?;
        let records = self.finalize(&raw, config.applies_downgrade());
        self.write_predictions("", &records, &raw.audits)
    }

    // ---- evaluation ----

    fn metrics_for(
        &self,
        config: AblationConfig,
        records: &[PredictionRecord],
        usage_stage: &str,
    ) -> Result<(MetricsReport, Vec<SampleAudit>)> {
        let test: BTreeMap<i64, Record> = self
            .test_records()?
            .into_iter()
            .map(|r| (r.row_id, r))
            .collect();
        let kb = self.load_kb()?;
        let profile = self.load_profile()?;
        let libraries = self.load_libraries()?;
        let kb_records: Vec<Record> = kb.iter().map(|e| e.record.clone()).collect();
        let terciles = Terciles::from_records(&kb_records);
        let weights = CueWeights::from_profile(&profile);
        let aliases = AliasTable::default();
        let cues = BoundaryCues {
            lexicon: self.cfg.downgrade.lexicon.clone(),
            ..BoundaryCues::default()
        };
        let global = &libraries[GLOBAL_SCOPE];

        let scored: Vec<(&PredictionRecord, &Record)> = records
            .iter()
            .filter(|p| p.status == RowStatus::Ok)
            .filter_map(|p| {
                let rec = test.get(&p.row_id)?;
                rec.label.map(|_| (p, rec))
            })
            .collect();
        let samples: Vec<Result<SampleAudit>> = self.exec().map(&scored, |(p, rec)| {
            let pred = p.final_label.expect("ok rows carry a label");
            let traj = parse_trajectory(p.r1.as_deref().unwrap_or("")).map_err(|v| {
                Error::InvalidInput(format!(
                    "row {}: stored r1 no longer parses: {v:?}",
                    p.row_id
                ))
            })?;
            let think = &traj.think;
            let counts = fdc_counts(think, rec, &self.dictionary, &terciles, &aliases);
            Ok(SampleAudit {
                row_id: p.row_id,
                pred,
                implied_label: label_from_rationale(think),
                lra: lra(&traj, pred),
                mentioned: mentioned_features(think, &aliases),
                sfc: sfc(think, &profile.salient_set, &aliases)?,
                fdc_mentions: counts.mentions,
                fdc_consistent: counts.consistent,
                fdc: counts.score(),
                pas: library_for(&libraries, rec.huc12.as_str(), pred).and_then(|lib| {
                    pas(
                        think,
                        pred,
                        lib,
                        rec,
                        &weights,
                        &aliases,
                        self.cfg.freeshots.pas_top_k,
                    )
                }),
                min_margin: boundary_margins(&rec.predictors, &global.class_stats, &weights)
                    .ok()
                    .map(|m| m.min_margin()),
                tradeoff: bts_flag(think, &self.dictionary, &cues, &aliases),
            })
        });
        let samples: Vec<SampleAudit> = samples.into_iter().collect::<Result<_>>()?;
        let y: Vec<PdeCategory> = scored
            .iter()
            .map(|(_, r)| r.label.expect("filtered"))
            .collect();
        let yhat: Vec<PdeCategory> = scored
            .iter()
            .map(|(p, _)| p.final_label.expect("ok rows"))
            .collect();
        let prediction = if y.is_empty() {
            None
        } else {
            Some(classification_metrics(&y, &yhat)?)
        };
        let reasoning = if samples.is_empty() {
            None
        } else {
            Some(ReasoningMetrics::aggregate(
                &samples,
                self.cfg.evaluation.boundary_quantile,
            )?)
        };
        let usage_records: Vec<UsageRecord> = match self.read("usage.jsonl") {
            Ok(text) => parse_jsonl::<UsageRecord>(&text)?
                .into_iter()
                .filter(|u| u.tag.stage == usage_stage)
                .collect(),
            Err(_) => Vec::new(),
        };
        let usage = totals_of(&usage_records);
        let cost = cost_index(
            &usage,
            self.cfg.backend.pricing.as_ref(),
            records.len().max(1),
        )
        .ok();
        let eff = match (&prediction, cost) {
            (Some(m), Some(c)) => efficiency(m.severity_score, c).ok(),
            _ => None,
        };
        let report = MetricsReport {
            config,
            n_targets: records.len(),
            n_scored: y.len(),
            n_failed: records
                .iter()
                .filter(|r| r.status == RowStatus::Failed)
                .count(),
            downgrades_fired: records
                .iter()
                .filter(|r| {
                    matches!(
                        r.fired_rule,
                        Some(FiredRule::Rule1To0 | FiredRule::Rule2To1)
                    )
                })
                .count(),
            prediction,
            reasoning,
            usage,
            cost_index: cost,
            efficiency: eff,
        };
        Ok((report, samples))
    }

    fn write_metrics(
        &self,
        dir: &str,
        report: &MetricsReport,
        samples: &[SampleAudit],
    ) -> Result<()> {
        self.write(
            &format!("{dir}metrics.json"),
            &serde_json::to_string_pretty(report)?,
        )?;
        self.write(&format!("{dir}reasoning_audits.jsonl"), &jsonl(samples))?;
        let mut text = String::new();
        if let Some(m) = &report.prediction {
            text.push_str(&metrics_table(&[(
                report.config.to_string(),
                m.clone(),
                report.reasoning.clone(),
            )]));
        } else {
            text.push_str("no scored predictions\n");
        }
        text.push_str(&format!(
            "\ntargets {}  scored {}  failed {}  downgrades {}\n",
            report.n_targets, report.n_scored, report.n_failed, report.downgrades_fired
        ));
        text.push_str(&format!(
            "calls {}  prompt tokens {}  completion tokens {}  wall seconds {:.2}\n",
            report.usage.calls,
            report.usage.prompt_tokens,
            report.usage.completion_tokens,
            report.usage.wall_seconds
        ));
        match (report.cost_index, report.efficiency) {
            (Some(c), Some(e)) if c > 0.0 => {
                text.push_str(&format!("cost index {c:.6}  efficiency {e:.2}\n"))
            }
            _ => text.push_str("cost index not positive; efficiency not reported\n"),
        }
        self.write(&format!("{dir}metrics.txt"), &text)
    }

    pub fn load_predictions(&self, dir: &str) -> Result<Vec<PredictionRecord>> {
        parse_jsonl(&self.read(&format!("{dir}predictions.jsonl"))?)
    }

    /// Scores `predictions.jsonl` of the main run.
    pub fn evaluate(&self) -> Result<MetricsReport> {
        self.write_echo()?;
        let records = self.load_predictions("")?;
        let (report, samples) = self.metrics_for(self.cfg.ablation, &records, PREDICT_STAGE)?;
        self.write_metrics("", &report, &samples)?;
        Ok(report)
    }

    // ---- ablation ----

    /// Runs configurations I, II and III against the backend; IV reuses the
    /// raw responses of III and adds the post-check. Each configuration gets
    /// its own directory under `ablation/`.
    pub fn ablation(&self) -> Result<(Vec<AblationRow>, Vec<StageReport>)> {
        self.write_echo()?;
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        let mut raw_iii = None;
        for config in AblationConfig::ALL {
            let stage = format!(
                "ablation_{}",
                if config == AblationConfig::IV {
                    "III"
                } else {
                    config.name()
                }
            );
            let raw = match (config, raw_iii.take()) {
                (AblationConfig::IV, Some(r)) => r,
                _ => self.raw_predictions(config, &stage)?,
            };
            let records = self.finalize(&raw, config.applies_downgrade());
            let dir = format!("ablation/{config}/");
            reports.push(self.write_predictions(&dir, &records, &raw.audits)?);
            let (metrics, samples) = self.metrics_for(config, &records, &stage)?;
            self.write_metrics(&dir, &metrics, &samples)?;
            rows.push(AblationRow { config, metrics });
            if config == AblationConfig::III {
                raw_iii = Some(raw);
            }
        }
        self.write("ablation.json", &serde_json::to_string_pretty(&rows)?)?;
        let table: Vec<(String, PredictionMetrics)> = rows
            .iter()
            .filter_map(|r| {
                r.metrics
                    .prediction
                    .clone()
                    .map(|m| (r.config.to_string(), m))
            })
            .collect();
        self.write("ablation.txt", &ablation_table(&table))?;
        Ok((rows, reports))
    }

    /// profile → textmode → build-kb → freeshots → predict → evaluate.
    pub fn run_all(&self) -> Result<(Vec<StageReport>, MetricsReport)> {
        self.profile()?;
        let mut reports = vec![self.textmode()?, self.build_kb()?];
        self.freeshots()?;
        reports.push(self.predict()?);
        let metrics = self.evaluate()?;
        Ok((reports, metrics))
    }
}

struct RawRun {
    records: Vec<PredictionRecord>,
    /// Neighbor labels and reasoning per target, for the post-check.
    evidence: BTreeMap<i64, Vec<(PdeCategory, String)>>,
    audits: Vec<RetrievalAudit>,
}

fn failed(row_id: i64, attempts: Vec<Vec<Violation>>) -> PredictionRecord {
    PredictionRecord {
        row_id,
        status: RowStatus::Failed,
        raw_label: None,
        final_label: None,
        fired_rule: None,
        matched_cues: None,
        neighbor_signal: None,
        r1: None,
        violations: attempts,
    }
}

/// Row ids whose final labels differ between two prediction files.
pub fn differing_rows(a: &[PredictionRecord], b: &[PredictionRecord]) -> BTreeSet<i64> {
    let b: BTreeMap<i64, Option<PdeCategory>> =
        b.iter().map(|r| (r.row_id, r.final_label)).collect();
    a.iter()
        .filter(|r| b.get(&r.row_id).is_some_and(|l| *l != r.final_label))
        .map(|r| r.row_id)
        .collect()
}
