//! Stateless LLM invocation with retries and a bounded re-ask for responses
//! that break the output contract. Every call lands in the usage ledger and
//! the JSON Lines transcript.

mod http;
mod mock;
mod responder;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::prompt::{
    validate_batch, PromptBundle, PromptKind, ResponseValidator, Violation, ViolationKind,
};

pub use http::{api_key_env_var, HttpBackend};
pub use mock::{Fault, FaultKind, FaultSchedule, MockBackend, ScriptLine};
pub use responder::SyntheticResponder;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("response of {0} bytes exceeds the size limit")]
    TooLarge(usize),
    #[error("backend failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Pricing {
    /// Currency per token.
    Token { input_rate: f64, output_rate: f64 },
    /// Currency per hour of wall time.
    Hourly { hourly_rate: f64 },
    /// A flat fee spread over a number of samples.
    FixedFee { fixed_fee: f64, amortized_over: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub backend_id: String,
    /// Chat-completions URL, or "mock".
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub pricing: Option<Pricing>,
    pub max_parallel: usize,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
    pub max_response_bytes: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            backend_id: "mock".into(),
            endpoint: "mock".into(),
            model_name: "mock".into(),
            temperature: 0.0,
            max_tokens: 4096,
            pricing: Some(Pricing::Token {
                input_rate: 0.0,
                output_rate: 0.0,
            }),
            max_parallel: 4,
            max_retries: 3,
            retry_base_ms: 500,
            timeout_secs: 120,
            max_response_bytes: 1 << 20,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backend_id.is_empty() {
            return Err(Error::Config("backend_id must not be empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if let Some(Pricing::FixedFee {
            amortized_over: 0, ..
        }) = self.pricing
        {
            return Err(Error::Config("amortized_over must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Wall time the backend reports for the request; the mock reports a
    /// simulated value so runs stay reproducible.
    pub wall_seconds: f64,
}

/// One chat-completion style endpoint. Implementations keep no state between
/// calls that influences responses.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
    ) -> std::result::Result<BackendResponse, BackendError>;
}

/// Where a call sits in a run; ledger and transcript are ordered by it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub stage: String,
    pub batch: usize,
    pub attempt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    #[serde(flatten)]
    pub tag: CallTag,
    pub prompt_sha256: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_seconds: f64,
    pub retries: u32,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_seconds: f64,
    pub retries: u64,
}

/// Append-only usage records. Totals are summed in tag order, so they do
/// not depend on the order concurrent calls finished in.
#[derive(Debug, Default)]
pub struct UsageLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageLedger {
    pub fn push(&self, record: UsageRecord) {
        self.records.lock().expect("ledger lock").push(record);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        let mut out = self.records.lock().expect("ledger lock").clone();
        out.sort_by(|a, b| a.tag.cmp(&b.tag));
        out
    }

    pub fn totals(&self) -> UsageTotals {
        totals_of(&self.records())
    }
}

pub fn totals_of(records: &[UsageRecord]) -> UsageTotals {
    let mut t = UsageTotals::default();
    for r in records {
        t.calls += 1;
        t.prompt_tokens += r.prompt_tokens;
        t.completion_tokens += r.completion_tokens;
        t.wall_seconds += r.wall_seconds;
        t.retries += r.retries as u64;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(flatten)]
    pub tag: CallTag,
    pub kind: PromptKind,
    pub prompt_sha256: String,
    pub expected_rows: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accepted_rows: Vec<i64>,
    pub rejected: BTreeMap<i64, Vec<Violation>>,
    pub batch_violations: Vec<Violation>,
}

#[derive(Debug, Default)]
pub struct Transcript {
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl Transcript {
    pub fn push(&self, entry: TranscriptEntry) {
        self.entries.lock().expect("transcript lock").push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let mut out = self.entries.lock().expect("transcript lock").clone();
        out.sort_by(|a, b| a.tag.cmp(&b.tag));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in self.entries() {
            s.push_str(&serde_json::to_string(&e).expect("transcript entry serializes"));
            s.push('\n');
        }
        s
    }
}

/// Outcome of a validated batch call: rows that passed, and for each row
/// that never did, the violations of every attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedBatch<T> {
    pub accepted: BTreeMap<i64, T>,
    pub failures: BTreeMap<i64, Vec<Vec<Violation>>>,
    pub reasks: usize,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
    ledger: UsageLedger,
    transcript: Transcript,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Result<Gateway> {
        config.validate()?;
        Ok(Gateway {
            backend,
            config,
            ledger: UsageLedger::default(),
            transcript: Transcript::default(),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// One request; transient failures are retried with exponential backoff.
    pub fn invoke(
        &self,
        bundle: &PromptBundle,
        tag: CallTag,
    ) -> std::result::Result<BackendResponse, BackendError> {
        let hash = bundle.sha256();
        let mut retries = 0u32;
        let started = Instant::now();
        let result = loop {
            match self.backend.complete(bundle, &self.config) {
                Ok(resp) if resp.text.len() > self.config.max_response_bytes => {
                    break Err(BackendError::TooLarge(resp.text.len()));
                }
                Ok(resp) => break Ok(resp),
                Err(BackendError::Transient(msg)) if retries < self.config.max_retries => {
                    log::warn!(
                        "{} batch {}: transient failure ({msg}), retrying",
                        tag.stage,
                        tag.batch
                    );
                    let delay = self
                        .config
                        .retry_base_ms
                        .saturating_mul(1u64 << retries.min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    retries += 1;
                }
                Err(e) => break Err(e),
            }
        };
        let (prompt_tokens, completion_tokens, wall_seconds) = match &result {
            Ok(r) => (r.prompt_tokens, r.completion_tokens, r.wall_seconds),
            Err(_) if self.config.is_mock() => (0, 0, 0.0),
            Err(_) => (0, 0, started.elapsed().as_secs_f64()),
        };
        self.ledger.push(UsageRecord {
            tag,
            prompt_sha256: hash,
            prompt_tokens,
            completion_tokens,
            wall_seconds,
            retries,
            ok: result.is_ok(),
        });
        result
    }

    fn attempt<V: ResponseValidator>(
        &self,
        bundle: &PromptBundle,
        validator: &V,
        tag: CallTag,
    ) -> Result<(BTreeMap<i64, V::Item>, BTreeMap<i64, Vec<Violation>>)> {
        let hash = bundle.sha256();
        let mut entry = TranscriptEntry {
            tag: tag.clone(),
            kind: bundle.kind,
            prompt_sha256: hash,
            expected_rows: bundle.expected_rows.clone(),
            response: None,
            error: None,
            accepted_rows: vec![],
            rejected: BTreeMap::new(),
            batch_violations: vec![],
        };
        match self.invoke(bundle, tag) {
            Ok(resp) => {
                let verdict = validate_batch(validator, &bundle.expected_rows, &resp.text);
                entry.response = Some(resp.text);
                entry.accepted_rows = verdict.accepted.keys().copied().collect();
                entry.rejected = verdict.rejected.clone();
                entry.batch_violations = verdict.batch_violations;
                self.transcript.push(entry);
                Ok((verdict.accepted, verdict.rejected))
            }
            Err(BackendError::Auth(msg)) => {
                entry.error = Some(format!("authentication failed: {msg}"));
                self.transcript.push(entry);
                Err(Error::Backend(BackendError::Auth(msg)))
            }
            Err(e) => {
                let v = Violation::new(ViolationKind::BackendFailure, e.to_string());
                let rejected: BTreeMap<i64, Vec<Violation>> = bundle
                    .expected_rows
                    .iter()
                    .map(|r| (*r, vec![v.clone()]))
                    .collect();
                entry.error = Some(e.to_string());
                entry.rejected = rejected.clone();
                self.transcript.push(entry);
                Ok((BTreeMap::new(), rejected))
            }
        }
    }

    /// Invokes and validates; rows that fail are asked for again up to
    /// `max_reasks` times with the violations appended. Rows still failing
    /// are returned as failures, never defaulted. Authentication failures
    /// abort with an error.
    pub fn invoke_validated<V: ResponseValidator>(
        &self,
        bundle: &PromptBundle,
        validator: &V,
        stage: &str,
        batch: usize,
        max_reasks: usize,
    ) -> Result<ValidatedBatch<V::Item>> {
        debug_assert_eq!(validator.kind(), bundle.kind);
        let tag = |attempt| CallTag {
            stage: stage.to_string(),
            batch,
            attempt,
        };
        let (mut accepted, mut rejected) = self.attempt(bundle, validator, tag(0))?;
        let mut failures: BTreeMap<i64, Vec<Vec<Violation>>> = rejected
            .iter()
            .map(|(r, v)| (*r, vec![v.clone()]))
            .collect();
        let mut reasks = 0;
        while !rejected.is_empty() && reasks < max_reasks {
            let backend_failed = rejected
                .values()
                .all(|v| v.iter().any(|x| x.kind == ViolationKind::BackendFailure));
            if backend_failed {
                break;
            }
            reasks += 1;
            let list: Vec<(i64, Vec<Violation>)> =
                rejected.iter().map(|(r, v)| (*r, v.clone())).collect();
            let follow_up = bundle.reask(&list);
            let (ok, bad) = self.attempt(&follow_up, validator, tag(reasks))?;
            for (row, item) in ok {
                failures.remove(&row);
                accepted.insert(row, item);
            }
            for (row, v) in &bad {
                failures.entry(*row).or_default().push(v.clone());
            }
            rejected = bad;
        }
        Ok(ValidatedBatch {
            accepted,
            failures,
            reasks,
        })
    }

    /// Runs all bundles with at most `max_parallel` in flight; results come
    /// back in bundle order.
    pub fn invoke_many<V: ResponseValidator>(
        &self,
        bundles: &[PromptBundle],
        validator: &V,
        stage: &str,
        max_reasks: usize,
    ) -> Result<Vec<ValidatedBatch<V::Item>>> {
        let run = |i: usize| self.invoke_validated(&bundles[i], validator, stage, i, max_reasks);
        #[cfg(feature = "parallel")]
        if self.config.max_parallel > 1 && bundles.len() > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.max_parallel)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            return pool.install(|| (0..bundles.len()).into_par_iter().map(run).collect());
        }
        (0..bundles.len()).map(run).collect()
    }
}

/// Per-sample cost from the ledger totals under the configured pricing.
pub fn cost_index(
    totals: &UsageTotals,
    pricing: Option<&Pricing>,
    n_samples: usize,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidInput(
            "cost index needs at least one sample".into(),
        ));
    }
    let n = n_samples as f64;
    match pricing.ok_or(Error::PricingUnset)? {
        Pricing::Token {
            input_rate,
            output_rate,
        } => Ok((totals.prompt_tokens as f64 * input_rate
            + totals.completion_tokens as f64 * output_rate)
            / n),
        Pricing::Hourly { hourly_rate } => Ok(totals.wall_seconds / 3600.0 * hourly_rate / n),
        Pricing::FixedFee {
            fixed_fee,
            amortized_over,
        } => Ok(fixed_fee / *amortized_over as f64),
    }
}

/// Rough token count used by the mock: one token per four characters.
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
