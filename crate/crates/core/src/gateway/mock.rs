//! Scripted mock backend. Responses are keyed by the SHA-256 of the prompt;
//! a transcript file doubles as a script because it carries the same keys.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, Backend, BackendConfig, BackendError, BackendResponse, SyntheticResponder,
};
use crate::error::{Error, Result};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub prompt_sha256: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Transient,
    Auth,
    TooLarge,
    Fatal,
}

/// The first `times` calls for a prompt fail with `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub prompt_sha256: String,
    pub kind: FaultKind,
    #[serde(default = "one")]
    pub times: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub faults: Vec<Fault>,
}

pub struct MockBackend {
    responses: HashMap<String, Vec<String>>,
    faults: FaultSchedule,
    fallback: Option<SyntheticResponder>,
    calls: Mutex<HashMap<String, usize>>,
}

impl MockBackend {
    pub fn new(lines: impl IntoIterator<Item = ScriptLine>) -> MockBackend {
        let mut responses: HashMap<String, Vec<String>> = HashMap::new();
        for l in lines {
            responses
                .entry(l.prompt_sha256)
                .or_default()
                .push(l.response);
        }
        MockBackend {
            responses,
            faults: FaultSchedule::default(),
            fallback: None,
            calls: Mutex::new(HashMap::new()),
        }
    }

    /// Reads a JSON Lines script. Lines without a `response` (for example
    /// failed calls in a transcript) are skipped.
    pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::InvalidInput(format!("script line {}: {e}", i + 1)))?;
            let (Some(hash), Some(resp)) = (v["prompt_sha256"].as_str(), v["response"].as_str())
            else {
                continue;
            };
            out.push(ScriptLine {
                prompt_sha256: hash.to_string(),
                response: resp.to_string(),
            });
        }
        Ok(out)
    }

    pub fn from_script_file(path: &Path) -> Result<MockBackend> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(MockBackend::new(Self::parse_script(&text)?))
    }

    pub fn with_faults(mut self, faults: FaultSchedule) -> MockBackend {
        self.faults = faults;
        self
    }

    /// Answers prompts missing from the script with the rule-based responder.
    pub fn with_fallback(mut self, responder: SyntheticResponder) -> MockBackend {
        self.fallback = Some(responder);
        self
    }

    pub fn script_len(&self) -> usize {
        self.responses.values().map(Vec::len).sum()
    }
}

impl Backend for MockBackend {
    fn complete(
        &self,
        bundle: &PromptBundle,
        _config: &BackendConfig,
    ) -> std::result::Result<BackendResponse, BackendError> {
        let hash = bundle.sha256();
        let n = {
            let mut calls = self.calls.lock().expect("mock call counter");
            let c = calls.entry(hash.clone()).or_insert(0);
            *c += 1;
            *c - 1
        };
        let mut failed_before = 0;
        for f in self
            .faults
            .faults
            .iter()
            .filter(|f| f.prompt_sha256 == hash)
        {
            if n < failed_before + f.times {
                return Err(match f.kind {
                    FaultKind::Transient => {
                        BackendError::Transient("scripted transient fault".into())
                    }
                    FaultKind::Auth => BackendError::Auth("scripted auth fault".into()),
                    FaultKind::TooLarge => BackendError::TooLarge(usize::MAX),
                    FaultKind::Fatal => BackendError::Fatal("scripted fatal fault".into()),
                });
            }
            failed_before += f.times;
        }
        let served = n - failed_before;
        let text = match self.responses.get(&hash) {
            Some(list) => list[served.min(list.len() - 1)].clone(),
            None => match &self.fallback {
                Some(r) => r.respond(bundle),
                None => {
                    return Err(BackendError::Fatal(format!(
                        "no scripted response for prompt {hash}"
                    )))
                }
            },
        };
        let prompt_tokens = approx_tokens(&bundle.system) + approx_tokens(&bundle.user);
        let completion_tokens = approx_tokens(&text);
        Ok(BackendResponse {
            text,
            prompt_tokens,
            completion_tokens,
            wall_seconds: 0.25 + completion_tokens as f64 / 50.0,
        })
    }
}
