//! OpenAI-style chat-completions client.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, BackendResponse};
use crate::prompt::PromptBundle;

/// Environment variable holding the API key for a backend id, e.g.
/// `gpt-4.1` → `FLOODRAG_API_KEY_GPT_4_1`.
pub fn api_key_env_var(backend_id: &str) -> String {
    let suffix: String = backend_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("FLOODRAG_API_KEY_{suffix}")
}

#[derive(Debug, Default)]
pub struct HttpBackend;

impl HttpBackend {
    fn classify(status: u16, body: &str) -> BackendError {
        let snippet: String = body.chars().take(200).collect();
        match status {
            401 | 403 => BackendError::Auth(format!("HTTP {status}")),
            413 => BackendError::TooLarge(body.len()),
            408 | 429 | 500..=599 => BackendError::Transient(format!("HTTP {status}: {snippet}")),
            _ => BackendError::Fatal(format!("HTTP {status}: {snippet}")),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
    ) -> Result<BackendResponse, BackendError> {
        let var = api_key_env_var(&config.backend_id);
        let key = std::env::var(&var)
            .map_err(|_| BackendError::Auth(format!("environment variable {var} is not set")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let body = json!({
            "model": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
        });
        let started = Instant::now();
        let mut resp = agent
            .post(&config.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(config.max_response_bytes as u64)
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::BodyExceedsLimit(n) => BackendError::TooLarge(n as usize),
                other => BackendError::Transient(other.to_string()),
            })?;
        let wall_seconds = started.elapsed().as_secs_f64();
        if !(200..300).contains(&status) {
            return Err(Self::classify(status, &text));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("unreadable response: {e}")))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                BackendError::Fatal("response has no choices[0].message.content".into())
            })?;
        Ok(BackendResponse {
            text: content.to_string(),
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            wall_seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_var_names() {
        assert_eq!(api_key_env_var("gpt-4.1"), "FLOODRAG_API_KEY_GPT_4_1");
        assert_eq!(api_key_env_var("mock"), "FLOODRAG_API_KEY_MOCK");
    }

    #[test]
    fn status_classes() {
        assert!(matches!(
            HttpBackend::classify(401, ""),
            BackendError::Auth(_)
        ));
        assert!(matches!(
            HttpBackend::classify(429, ""),
            BackendError::Transient(_)
        ));
        assert!(matches!(
            HttpBackend::classify(503, ""),
            BackendError::Transient(_)
        ));
        assert!(matches!(
            HttpBackend::classify(400, ""),
            BackendError::Fatal(_)
        ));
    }
}
