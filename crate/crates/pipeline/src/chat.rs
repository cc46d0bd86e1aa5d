//! Blocking chat-completions client used as remote teacher, judge and
//! baseline responder.

use std::thread::sleep;
use std::time::Duration;

use dualhead_core::datagen::{ChatModel, TeacherError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Endpoint settings. The bearer token is read from the environment
/// variable named by `token_env`, never from the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL without the `/v1/chat/completions` suffix.
    pub base_url: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    /// Attempts after the first one.
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            model: "teacher".into(),
            token_env: "DUALHEAD_API_TOKEN".into(),
            timeout_secs: 120,
            max_retries: 4,
            backoff_ms: 500,
        }
    }
}

pub struct ChatClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    token: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl ChatClient {
    pub fn new(config: &EndpointConfig) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending requests without a bearer token", config.token_env);
        }
        Self::with_token(config, token)
    }

    pub fn with_token(config: &EndpointConfig, token: Option<String>) -> Self {
        Self {
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(config.timeout_secs))
                .build(),
            url: format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            token,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let v: Value = resp.into_json().map_err(|e| (true, format!("bad response body: {e}")))?;
                v.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let retry = code == 429 || code >= 500;
                Err((retry, format!("HTTP {code}: {}", text.chars().take(200).collect::<String>())))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }
}

impl ChatModel for ChatClient {
    fn complete(&mut self, system: &str, user: &str, temperature: f64, max_tokens: usize) -> Result<String, TeacherError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    last = msg;
                    if !retry || attempt == self.max_retries {
                        break;
                    }
                    log::warn!("{}: {last}; retrying in {delay:?}", self.url);
                    sleep(delay);
                    delay *= 2;
                }
            }
        }
        Err(TeacherError::Transport(format!("{}: {last}", self.url)))
    }

    fn describe(&self) -> String {
        format!("{} model={}", self.url, self.model)
    }
}
