//! OpenAI-compatible chat-completions backend.
//!
//! Requests carry the agent's sampling parameters; `top_k` rides along as an
//! extension field accepted by common open-model servers. Failures retry with
//! exponential backoff before surfacing as a typed backend error. Requests
//! are idempotent reads, so retries never duplicate side effects.

use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::SamplingParams;
use crate::error::{Error, Result};
use crate::templates::ChatMessage;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone)]
pub struct HttpAgent {
    client: reqwest::blocking::Client,
    id: String,
    endpoint: String,
    model_name: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: AssistantMessage,
}

#[derive(Deserialize)]
struct AssistantMessage {
    content: String,
}

impl HttpAgent {
    /// `endpoint` is the base URL of an OpenAI-compatible server (for example
    /// `http://localhost:8000/v1`); the chat-completions path is appended.
    pub fn new(
        id: &str,
        endpoint: &str,
        model_name: &str,
        api_key_env: Option<&str>,
        retry: RetryPolicy,
        timeout_secs: Option<u64>,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs.unwrap_or_else(default_timeout)))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let api_key = api_key_env
            .map(str::to_string)
            .or_else(|| Some("AGENTSEARCH_API_KEY".to_string()))
            .and_then(|var| std::env::var(var).ok());
        Ok(Self {
            client,
            id: id.to_string(),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model_name: model_name.to_string(),
            api_key,
            retry,
        })
    }

    fn backend_err(&self, message: impl Into<String>) -> Error {
        Error::Backend {
            agent: self.id.clone(),
            message: message.into(),
        }
    }

    pub fn complete(
        &self,
        messages: &[ChatMessage],
        sampling: &SamplingParams,
        seed: u64,
    ) -> Result<String> {
        let body = json!({
            "model": self.model_name,
            "messages": messages,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "top_k": sampling.top_k,
            "max_tokens": sampling.max_tokens,
            "seed": seed,
        });
        let url = format!("{}/chat/completions", self.endpoint);

        let mut last_error = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                let backoff = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let parsed: ChatResponse = response
                            .json()
                            .map_err(|e| self.backend_err(format!("bad response body: {e}")))?;
                        return parsed
                            .choices
                            .into_iter()
                            .next()
                            .map(|c| c.message.content)
                            .ok_or_else(|| self.backend_err("response had no choices"));
                    }
                    last_error = format!("HTTP {status}");
                }
                Err(e) => last_error = e.to_string(),
            }
            log::warn!(
                "agent {}: attempt {}/{} failed: {last_error}",
                self.id,
                attempt + 1,
                self.retry.max_retries + 1
            );
        }
        Err(self.backend_err(format!(
            "gave up after {} attempts: {last_error}",
            self.retry.max_retries + 1
        )))
    }

    /// Cheap reachability check used by the CLI startup probe.
    pub fn probe(&self) -> Result<()> {
        let url = reqwest::Url::parse(&self.endpoint)
            .map_err(|e| Error::Config(format!("agent {}: bad endpoint: {e}", self.id)))?;
        let host = url
            .host_str()
            .ok_or_else(|| Error::Config(format!("agent {}: endpoint has no host", self.id)))?;
        let port = url.port_or_known_default().unwrap_or(80);
        let addr = format!("{host}:{port}");
        let mut addrs = std::net::ToSocketAddrs::to_socket_addrs(&addr)
            .map_err(|e| self.backend_err(format!("cannot resolve {addr}: {e}")))?;
        let addr = addrs
            .next()
            .ok_or_else(|| self.backend_err(format!("no address for {addr}")))?;
        TcpStream::connect_timeout(&addr, Duration::from_secs(2))
            .map_err(|e| self.backend_err(format!("unreachable: {e}")))?;
        Ok(())
    }
}
