//! The agent pool: a uniform gateway over model backends.
//!
//! A pool is an ordered list of agent profiles (iteration order is declaration
//! order, which also defines ablation priority). Each profile is backed either
//! by an OpenAI-compatible HTTP server or by a deterministic mock script.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{HttpAgent, RetryPolicy};
use crate::mock::MockScript;
use crate::templates::{messages_text, ChatMessage};

/// Per-agent sampling parameters sent with every completion request.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.75,
            top_k: 40,
            top_p: 0.95,
            max_tokens: 1024,
        }
    }
}

/// Backend-specific profile fields. Serialized flat next to `id`/`sampling`
/// with a `backend` tag, so pool files stay a single flat object per agent.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        endpoint: String,
        model_name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
    Mock {
        script: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgentProfile {
    pub id: String,
    #[serde(flatten)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub sampling: SamplingParams,
}

/// On-disk pool file shape: `{"agents": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub agents: Vec<AgentProfile>,
}

enum Backend {
    Mock(Arc<MockScript>),
    Http(HttpAgent),
}

impl Clone for Backend {
    fn clone(&self) -> Self {
        match self {
            Backend::Mock(script) => Backend::Mock(Arc::clone(script)),
            Backend::Http(agent) => Backend::Http(agent.clone()),
        }
    }
}

/// The ordered set of model backends used by one run.
pub struct AgentPool {
    profiles: Vec<AgentProfile>,
    backends: Vec<Backend>,
    calls: AtomicU64,
}

impl AgentPool {
    /// Loads a pool file; mock script paths resolve relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("pool file {}: {e}", path.display())))?;
        let config: PoolConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("pool file {}: {e}", path.display())))?;
        Self::from_profiles(config.agents, path.parent())
    }

    pub fn from_profiles(profiles: Vec<AgentProfile>, base_dir: Option<&Path>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::Config("agent pool must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for profile in &profiles {
            if !seen.insert(profile.id.clone()) {
                return Err(Error::Config(format!(
                    "duplicate agent id `{}` in pool",
                    profile.id
                )));
            }
        }
        let mut backends = Vec::with_capacity(profiles.len());
        for profile in &profiles {
            let backend = match &profile.backend {
                BackendConfig::Mock { script } => {
                    let path = match base_dir {
                        Some(dir) if script.is_relative() => dir.join(script),
                        _ => script.clone(),
                    };
                    Backend::Mock(Arc::new(MockScript::load(&path)?))
                }
                BackendConfig::Http {
                    endpoint,
                    model_name,
                    api_key_env,
                    retry,
                    timeout_secs,
                } => Backend::Http(HttpAgent::new(
                    &profile.id,
                    endpoint,
                    model_name,
                    api_key_env.as_deref(),
                    retry.clone(),
                    *timeout_secs,
                )?),
            };
            backends.push(backend);
        }
        Ok(Self {
            profiles,
            backends,
            calls: AtomicU64::new(0),
        })
    }

    /// Keeps only the first `n` agents, in declaration (priority) order.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!(
                "cannot truncate pool of {} agents to {n}",
                self.len()
            )));
        }
        Ok(Self {
            profiles: self.profiles[..n].to_vec(),
            backends: self.backends[..n].to_vec(),
            calls: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profile(&self, index: usize) -> &AgentProfile {
        &self.profiles[index]
    }

    pub fn ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.id.clone()).collect()
    }

    /// Total completed `complete` calls since construction (or last reset).
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_call_count(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Requests one completion from the given agent.
    pub fn complete(&self, agent: usize, messages: &[ChatMessage], seed: u64) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let profile = &self.profiles[agent];
        match &self.backends[agent] {
            Backend::Mock(script) => script.respond(&messages_text(messages), seed),
            Backend::Http(http) => http.complete(messages, &profile.sampling, seed),
        }
    }

    /// Startup reachability probe. Mock scripts were validated at load time;
    /// HTTP endpoints get a connection check.
    pub fn probe(&self) -> Result<()> {
        for backend in &self.backends {
            if let Backend::Http(http) = backend {
                http.probe()?;
            }
        }
        Ok(())
    }
}

/// One planned agent call.
pub struct CallSpec {
    pub agent: usize,
    pub messages: Vec<ChatMessage>,
    pub seed: u64,
}

/// Executes calls with at most `max_in_flight` running concurrently. Results
/// come back in spec order regardless of completion order, and every call's
/// seed was fixed up front, so concurrency never changes outputs.
pub fn complete_many(
    pool: &AgentPool,
    specs: &[CallSpec],
    max_in_flight: usize,
) -> Vec<Result<String>> {
    let limit = max_in_flight.max(1);
    if limit == 1 || specs.len() <= 1 {
        return specs
            .iter()
            .map(|spec| pool.complete(spec.agent, &spec.messages, spec.seed))
            .collect();
    }
    let mut results = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(limit) {
        let mut chunk_results: Vec<Option<Result<String>>> =
            (0..chunk.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|spec| scope.spawn(|| pool.complete(spec.agent, &spec.messages, spec.seed)))
                .collect();
            for (slot, handle) in chunk_results.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("agent call panicked"));
            }
        });
        results.extend(chunk_results.into_iter().map(Option::unwrap));
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_pool(scripts: &[(&str, &str)]) -> AgentPool {
        let dir = tempfile::tempdir().unwrap();
        let profiles = scripts
            .iter()
            .map(|(id, script)| {
                let path = dir.path().join(format!("{id}.json"));
                std::fs::write(&path, script).unwrap();
                AgentProfile {
                    id: id.to_string(),
                    backend: BackendConfig::Mock { script: path },
                    sampling: SamplingParams::default(),
                }
            })
            .collect();
        AgentPool::from_profiles(profiles, None).unwrap()
    }

    #[test]
    fn scripted_echo() {
        let pool = mock_pool(&[(
            "a",
            r#"{"rules": [{"pattern": "decompose", "response": "Question 1.1: sub"}]}"#,
        )]);
        let out = pool
            .complete(0, &[ChatMessage::user("please decompose it")], 0)
            .unwrap();
        assert_eq!(out, "Question 1.1: sub");
        assert_eq!(pool.call_count(), 1);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let pool = mock_pool(&[(
            "a",
            r#"{"rules": [{"pattern": ".", "regex": true,
                "choices": [{"weight": 1.0, "response": "x"}, {"weight": 1.0, "response": "y"}]}]}"#,
        )]);
        let messages = [ChatMessage::user("prompt")];
        let first = pool.complete(0, &messages, 123).unwrap();
        let second = pool.complete(0, &messages, 123).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"default": "ok"}"#).unwrap();
        let profile = AgentProfile {
            id: "dup".into(),
            backend: BackendConfig::Mock { script: path },
            sampling: SamplingParams::default(),
        };
        let err = AgentPool::from_profiles(vec![profile.clone(), profile], None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn sampling_defaults() {
        let s = SamplingParams::default();
        assert_eq!(s.temperature, 0.75);
        assert_eq!(s.top_k, 40);
        assert_eq!(s.top_p, 0.95);
    }

    #[test]
    fn pool_file_roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), r#"{"default": "ok"}"#).unwrap();
        let pool_json = r#"{"agents": [
            {"id": "a", "backend": "mock", "script": "s.json"},
            {"id": "b", "backend": "mock", "script": "s.json"},
            {"id": "c", "backend": "mock", "script": "s.json"}
        ]}"#;
        let pool_path = dir.path().join("pool.json");
        std::fs::write(&pool_path, pool_json).unwrap();
        let pool = AgentPool::load(&pool_path).unwrap();
        assert_eq!(pool.len(), 3);
        let truncated = pool.truncated(2).unwrap();
        assert_eq!(truncated.ids(), vec!["a".to_string(), "b".to_string()]);
        assert!(pool.truncated(4).is_err());
    }

    #[test]
    fn fan_out_order_is_stable() {
        let pool = mock_pool(&[
            ("a", r#"{"default": "from-a"}"#),
            ("b", r#"{"default": "from-b"}"#)]);
        let specs: Vec<CallSpec> = (0..6)
            .map(|i| CallSpec {
                agent: i % 2,
                messages: vec![ChatMessage::user(format!("p{i}"))],
                seed: i as u64,
            })
            .collect();
        let sequential: Vec<String> = complete_many(&pool, &specs, 1)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let concurrent: Vec<String> = complete_many(&pool, &specs, 4)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(sequential, concurrent);
        assert_eq!(sequential[0], "from-a");
        assert_eq!(sequential[1], "from-b");
    }
}
