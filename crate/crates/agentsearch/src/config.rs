//! Search configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which reasoning-step kinds an expansion may propose.
///
/// `Core` is the two-action setup (decompose into a sub-question, or propose
/// all remaining steps). `Extended` adds one-step thoughts, re-answering the
/// previous sub-question, and rephrasing the root question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActionSet {
    #[default]
    Core,
    Extended,
}

/// How candidate sub-answers are finalized at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AggregationMode {
    /// Majority voting over the sampled candidates only.
    #[default]
    #[serde(rename = "none")]
    None,
    /// One designated agent (the first in the pool) synthesizes a refinement
    /// that joins the vote.
    #[serde(rename = "single_aggregator")]
    Single,
    /// Every pool agent synthesizes a refinement; all join the vote.
    #[serde(rename = "multi_aggregator")]
    Multi,
}

/// Whether proposals are drawn from the whole pool or only its first agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProposerMode {
    Single,
    #[default]
    Multi,
}

/// All knobs of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Number of full search iterations (select, expand, simulate, backpropagate).
    pub rollouts: u32,
    /// Sub-questions proposed per expansion.
    pub n_q: u32,
    /// Candidate sub-answers sampled per sub-question.
    pub n_a: u32,
    /// Maximum tree depth (reasoning steps per trajectory).
    pub max_depth: u32,
    /// Exploration constant of the UCT selection rule.
    pub c: f64,
    pub action_set: ActionSet,
    pub aggregation_mode: AggregationMode,
    pub proposer_mode: ProposerMode,
    pub seed: u64,
    /// Upper bound on concurrent agent calls during fan-out. Results are
    /// committed in slot order, so this never affects outputs.
    pub max_in_flight: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rollouts: 8,
            n_q: 4,
            n_a: 4,
            max_depth: 5,
            c: 1.4,
            action_set: ActionSet::Core,
            aggregation_mode: AggregationMode::None,
            proposer_mode: ProposerMode::Multi,
            seed: 0,
            max_in_flight: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts < 1 {
            return Err(Error::Config("rollouts must be >= 1".into()));
        }
        if self.n_q < 1 || self.n_a < 1 {
            return Err(Error::Config("n_q and n_a must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config(
                "exploration constant c must be strictly positive".into(),
            ));
        }
        if self.max_in_flight < 1 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: SearchConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = SearchConfig::default();
        assert_eq!(c.rollouts, 8);
        assert_eq!(c.n_q, 4);
        assert_eq!(c.n_a, 4);
        assert_eq!(c.max_depth, 5);
        assert!((c.c - 1.4).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_fails_loudly() {
        let err = serde_json::from_str::<SearchConfig>(r#"{"rollout_count": 8}"#);
        assert!(err.is_err());
    }

    #[test]
    fn zero_c_rejected() {
        let config = SearchConfig {
            c: 0.0,
            ..SearchConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn mode_spellings() {
        let config: SearchConfig = serde_json::from_str(
            r#"{"aggregation_mode": "multi_aggregator", "proposer_mode": "single", "action_set": "extended"}"#,
        )
        .unwrap();
        assert_eq!(config.aggregation_mode, AggregationMode::Multi);
        assert_eq!(config.proposer_mode, ProposerMode::Single);
        assert_eq!(config.action_set, ActionSet::Extended);
    }
}
