//! Candidate-answer aggregation.
//!
//! Sampled sub-answers are finalized either by plain majority voting or by
//! first fanning the candidate set out to aggregator agents whose synthesized
//! refinements join the vote. The winning share doubles as the step
//! confidence, which is what terminal steps feed back as search reward; gold
//! answers are never consulted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{complete_many, AgentPool, CallSpec};
use crate::answer::{extract_answer, TaskKind};
use crate::config::AggregationMode;
use crate::error::{Error, Result};
use crate::search::Trajectory;
use crate::seed::{derive_seed, slot};
use crate::templates::TemplateStore;

const SYNTHESIZED_MARKER: &str = "### Synthesized Response:";

/// One candidate sub-answer, sampled or synthesized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub raw_text: String,
    /// Present iff answer extraction succeeded.
    pub normalized: Option<String>,
    pub source_agent: String,
    pub aggregated: bool,
}

impl CandidateAnswer {
    pub fn new(
        raw_text: impl Into<String>,
        source_agent: impl Into<String>,
        aggregated: bool,
        kind: TaskKind,
    ) -> Self {
        let raw_text = raw_text.into();
        let normalized = extract_answer(&raw_text, kind);
        Self {
            raw_text,
            normalized,
            source_agent: source_agent.into(),
            aggregated,
        }
    }
}

/// Outcome of a majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winner: String,
    /// Winner share of the counted (extractable) candidates.
    pub confidence: f64,
    pub tally: BTreeMap<String, u32>,
}

/// Majority vote over normalized answers. Candidates without an extractable
/// answer are excluded; ties break to the lexicographically smallest answer.
pub fn majority_vote(candidates: &[CandidateAnswer]) -> Result<VoteResult> {
    let mut tally: BTreeMap<String, u32> = BTreeMap::new();
    for candidate in candidates {
        if let Some(normalized) = &candidate.normalized {
            *tally.entry(normalized.clone()).or_insert(0) += 1;
        }
    }
    if tally.is_empty() {
        return Err(Error::VoteFailure);
    }
    let total: u32 = tally.values().sum();
    // BTreeMap iterates in key order, so requiring a strictly greater count
    // leaves the lexicographically smallest answer as the tie winner.
    let mut winner = None;
    let mut best = 0;
    for (answer, count) in &tally {
        if *count > best {
            best = *count;
            winner = Some(answer.clone());
        }
    }
    Ok(VoteResult {
        winner: winner.expect("non-empty tally"),
        confidence: f64::from(best) / f64::from(total),
        tally,
    })
}

/// Context needed to rebuild the query that produced the candidates.
#[derive(Debug, Clone)]
pub struct AggregationInput<'a> {
    /// Working problem text.
    pub question: &'a str,
    /// Rendered prior steps.
    pub trace: &'a str,
    pub sub_question: &'a str,
    pub step_index: usize,
    pub task_kind: TaskKind,
}

fn kind_suffix(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Numeric => "numeric",
        TaskKind::Boolean => "boolean",
    }
}

/// Fans the candidate set out to aggregator agents and returns their
/// synthesized refinements as new candidates. Replies missing the
/// synthesized-response marker are discarded, never fabricated.
pub fn aggregate_candidates(
    pool: &AgentPool,
    templates: &TemplateStore,
    input: &AggregationInput,
    candidates: &[CandidateAnswer],
    mode: AggregationMode,
    base_seed: u64,
    max_in_flight: usize,
) -> Result<Vec<CandidateAnswer>> {
    let agents: Vec<usize> = match mode {
        AggregationMode::None => return Ok(Vec::new()),
        AggregationMode::Single => vec![0],
        AggregationMode::Multi => (0..pool.len()).collect(),
    };
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to aggregate".into()));
    }

    let suffix = kind_suffix(input.task_kind);
    let step_index = input.step_index.to_string();
    let query_ctx: BTreeMap<&str, String> = [
        ("question", input.question.to_string()),
        ("trace", input.trace.to_string()),
        ("sub_question", input.sub_question.to_string()),
        ("step_index", step_index),
    ]
    .into_iter()
    .collect();
    let query = templates.render(&format!("sub_answer_{suffix}"), &query_ctx)?;

    let responses = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Response {}:\n\n{}\n", i + 1, c.raw_text))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt_ctx: BTreeMap<&str, String> =
        [("query", query), ("responses", responses)].into_iter().collect();
    let messages = templates.render_prompt(&format!("aggregate_{suffix}"), &prompt_ctx)?;

    let specs: Vec<CallSpec> = agents
        .iter()
        .map(|&agent| CallSpec {
            agent,
            messages: messages.clone(),
            seed: derive_seed(base_seed, &[slot::AGGREGATE, agent as u64]),
        })
        .collect();

    let mut aggregated = Vec::new();
    for (&agent, result) in agents.iter().zip(complete_many(pool, &specs, max_in_flight)) {
        let agent_id = &pool.profile(agent).id;
        match result {
            Ok(reply) => match parse_synthesized(&reply) {
                Some(text) => aggregated.push(CandidateAnswer::new(
                    text,
                    agent_id.clone(),
                    true,
                    input.task_kind,
                )),
                None => log::warn!(
                    "aggregator {agent_id}: reply missing synthesized-response marker, discarded"
                ),
            },
            Err(e) => log::warn!("aggregator {agent_id}: {e}"),
        }
    }
    Ok(aggregated)
}

fn parse_synthesized(reply: &str) -> Option<String> {
    reply
        .rfind(SYNTHESIZED_MARKER)
        .map(|i| reply[i + SYNTHESIZED_MARKER.len()..].trim().to_string())
        .filter(|text| !text.is_empty())
}

/// A finalized sub-answer and its vote confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedAnswer {
    /// Raw text of the first candidate whose answer equals the vote winner.
    pub text: String,
    pub winner: String,
    pub confidence: f64,
    /// True when the winning text came from an aggregator.
    pub from_aggregator: bool,
}

/// Finalizes a candidate set: aggregated refinements (if any) join the
/// original candidates and the union is voted together.
pub fn finalize_sub_answer(
    originals: &[CandidateAnswer],
    mode: AggregationMode,
    pool: &AgentPool,
    templates: &TemplateStore,
    input: &AggregationInput,
    base_seed: u64,
    max_in_flight: usize,
) -> Result<FinalizedAnswer> {
    if originals.is_empty() {
        return Err(Error::InvalidInput("no candidates to finalize".into()));
    }
    let mut all = originals.to_vec();
    if mode != AggregationMode::None {
        all.extend(aggregate_candidates(
            pool,
            templates,
            input,
            originals,
            mode,
            base_seed,
            max_in_flight,
        )?);
    }
    let vote = majority_vote(&all)?;
    let winning = all
        .iter()
        .find(|c| c.normalized.as_deref() == Some(vote.winner.as_str()))
        .expect("winner came from the candidate set");
    Ok(FinalizedAnswer {
        text: winning.raw_text.clone(),
        winner: vote.winner,
        confidence: vote.confidence,
        from_aggregator: winning.aggregated,
    })
}

/// Reward of a finished trajectory: the terminal step's vote confidence, or
/// zero when the trajectory produced no extractable final answer.
pub fn score_trajectory(trajectory: &Trajectory) -> f64 {
    if trajectory.final_answer.is_none() {
        return 0.0;
    }
    trajectory
        .actions
        .last()
        .map(|action| action.confidence)
        .unwrap_or(0.0)
}

/// Picks the run's final answer: terminal trajectories are grouped by
/// normalized answer, groups are scored by summed reward, and the best group
/// wins (ties break lexicographically).
pub fn select_final_answer(trajectories: &[Trajectory]) -> Option<String> {
    let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
    for trajectory in trajectories {
        if let Some(answer) = &trajectory.final_answer {
            *groups.entry(answer.as_str()).or_insert(0.0) += trajectory.reward;
        }
    }
    let mut best: Option<(&str, f64)> = None;
    for (answer, score) in &groups {
        if best.map_or(true, |(_, s)| *score > s) {
            best = Some((answer, *score));
        }
    }
    best.map(|(answer, _)| answer.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(answer: &str) -> CandidateAnswer {
        CandidateAnswer::new(
            format!("Some reasoning. The answer is {answer}."),
            "agent",
            false,
            TaskKind::Numeric,
        )
    }

    #[test]
    fn simple_majority() {
        let vote = majority_vote(&[candidate("7"), candidate("7"), candidate("5")]).unwrap();
        assert_eq!(vote.winner, "7");
        assert!((vote.confidence - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_lexicographically() {
        let a = CandidateAnswer::new("The answer is yes.", "x", false, TaskKind::Boolean);
        let b = CandidateAnswer::new("The answer is no.", "y", false, TaskKind::Boolean);
        let vote = majority_vote(&[a, b]).unwrap();
        assert_eq!(vote.winner, "no");
        assert!((vote.confidence - 0.5).abs() < 1e-12);
    }

    #[test]
    fn six_way_pool_confidence() {
        let candidates: Vec<CandidateAnswer> = ["4", "4", "4", "4", "9", "2"]
            .iter()
            .map(|a| candidate(a))
            .collect();
        let vote = majority_vote(&candidates).unwrap();
        assert_eq!(vote.winner, "4");
        assert!((vote.confidence - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unextractable_candidates_are_excluded() {
        let mut candidates = vec![candidate("3")];
        candidates.push(CandidateAnswer::new("no idea", "z", false, TaskKind::Numeric));
        let vote = majority_vote(&candidates).unwrap();
        assert_eq!(vote.winner, "3");
        assert!((vote.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_extractable_is_vote_failure() {
        let c = CandidateAnswer::new("no answer here", "z", false, TaskKind::Numeric);
        assert!(matches!(majority_vote(&[c]), Err(Error::VoteFailure)));
    }

    #[test]
    fn vote_is_permutation_invariant() {
        let candidates = vec![candidate("1"), candidate("2"), candidate("2"), candidate("3")];
        let forward = majority_vote(&candidates).unwrap();
        let mut reversed = candidates;
        reversed.reverse();
        let backward = majority_vote(&reversed).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn parse_synthesized_marker() {
        assert_eq!(
            parse_synthesized("### Thoughts: hm.\n### Synthesized Response: The answer is: 4"),
            Some("The answer is: 4".into())
        );
        assert_eq!(parse_synthesized("no marker at all"), None);
    }

    #[test]
    fn score_trajectory_cases() {
        use crate::actions::{ActionKind, ReasoningAction};
        let terminal = ReasoningAction {
            kind: ActionKind::SubQuestion,
            sub_question: "Now we can answer the question: q".into(),
            sub_answer: "The answer is 3.".into(),
            proposer_id: "a".into(),
            aggregated: false,
            confidence: 0.5,
        };
        let answered = Trajectory {
            node_path: vec![],
            actions: vec![terminal.clone()],
            final_answer: Some("3".into()),
            reward: 0.0,
        };
        assert!((score_trajectory(&answered) - 0.5).abs() < 1e-12);

        let unanswered = Trajectory {
            node_path: vec![],
            actions: vec![terminal],
            final_answer: None,
            reward: 0.0,
        };
        assert_eq!(score_trajectory(&unanswered), 0.0);
    }

    #[test]
    fn final_answer_grouping() {
        let t = |answer: Option<&str>, reward: f64| Trajectory {
            node_path: vec![],
            actions: vec![],
            final_answer: answer.map(str::to_string),
            reward,
        };
        assert_eq!(
            select_final_answer(&[t(Some("42"), 0.75)]),
            Some("42".into())
        );
        assert_eq!(
            select_final_answer(&[t(Some("7"), 0.5), t(Some("7"), 0.5), t(Some("9"), 0.9)]),
            Some("7".into())
        );
        assert_eq!(select_final_answer(&[]), None);
        assert_eq!(select_final_answer(&[t(None, 0.0)]), None);
    }

    #[test]
    fn final_answer_tie_is_lexicographic() {
        let t = |answer: &str, reward: f64| Trajectory {
            node_path: vec![],
            actions: vec![],
            final_answer: Some(answer.to_string()),
            reward,
        };
        assert_eq!(
            select_final_answer(&[t("b", 0.5), t("a", 0.5)]),
            Some("a".into())
        );
    }
}
