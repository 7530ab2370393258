//! Reasoning actions and their generation.
//!
//! An expansion proposes up to `n_q` new reasoning steps for the selected
//! state. The primary step kind pairs a sub-question with a sub-answer: one
//! scheduled proposer writes the sub-question, `n_a` scheduled agents sample
//! candidate sub-answers, and the candidates are finalized by vote (optionally
//! after aggregator refinement). Agent scheduling is pseudo-uniform: each
//! agent gets the floor share of slots and the remainder goes to agents drawn
//! uniformly without replacement.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{complete_many, AgentPool, CallSpec};
use crate::aggregation::{finalize_sub_answer, AggregationInput, CandidateAnswer};
use crate::answer::{extract_answer, TaskKind};
use crate::config::{ActionSet, ProposerMode, SearchConfig};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, slot};
use crate::templates::{ChatMessage, TemplateStore};

const TERMINAL_MARKER: &str = "now we can answer the question";
const FINAL_ANSWER_MARKER: &str = "the answer is";

/// The five reasoning-step kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// Propose a single next thought.
    OneStepThought,
    /// Propose all remaining steps; completes the solution.
    RemainingSteps,
    /// Propose the next sub-question along with its answer.
    SubQuestion,
    /// Answer the previous sub-question again.
    ReAnswer,
    /// Rephrase the root question; the subtree works on the new text.
    Rephrase,
}

impl ActionKind {
    fn label(self) -> &'static str {
        match self {
            ActionKind::OneStepThought => "thought",
            ActionKind::RemainingSteps => "remaining",
            ActionKind::SubQuestion => "sub_question",
            ActionKind::ReAnswer => "re_answer",
            ActionKind::Rephrase => "rephrase",
        }
    }
}

/// One reasoning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningAction {
    pub kind: ActionKind,
    /// Empty for kinds without a sub-question.
    pub sub_question: String,
    pub sub_answer: String,
    pub proposer_id: String,
    /// True when the finalized sub-answer text came from an aggregator.
    pub aggregated: bool,
    /// Winner share of the finalizing vote, in [0, 1].
    pub confidence: f64,
}

/// A terminal step ends the trajectory: either the sub-question carries the
/// answerable marker, the step proposes all remaining steps, or a bare step
/// (no sub-question) states the final answer outright.
pub fn is_terminal(action: &ReasoningAction) -> bool {
    if action.kind == ActionKind::RemainingSteps {
        return true;
    }
    if action.sub_question.to_lowercase().contains(TERMINAL_MARKER) {
        return true;
    }
    action.sub_question.trim().is_empty()
        && action.sub_answer.to_lowercase().contains(FINAL_ANSWER_MARKER)
}

/// The problem plus the reasoning steps taken so far along one trajectory.
#[derive(Debug, Clone)]
pub struct ReasoningState {
    pub problem: String,
    pub task_kind: TaskKind,
    pub steps: Vec<ReasoningAction>,
}

impl ReasoningState {
    pub fn new(problem: impl Into<String>, task_kind: TaskKind) -> Self {
        Self {
            problem: problem.into(),
            task_kind,
            steps: Vec::new(),
        }
    }

    pub fn from_actions<'a>(
        problem: impl Into<String>,
        task_kind: TaskKind,
        actions: impl IntoIterator<Item = &'a ReasoningAction>,
    ) -> Self {
        let mut state = Self::new(problem, task_kind);
        for action in actions {
            state.steps.push(action.clone());
        }
        state
    }

    pub fn child(&self, action: ReasoningAction) -> Self {
        let mut next = self.clone();
        next.steps.push(action);
        next
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    /// The problem text the subtree currently works on: the most recent
    /// rephrasing if any, otherwise the original question.
    pub fn working_problem(&self) -> &str {
        self.steps
            .iter()
            .rev()
            .find(|s| s.kind == ActionKind::Rephrase)
            .map(|s| s.sub_answer.as_str())
            .unwrap_or(&self.problem)
    }

    pub fn last_sub_question(&self) -> Option<&str> {
        self.steps
            .last()
            .filter(|s| s.kind == ActionKind::SubQuestion)
            .map(|s| s.sub_question.as_str())
    }

    fn rendered_steps(&self) -> impl Iterator<Item = &ReasoningAction> {
        self.steps.iter().filter(|s| s.kind != ActionKind::Rephrase)
    }

    /// 1-based index the next step will take in the prompt numbering.
    pub fn next_step_index(&self) -> usize {
        self.rendered_steps().count() + 1
    }

    /// Prior steps in the prompt format. Rephrasings are absorbed into the
    /// working problem rather than rendered. Each line ends with a newline so
    /// an empty trace contributes nothing.
    pub fn prompt_trace(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.rendered_steps().enumerate() {
            let index = i + 1;
            match step.kind {
                ActionKind::SubQuestion | ActionKind::ReAnswer => {
                    out.push_str(&format!(
                        "Question 1.{index}: {}\nAnswer 1.{index}: {}\n",
                        step.sub_question, step.sub_answer
                    ));
                }
                ActionKind::OneStepThought => {
                    out.push_str(&format!("Thought 1.{index}: {}\n", step.sub_answer));
                }
                ActionKind::RemainingSteps => {
                    out.push_str(&format!("Answer 1.{index}: {}\n", step.sub_answer));
                }
                ActionKind::Rephrase => unreachable!("rephrase steps are filtered"),
            }
        }
        out
    }

    /// Canonical rendering: distinct step lists produce distinct texts.
    pub fn render(&self) -> String {
        let mut out = format!("Problem: {}\n", self.problem);
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&render_action_line(i + 1, step));
        }
        out
    }
}

/// One line per action, used by canonical renders and diversity texts.
pub fn render_action_line(index: usize, action: &ReasoningAction) -> String {
    if action.sub_question.is_empty() {
        format!("{index}. [{}] {}\n", action.kind.label(), action.sub_answer)
    } else {
        format!(
            "{index}. [{}] {} -> {}\n",
            action.kind.label(),
            action.sub_question,
            action.sub_answer
        )
    }
}

/// Kinds legal at this state, in canonical order.
pub fn legal_kinds(state: &ReasoningState, set: ActionSet) -> Vec<ActionKind> {
    match set {
        ActionSet::Core => vec![ActionKind::RemainingSteps, ActionKind::SubQuestion],
        ActionSet::Extended => {
            let mut kinds = vec![
                ActionKind::OneStepThought,
                ActionKind::RemainingSteps,
                ActionKind::SubQuestion,
            ];
            if state.last_sub_question().is_some() {
                kinds.push(ActionKind::ReAnswer);
            }
            if state.steps.is_empty() {
                kinds.push(ActionKind::Rephrase);
            }
            kinds
        }
    }
}

/// Kinds assigned to the `n_q` expansion slots. The core set always expands
/// with the primary sub-question action; the extended set draws each slot
/// uniformly from the kinds legal at this state.
fn expansion_kinds(
    state: &ReasoningState,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<ActionKind> {
    match config.action_set {
        ActionSet::Core => vec![ActionKind::SubQuestion; config.n_q as usize],
        ActionSet::Extended => {
            let legal = legal_kinds(state, config.action_set);
            (0..config.n_q)
                .map(|_| legal[rng.random_range(0..legal.len())])
                .collect()
        }
    }
}

/// Uniform kind draw for rollout steps.
pub fn simulation_kind(
    state: &ReasoningState,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> ActionKind {
    let legal = legal_kinds(state, config.action_set);
    legal[rng.random_range(0..legal.len())]
}

/// Pseudo-uniform assignment of `n` generation slots over `m` agents: every
/// agent appears `n / m` times, and the `n % m` leftover slots go to agents
/// drawn uniformly without replacement.
pub fn select_llm(pool_size: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(pool_size >= 1 && n >= 1, "select_llm needs m >= 1 and n >= 1");
    let mut out = Vec::with_capacity(n);
    for _ in 0..(n / pool_size) {
        out.extend(0..pool_size);
    }
    let extra = n % pool_size;
    if extra > 0 {
        let mut agents: Vec<usize> = (0..pool_size).collect();
        for i in 0..extra {
            let j = rng.random_range(i..pool_size);
            agents.swap(i, j);
            out.push(agents[i]);
        }
    }
    out
}

/// Counters accumulated while generating actions.
#[derive(Debug, Default, Clone, Copy)]
pub struct GenerationStats {
    pub failed_calls: u32,
    pub dropped_slots: u32,
}

/// Everything action generation needs besides the state.
pub struct ActionContext<'a> {
    pub pool: &'a AgentPool,
    pub templates: &'a TemplateStore,
    pub config: &'a SearchConfig,
}

impl ActionContext<'_> {
    fn proposer_pool_size(&self) -> usize {
        match self.config.proposer_mode {
            ProposerMode::Single => 1,
            ProposerMode::Multi => self.pool.len(),
        }
    }

    fn prompt_context(&self, state: &ReasoningState) -> BTreeMap<&'static str, String> {
        [
            ("question", state.working_problem().to_string()),
            ("trace", state.prompt_trace()),
            ("step_index", state.next_step_index().to_string()),
        ]
        .into_iter()
        .collect()
    }

    fn template_id(&self, base: &str, kind: TaskKind) -> String {
        match kind {
            TaskKind::Numeric => format!("{base}_numeric"),
            TaskKind::Boolean => format!("{base}_boolean"),
        }
    }
}

struct SlotPlan {
    kind: ActionKind,
    sub_question_agent: usize,
    candidate_agents: Vec<usize>,
}

/// Generates up to `n_q` new actions for the state (fewer when slots fail or
/// deduplicate). Scheduling and per-call seeds are fixed before any call, so
/// failures and concurrency never shift later calls.
pub fn generate_actions(
    state: &ReasoningState,
    ctx: &ActionContext,
    base_seed: u64,
) -> (Vec<ReasoningAction>, GenerationStats) {
    let config = ctx.config;
    let n_q = config.n_q as usize;
    let n_a = config.n_a as usize;
    let pool_size = ctx.proposer_pool_size();
    let mut stats = GenerationStats::default();

    let mut schedule_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &[slot::SCHEDULE]));
    let kinds = expansion_kinds(state, config, &mut schedule_rng);
    let plans: Vec<SlotPlan> = kinds
        .into_iter()
        .map(|kind| SlotPlan {
            kind,
            sub_question_agent: select_llm(pool_size, 1, &mut schedule_rng)[0],
            candidate_agents: select_llm(pool_size, n_a, &mut schedule_rng),
        })
        .collect();

    // Phase 1: sub-question calls for the slots that need one.
    let prompt_ctx = ctx.prompt_context(state);
    let mut sub_questions: Vec<Option<String>> = vec![None; n_q];
    let mut phase1 = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        if plan.kind != ActionKind::SubQuestion {
            continue;
        }
        let template = ctx.template_id("sub_question", state.task_kind);
        match ctx.templates.render_prompt(&template, &prompt_ctx) {
            Ok(messages) => phase1.push((
                i,
                CallSpec {
                    agent: plan.sub_question_agent,
                    messages,
                    seed: derive_seed(base_seed, &[i as u64, slot::SUB_QUESTION]),
                },
            )),
            Err(e) => {
                log::warn!("slot {i}: {e}");
                stats.failed_calls += 1;
            }
        }
    }
    let specs: Vec<CallSpec> = phase1.iter().map(|(_, s)| clone_spec(s)).collect();
    for ((i, _), result) in phase1
        .iter()
        .zip(complete_many(ctx.pool, &specs, config.max_in_flight))
    {
        match result {
            Ok(response) => {
                let question = parse_sub_question(&response);
                if question.is_empty() {
                    log::warn!("slot {i}: sub-question parse failure, dropped");
                    stats.failed_calls += 1;
                } else {
                    sub_questions[*i] = Some(question);
                }
            }
            Err(e) => {
                log::warn!("slot {i}: {e}");
                stats.failed_calls += 1;
            }
        }
    }

    // Phase 2: candidate sub-answers (and the single-call kinds).
    let mut actions: Vec<Option<ReasoningAction>> = (0..n_q).map(|_| None).collect();
    let mut phase2: Vec<(usize, Vec<CallSpec>)> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let sub_question = match plan.kind {
            ActionKind::SubQuestion => match &sub_questions[i] {
                Some(q) => q.clone(),
                None => {
                    stats.dropped_slots += 1;
                    continue;
                }
            },
            ActionKind::ReAnswer => match state.last_sub_question() {
                Some(q) => q.to_string(),
                None => {
                    stats.dropped_slots += 1;
                    continue;
                }
            },
            ActionKind::RemainingSteps => String::new(),
            ActionKind::OneStepThought | ActionKind::Rephrase => {
                let seed = derive_seed(base_seed, &[i as u64, slot::CANDIDATE, 0]);
                match generate_action_variant(plan.kind, state, plan.sub_question_agent, ctx, seed)
                {
                    Ok(action) => actions[i] = Some(action),
                    Err(e) => {
                        log::warn!("slot {i}: {e}");
                        stats.failed_calls += 1;
                        stats.dropped_slots += 1;
                    }
                }
                continue;
            }
        };

        let template = match plan.kind {
            ActionKind::RemainingSteps => ctx.template_id("remaining_steps", state.task_kind),
            _ => ctx.template_id("sub_answer", state.task_kind),
        };
        let mut answer_ctx = prompt_ctx.clone();
        answer_ctx.insert("sub_question", sub_question.clone());
        let messages = match ctx.templates.render_prompt(&template, &answer_ctx) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("slot {i}: {e}");
                stats.dropped_slots += 1;
                continue;
            }
        };
        let specs: Vec<CallSpec> = plan
            .candidate_agents
            .iter()
            .enumerate()
            .map(|(j, &agent)| CallSpec {
                agent,
                messages: messages.clone(),
                seed: derive_seed(base_seed, &[i as u64, slot::CANDIDATE, j as u64 + 1]),
            })
            .collect();
        sub_questions[i] = Some(sub_question);
        phase2.push((i, specs));
    }

    let flat: Vec<CallSpec> = phase2
        .iter()
        .flat_map(|(_, specs)| specs.iter().map(clone_spec))
        .collect();
    let mut results = complete_many(ctx.pool, &flat, config.max_in_flight).into_iter();

    // Phase 3: finalize each slot's candidates in slot order.
    for (i, specs) in &phase2 {
        let plan = &plans[*i];
        let mut candidates = Vec::with_capacity(specs.len());
        for spec in specs {
            match results.next().expect("one result per spec") {
                Ok(response) => candidates.push(CandidateAnswer::new(
                    parse_sub_answer(&response),
                    ctx.pool.profile(spec.agent).id.clone(),
                    false,
                    state.task_kind,
                )),
                Err(e) => {
                    log::warn!("slot {i} candidate: {e}");
                    stats.failed_calls += 1;
                }
            }
        }
        if candidates.is_empty() {
            stats.dropped_slots += 1;
            continue;
        }
        let sub_question = sub_questions[*i].clone().unwrap_or_default();
        let input = AggregationInput {
            question: state.working_problem(),
            trace: &state.prompt_trace(),
            sub_question: &sub_question,
            step_index: state.next_step_index(),
            task_kind: state.task_kind,
        };
        match finalize_sub_answer(
            &candidates,
            config.aggregation_mode,
            ctx.pool,
            ctx.templates,
            &input,
            derive_seed(base_seed, &[*i as u64]),
            config.max_in_flight,
        ) {
            Ok(finalized) => {
                let proposer_id = match plan.kind {
                    ActionKind::SubQuestion => {
                        ctx.pool.profile(plan.sub_question_agent).id.clone()
                    }
                    _ => candidates
                        .iter()
                        .find(|c| c.normalized.as_deref() == Some(finalized.winner.as_str()))
                        .map(|c| c.source_agent.clone())
                        .unwrap_or_else(|| candidates[0].source_agent.clone()),
                };
                actions[*i] = Some(ReasoningAction {
                    kind: plan.kind,
                    sub_question,
                    sub_answer: finalized.text,
                    proposer_id,
                    aggregated: finalized.from_aggregator,
                    confidence: finalized.confidence,
                });
            }
            Err(e) => {
                log::warn!("slot {i}: {e}");
                stats.dropped_slots += 1;
            }
        }
    }

    (dedup_actions(actions.into_iter().flatten()), stats)
}

fn clone_spec(spec: &CallSpec) -> CallSpec {
    CallSpec {
        agent: spec.agent,
        messages: spec.messages.clone(),
        seed: spec.seed,
    }
}

/// Removes duplicate actions, keeping the first. The key is the normalized
/// sub-question; kinds without one deduplicate on their answer text instead.
fn dedup_actions(actions: impl Iterator<Item = ReasoningAction>) -> Vec<ReasoningAction> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for action in actions {
        let question_key = normalize_for_dedup(&action.sub_question);
        let key = if question_key.is_empty() {
            format!("{}|{}", action.kind.label(), normalize_for_dedup(&action.sub_answer))
        } else {
            question_key
        };
        if seen.insert(key) {
            out.push(action);
        }
    }
    out
}

/// Lowercased, whitespace-collapsed dedup key.
pub fn normalize_for_dedup(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Generates a single action of the given kind with one proposer and one
/// sampled answer. This is the rollout policy's step generator and the
/// single-call path for thought/rephrase kinds.
pub fn generate_action_variant(
    kind: ActionKind,
    state: &ReasoningState,
    agent: usize,
    ctx: &ActionContext,
    base_seed: u64,
) -> Result<ReasoningAction> {
    let prompt_ctx = ctx.prompt_context(state);
    let proposer_id = ctx.pool.profile(agent).id.clone();
    let complete = |template: &str, extra: Option<(&'static str, String)>, tag: u64| {
        let mut context = prompt_ctx.clone();
        if let Some((key, value)) = extra {
            context.insert(key, value);
        }
        let messages: Vec<ChatMessage> = ctx.templates.render_prompt(template, &context)?;
        ctx.pool
            .complete(agent, &messages, derive_seed(base_seed, &[tag]))
    };

    let parse_failure = || Error::InvalidInput(format!("{}: unparseable response", kind.label()));

    match kind {
        ActionKind::SubQuestion => {
            let template = ctx.template_id("sub_question", state.task_kind);
            let question = parse_sub_question(&complete(&template, None, slot::SUB_QUESTION)?);
            if question.is_empty() {
                return Err(parse_failure());
            }
            let template = ctx.template_id("sub_answer", state.task_kind);
            let answer = parse_sub_answer(&complete(
                &template,
                Some(("sub_question", question.clone())),
                slot::CANDIDATE,
            )?);
            if answer.is_empty() {
                return Err(parse_failure());
            }
            let confidence = answer_confidence(&answer, state.task_kind);
            Ok(ReasoningAction {
                kind,
                sub_question: question,
                sub_answer: answer,
                proposer_id,
                aggregated: false,
                confidence,
            })
        }
        ActionKind::ReAnswer => {
            let question = state
                .last_sub_question()
                .ok_or_else(|| {
                    Error::InvalidInput("re-answer requires a preceding sub-question".into())
                })?
                .to_string();
            let template = ctx.template_id("sub_answer", state.task_kind);
            let answer = parse_sub_answer(&complete(
                &template,
                Some(("sub_question", question.clone())),
                slot::CANDIDATE,
            )?);
            if answer.is_empty() {
                return Err(parse_failure());
            }
            let confidence = answer_confidence(&answer, state.task_kind);
            Ok(ReasoningAction {
                kind,
                sub_question: question,
                sub_answer: answer,
                proposer_id,
                aggregated: false,
                confidence,
            })
        }
        ActionKind::RemainingSteps => {
            let template = ctx.template_id("remaining_steps", state.task_kind);
            let answer = parse_sub_answer(&complete(&template, None, slot::CANDIDATE)?);
            if answer.is_empty() {
                return Err(parse_failure());
            }
            let confidence = answer_confidence(&answer, state.task_kind);
            Ok(ReasoningAction {
                kind,
                sub_question: String::new(),
                sub_answer: answer,
                proposer_id,
                aggregated: false,
                confidence,
            })
        }
        ActionKind::OneStepThought => {
            let thought = first_sentence(&complete("one_step_thought", None, slot::CANDIDATE)?);
            if thought.is_empty() {
                return Err(parse_failure());
            }
            Ok(ReasoningAction {
                kind,
                sub_question: String::new(),
                sub_answer: thought,
                proposer_id,
                aggregated: false,
                confidence: 1.0,
            })
        }
        ActionKind::Rephrase => {
            let rephrased = parse_rephrase(&complete("rephrase", None, slot::CANDIDATE)?);
            if rephrased.is_empty() {
                return Err(parse_failure());
            }
            Ok(ReasoningAction {
                kind,
                sub_question: String::new(),
                sub_answer: rephrased,
                proposer_id,
                aggregated: false,
                confidence: 1.0,
            })
        }
    }
}

fn answer_confidence(answer: &str, kind: TaskKind) -> f64 {
    if extract_answer(answer, kind).is_some() {
        1.0
    } else {
        0.0
    }
}

/// First line of the response, stripped of an echoed numbering prefix and of
/// anything the model kept generating past the question.
pub fn parse_sub_question(response: &str) -> String {
    let text = response.trim();
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let line = strip_numbering(line, "Question");
    line.trim().to_string()
}

/// Response text up to the point where the model starts a new step.
pub fn parse_sub_answer(response: &str) -> String {
    let text = response.trim();
    let cut = text.find("\nQuestion 1.").unwrap_or(text.len());
    let text = &text[..cut];
    strip_numbering(text, "Answer").trim().to_string()
}

fn strip_numbering(text: &str, marker: &str) -> &str {
    let trimmed = text.trim_start();
    if let Some(rest) = trimmed.strip_prefix(marker) {
        if let Some(colon) = rest.find(':') {
            if rest[..colon].chars().all(|c| {
                c.is_ascii_digit() || c == '.' || c == ' ' || c == '1'
            }) {
                return &rest[colon + 1..];
            }
        }
    }
    text
}

fn first_sentence(response: &str) -> String {
    let text = response.trim();
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    match line.find(". ") {
        Some(i) => line[..=i].trim().to_string(),
        None => line.trim().to_string(),
    }
}

fn parse_rephrase(response: &str) -> String {
    let text = response.trim();
    let text = text.strip_prefix("Rephrased question:").unwrap_or(text);
    text.trim().to_string()
}
