//! Deterministic scripted agent backend.
//!
//! A mock script is an ordered list of rules; the first rule whose pattern
//! matches the prompt decides the response. The output is a pure function of
//! (script, messages, seed), which is what golden tests and the byte-identical
//! determinism guarantees rely on.
//!
//! Besides fixed responses, rules may pick a seed-weighted choice or invoke a
//! builtin. The `chain_arithmetic` builtin plays a reasoning agent for the
//! synthetic arithmetic dataset: it parses the problem out of the prompt,
//! answers sub-questions correctly with probability `accuracy` (seed-derived),
//! and in aggregator prompts synthesizes the candidate that matches its own
//! computation.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use crate::answer::{extract_answer, TaskKind};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, splitmix64, unit_f64};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    #[serde(default)]
    rules: Vec<RawRule>,
    #[serde(default)]
    default: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    pattern: String,
    #[serde(default)]
    regex: bool,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    choices: Option<Vec<RawChoice>>,
    #[serde(default)]
    builtin: Option<BuiltinKind>,
    #[serde(default = "default_accuracy")]
    accuracy: f64,
}

fn default_accuracy() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChoice {
    weight: f64,
    response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKind {
    /// Solves chained integer arithmetic problems embedded in the prompt.
    ChainArithmetic,
    /// Aggregator that echoes the first listed response.
    CopyFirstResponse,
}

#[derive(Debug)]
enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(text),
        }
    }
}

#[derive(Debug)]
enum Behavior {
    Respond(String),
    Choices(Vec<(f64, String)>),
    Builtin { kind: BuiltinKind, accuracy: f64 },
}

#[derive(Debug)]
struct Rule {
    matcher: Matcher,
    behavior: Behavior,
}

/// A compiled mock script.
#[derive(Debug)]
pub struct MockScript {
    rules: Vec<Rule>,
    default: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("mock script {}: {e}", path.display())))?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("mock script {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawScript =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, rule) in raw.rules.into_iter().enumerate() {
            let matcher = if rule.regex {
                Matcher::Pattern(
                    Regex::new(&rule.pattern)
                        .map_err(|e| Error::Config(format!("rule {i}: bad regex: {e}")))?,
                )
            } else {
                Matcher::Substring(rule.pattern)
            };
            let behavior = match (rule.response, rule.choices, rule.builtin) {
                (Some(r), None, None) => Behavior::Respond(r),
                (None, Some(choices), None) => {
                    if choices.is_empty() || choices.iter().any(|c| c.weight < 0.0) {
                        return Err(Error::Config(format!(
                            "rule {i}: choices must be non-empty with non-negative weights"
                        )));
                    }
                    Behavior::Choices(choices.into_iter().map(|c| (c.weight, c.response)).collect())
                }
                (None, None, Some(kind)) => Behavior::Builtin {
                    kind,
                    accuracy: rule.accuracy,
                },
                _ => {
                    return Err(Error::Config(format!(
                        "rule {i}: exactly one of response/choices/builtin required"
                    )))
                }
            };
            rules.push(Rule { matcher, behavior });
        }
        Ok(Self {
            rules,
            default: raw.default,
        })
    }

    /// Produces the scripted response for a prompt. First matching rule wins;
    /// no match falls back to the script default; neither is a configuration
    /// error.
    pub fn respond(&self, prompt: &str, seed: u64) -> Result<String> {
        for rule in &self.rules {
            if rule.matcher.matches(prompt) {
                return match &rule.behavior {
                    Behavior::Respond(text) => Ok(text.clone()),
                    Behavior::Choices(choices) => Ok(pick_choice(choices, seed)),
                    Behavior::Builtin { kind, accuracy } => {
                        run_builtin(*kind, prompt, seed, *accuracy)
                    }
                };
            }
        }
        self.default.clone().ok_or_else(|| {
            Error::Config("mock script matched no rule and has no default".to_string())
        })
    }
}

fn pick_choice(choices: &[(f64, String)], seed: u64) -> String {
    let total: f64 = choices.iter().map(|(w, _)| w).sum();
    let mut u = unit_f64(derive_seed(seed, &[0x10])) * total;
    for (w, text) in choices {
        if u < *w {
            return text.clone();
        }
        u -= w;
    }
    choices.last().unwrap().1.clone()
}

// ---------------------------------------------------------------------------
// chain-arithmetic builtin
// ---------------------------------------------------------------------------

static PROBLEM_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Question 1: (.+)$").unwrap());
static CHAIN_START: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Start with (-?\d+)").unwrap());
static CHAIN_OP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(Add|Subtract|Multiply by) (\d+)").unwrap());
static HANGING_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Answer 1\.(\d+):\s*$").unwrap());
static HANGING_QUESTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Question 1\.(\d+):\s*$").unwrap());
static SUB_QUESTION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Question 1\.(\d+): (.+)$").unwrap());
static PREFIX_QUESTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"after the first (\d+) operations").unwrap());
static RESPONSE_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Response (\d+):").unwrap());

const QUERY_MARKER: &str = "[Here is the user query that was fed into those AI assistants]:";
const RESPONSES_MARKER: &str = "[Here are the responses from various AI assistants]:";

#[derive(Debug)]
struct ChainProblem {
    start: i64,
    ops: Vec<(char, i64)>,
}

impl ChainProblem {
    fn parse(text: &str) -> Option<Self> {
        let start_match = CHAIN_START.captures(text)?;
        let start: i64 = start_match[1].parse().ok()?;
        let tail = &text[start_match.get(0).unwrap().end()..];
        let ops = CHAIN_OP
            .captures_iter(tail)
            .map(|c| {
                let op = match &c[1] {
                    "Add" => '+',
                    "Subtract" => '-',
                    _ => '*',
                };
                (op, c[2].parse::<i64>().unwrap_or(0))
            })
            .collect();
        Some(Self { start, ops })
    }

    fn eval(&self, upto: usize) -> i64 {
        let mut v = self.start;
        for (op, k) in self.ops.iter().take(upto) {
            v = match op {
                '+' => v + k,
                '-' => v - k,
                _ => v * k,
            };
        }
        v
    }
}

/// Applies the accuracy coin: returns the true value or a deterministic
/// perturbation of it.
fn jitter(value: i64, seed: u64, accuracy: f64) -> i64 {
    if unit_f64(derive_seed(seed, &[0x20])) < accuracy {
        value
    } else {
        value + 1 + (splitmix64(derive_seed(seed, &[0x21])) % 9) as i64
    }
}

fn run_builtin(kind: BuiltinKind, prompt: &str, seed: u64, accuracy: f64) -> Result<String> {
    match kind {
        BuiltinKind::ChainArithmetic => chain_arithmetic(prompt, seed, accuracy),
        BuiltinKind::CopyFirstResponse => copy_first_response(prompt),
    }
}

fn no_behavior(what: &str) -> Error {
    Error::Config(format!("chain_arithmetic builtin: cannot handle prompt ({what})"))
}

fn chain_arithmetic(prompt: &str, seed: u64, accuracy: f64) -> Result<String> {
    if let Some(idx) = prompt.rfind(RESPONSES_MARKER) {
        // Aggregator prompt: the live query sits after the last marker pair
        // (the template's worked example uses different numbering).
        let query_start = prompt[..idx]
            .rfind(QUERY_MARKER)
            .map(|i| i + QUERY_MARKER.len())
            .unwrap_or(0);
        let query = &prompt[query_start..idx];
        let responses = &prompt[idx + RESPONSES_MARKER.len()..];
        return aggregate_chain(query, responses, seed, accuracy);
    }

    let problem_text = PROBLEM_LINE
        .captures_iter(prompt)
        .last()
        .map(|c| c[1].to_string())
        .ok_or_else(|| no_behavior("no problem line"))?;
    let problem = ChainProblem::parse(&problem_text).ok_or_else(|| no_behavior("unparseable"))?;
    let total = problem.ops.len();

    if HANGING_ANSWER.is_match(prompt) {
        let question = SUB_QUESTION_LINE
            .captures_iter(prompt)
            .last()
            .map(|c| c[2].to_string())
            .unwrap_or_default();
        let value = target_value(&problem, &question);
        let out = jitter(value, seed, accuracy);
        return Ok(if question.to_lowercase().contains("now we can answer") {
            format!("Carrying out every operation in order gives {out}. The answer is {out}.")
        } else {
            format!("Evaluating that prefix of the operations gives {out}. The answer is {out}.")
        });
    }

    if let Some(caps) = HANGING_QUESTION.captures(prompt) {
        let k: usize = caps[1].parse().unwrap_or(1);
        let go_terminal = k > total || unit_f64(derive_seed(seed, &[0x22])) < 0.5;
        return Ok(if go_terminal {
            "Now we can answer the question: What is the final result?".to_string()
        } else {
            format!("What is the value after the first {k} operations?")
        });
    }

    if prompt.contains("propose all of the remaining steps") {
        let out = jitter(problem.eval(total), seed, accuracy);
        return Ok(format!(
            "Applying each remaining operation in order gives {out}. The answer is {out}."
        ));
    }

    if prompt.contains("propose the single next reasoning step") {
        let v = problem.eval(1);
        return Ok(format!("The value after the first operation is {v}."));
    }

    if prompt.contains("Rephrased question:") {
        let ops = problem
            .ops
            .iter()
            .map(|(op, k)| match op {
                '+' => format!("Add {k}"),
                '-' => format!("Subtract {k}"),
                _ => format!("Multiply by {k}"),
            })
            .collect::<Vec<_>>()
            .join(". ");
        return Ok(format!(
            "Start with {}. {}. Applying the operations one at a time, what is the final result?",
            problem.start, ops
        ));
    }

    Err(no_behavior("unknown role"))
}

fn target_value(problem: &ChainProblem, question: &str) -> i64 {
    if let Some(caps) = PREFIX_QUESTION.captures(question) {
        let j: usize = caps[1].parse().unwrap_or(0);
        problem.eval(j.min(problem.ops.len()))
    } else {
        problem.eval(problem.ops.len())
    }
}

fn split_responses(responses: &str) -> Vec<String> {
    let headers: Vec<_> = RESPONSE_HEADER.find_iter(responses).collect();
    let mut blocks = Vec::with_capacity(headers.len());
    for (i, header) in headers.iter().enumerate() {
        let end = headers
            .get(i + 1)
            .map(|next| next.start())
            .unwrap_or(responses.len());
        blocks.push(responses[header.end()..end].trim().to_string());
    }
    blocks
}

fn aggregate_chain(query: &str, responses: &str, seed: u64, accuracy: f64) -> Result<String> {
    let problem_text = PROBLEM_LINE
        .captures_iter(query)
        .last()
        .map(|c| c[1].to_string())
        .ok_or_else(|| no_behavior("aggregator query lacks problem"))?;
    let problem = ChainProblem::parse(&problem_text).ok_or_else(|| no_behavior("unparseable"))?;
    let question = SUB_QUESTION_LINE
        .captures_iter(query)
        .last()
        .map(|c| c[2].to_string())
        .unwrap_or_default();
    let target = target_value(&problem, &question).to_string();

    let blocks = split_responses(responses);
    let answers: Vec<Option<String>> = blocks
        .iter()
        .map(|b| extract_answer(b, TaskKind::Numeric))
        .collect();

    let capable = unit_f64(derive_seed(seed, &[0x23])) < accuracy;
    let chosen = if capable && answers.iter().flatten().any(|a| *a == target) {
        Some(target)
    } else {
        answers.iter().flatten().next().cloned()
    };

    Ok(match chosen {
        Some(answer) => format!(
            "### Thoughts: Compared every candidate against a direct computation.\n\
             ### Synthesized Response: The requested value is {answer}. The answer is: {answer}"
        ),
        None => "### Thoughts: No candidate contained an extractable answer.\n\
                 ### Synthesized Response: The candidates do not settle on a value."
            .to_string(),
    })
}

fn copy_first_response(prompt: &str) -> Result<String> {
    let idx = prompt
        .rfind(RESPONSES_MARKER)
        .ok_or_else(|| Error::Config("copy_first_response: no responses section".into()))?;
    let blocks = split_responses(&prompt[idx + RESPONSES_MARKER.len()..]);
    let first = blocks
        .first()
        .ok_or_else(|| Error::Config("copy_first_response: empty responses section".into()))?;
    Ok(format!(
        "### Thoughts: Echoing the first response.\n### Synthesized Response: {first}"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_match_wins_verbatim() {
        let script = MockScript::parse(
            r#"{"rules": [
                {"pattern": "decompose", "response": "Question 1.1: first"},
                {"pattern": "decompose", "response": "never"}
            ]}"#,
        )
        .unwrap();
        let out = script.respond("please decompose it into sub-questions", 0).unwrap();
        assert_eq!(out, "Question 1.1: first");
    }

    #[test]
    fn no_match_no_default_is_config_error() {
        let script = MockScript::parse(r#"{"rules": [{"pattern": "x", "response": "y"}]}"#).unwrap();
        assert!(matches!(script.respond("zzz", 0), Err(Error::Config(_))));
    }

    #[test]
    fn default_catches_everything() {
        let script = MockScript::parse(r#"{"default": "fallback"}"#).unwrap();
        assert_eq!(script.respond("anything", 7).unwrap(), "fallback");
    }

    #[test]
    fn respond_is_pure_in_seed_and_prompt() {
        let script = MockScript::parse(
            r#"{"rules": [{"pattern": ".", "regex": true,
                "choices": [{"weight": 0.5, "response": "a"}, {"weight": 0.5, "response": "b"}]}]}"#,
        )
        .unwrap();
        for seed in 0..50 {
            assert_eq!(
                script.respond("p", seed).unwrap(),
                script.respond("p", seed).unwrap()
            );
        }
        let distinct: std::collections::BTreeSet<String> =
            (0..50).map(|s| script.respond("p", s).unwrap()).collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn chain_problem_parses_and_evaluates() {
        let p = ChainProblem::parse("Start with 7. Add 5. Multiply by 3. Subtract 4. What is the final result?")
            .unwrap();
        assert_eq!(p.eval(0), 7);
        assert_eq!(p.eval(1), 12);
        assert_eq!(p.eval(2), 36);
        assert_eq!(p.eval(3), 32);
    }

    #[test]
    fn chain_builtin_answers_final_question() {
        let prompt = "Given a question, please decompose it into sub-questions.\n\n\
            Question 1: Start with 7. Add 5. Multiply by 3. Subtract 4. What is the final result?\n\
            Question 1.1: Now we can answer the question: What is the final result?\n\
            Answer 1.1:";
        let out = chain_arithmetic(prompt, 3, 1.0).unwrap();
        assert!(out.contains("The answer is 32."), "{out}");
    }

    #[test]
    fn chain_builtin_prefix_question() {
        let prompt = "Question 1: Start with 2. Add 3. Multiply by 4. What is the final result?\n\
            Question 1.1: What is the value after the first 1 operations?\n\
            Answer 1.1:";
        let out = chain_arithmetic(prompt, 0, 1.0).unwrap();
        assert!(out.contains("The answer is 5."), "{out}");
    }

    #[test]
    fn inaccurate_agent_is_deterministically_wrong() {
        let prompt = "Question 1: Start with 2. Add 3. What is the final result?\n\
            Question 1.1: Now we can answer the question: What is the final result?\n\
            Answer 1.1:";
        let a = chain_arithmetic(prompt, 9, 0.0).unwrap();
        let b = chain_arithmetic(prompt, 9, 0.0).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains("The answer is 5."), "{a}");
    }

    #[test]
    fn aggregator_picks_matching_candidate() {
        let prompt = format!(
            "ICL example omitted\n{QUERY_MARKER}\n\n\
             Question 1: Start with 2. Add 3. What is the final result?\n\
             Question 1.1: Now we can answer the question: What is the final result?\n\
             Answer 1.1:\n\n{RESPONSES_MARKER}\n\n\
             Response 1:\n\nIt is 9. The answer is 9.\n\n\
             Response 2:\n\nAdding gives 5. The answer is 5.\n"
        );
        let out = chain_arithmetic(&prompt, 0, 1.0).unwrap();
        assert!(out.contains("### Synthesized Response:"));
        assert!(out.contains("The answer is: 5"), "{out}");
    }

    #[test]
    fn copy_first_response_echoes() {
        let prompt = format!(
            "{RESPONSES_MARKER}\n\nResponse 1:\n\nAlpha. The answer is 1.\n\nResponse 2:\n\nBeta. The answer is 2.\n"
        );
        let out = copy_first_response(&prompt).unwrap();
        assert!(out.contains("### Synthesized Response: Alpha. The answer is 1."));
    }
}
