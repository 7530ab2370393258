//! Answer extraction and normalization.
//!
//! Completions end with a marker sentence ("The answer is ...", or a boxed
//! value in math-style output). Extraction pulls that span out and normalizes
//! it so that votes and gold-answer matching compare canonical forms:
//! numeric answers become reduced rationals where possible, boolean answers
//! collapse to `yes`/`no`.

use std::str::FromStr;
use std::sync::LazyLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Answer type of a task; decides how raw answer text is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Numeric,
    Boolean,
}

static ANSWER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the\s+answer\s+is\s*:?\s*").unwrap());
static BOXED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\boxed\{([^{}]*)\}").unwrap());
static FRAC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\d?frac\{(-?\d+)\}\{(-?\d+)\}").unwrap());
static NUMBER_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)(?:\s*/\s*[-+]?\d[\d,]*)?").unwrap()
});
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z]+").unwrap());

/// Extracts the final answer from free-form completion text.
///
/// The last parseable "The answer is ..." span wins; math-style boxed values
/// are used as a fallback for numeric tasks. Returns `None` when nothing
/// extractable is present, never a guess.
pub fn extract_answer(text: &str, kind: TaskKind) -> Option<String> {
    let spans: Vec<&str> = ANSWER_MARKER
        .find_iter(text)
        .map(|m| {
            let rest = &text[m.end()..];
            rest.lines().next().unwrap_or("")
        })
        .collect();
    for span in spans.iter().rev() {
        if let Some(norm) = normalize_plain(span, kind) {
            return Some(norm);
        }
    }
    if kind == TaskKind::Numeric {
        if let Some(caps) = BOXED.captures_iter(text).last() {
            if let Some(norm) = normalize_plain(&caps[1], kind) {
                return Some(norm);
            }
        }
    }
    None
}

/// Normalizes a bare answer string (for example a gold label) to canonical
/// form. Returns `None` if the text does not parse for the given kind.
pub fn normalize_plain(text: &str, kind: TaskKind) -> Option<String> {
    match kind {
        TaskKind::Numeric => normalize_numeric(text),
        TaskKind::Boolean => normalize_boolean(text),
    }
}

fn normalize_numeric(text: &str) -> Option<String> {
    let mut s = text.trim().to_string();
    if let Some(caps) = BOXED.captures(&s) {
        s = caps[1].to_string();
    }
    s = FRAC.replace_all(&s, "$1/$2").into_owned();
    // Strip math-mode and currency dressing before token matching.
    let s = s.trim_start_matches(|c: char| {
        c == '$' || c == '€' || c == '£' || c == '\\' || c == '(' || c.is_whitespace()
    });
    let token = NUMBER_TOKEN.find(s)?.as_str();
    let cleaned: String = token
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',' && *c != '+')
        .collect();
    let rational = parse_rational(&cleaned)?;
    Some(canonical_rational(&rational))
}

fn normalize_boolean(text: &str) -> Option<String> {
    for word in WORD.find_iter(text) {
        match word.as_str().to_ascii_lowercase().as_str() {
            "yes" | "true" => return Some("yes".to_string()),
            "no" | "false" => return Some("no".to_string()),
            _ => {}
        }
    }
    None
}

/// Parses integers, finite decimals, and `p/q` fractions as exact rationals.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n = BigInt::from_str(num.trim()).ok()?;
        let d = BigInt::from_str(den.trim()).ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if !frac_part.chars().all(|c| c.is_ascii_digit()) || frac_part.is_empty() {
            return None;
        }
        let negative = int_part.starts_with('-');
        let int_digits = int_part.trim_start_matches('-');
        if !int_digits.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let int_digits = if int_digits.is_empty() { "0" } else { int_digits };
        let whole = BigInt::from_str(int_digits).ok()?;
        let frac = BigInt::from_str(frac_part).ok()?;
        let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value = BigRational::new(whole * &denom + frac, denom);
        if negative {
            value = -value;
        }
        return Some(value);
    }
    let n = BigInt::from_str(s).ok()?;
    Some(BigRational::from_integer(n))
}

/// Canonical string form: reduced fraction, integers without a denominator.
pub fn canonical_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Numeric equality: exact when both sides parse as rationals, otherwise a
/// 1e-6 absolute tolerance on their decimal values.
pub fn numeric_equal(a: &str, b: &str) -> bool {
    match (parse_rational(a), parse_rational(b)) {
        (Some(ra), Some(rb)) => ra == rb,
        _ => match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(fa), Ok(fb)) => (fa - fb).abs() <= 1e-6,
            _ => false,
        },
    }
}

/// Compares a predicted answer against a gold label. Unparseable or absent
/// predictions are simply incorrect, not errors.
pub fn match_answer(predicted: Option<&str>, gold: &str, kind: TaskKind) -> bool {
    let Some(predicted) = predicted else {
        return false;
    };
    let Some(pred_norm) = normalize_plain(predicted, kind) else {
        return false;
    };
    let Some(gold_norm) = normalize_plain(gold, kind) else {
        return false;
    };
    match kind {
        TaskKind::Numeric => numeric_equal(&pred_norm, &gold_norm),
        TaskKind::Boolean => pred_norm == gold_norm,
    }
}

/// f64 view of a normalized numeric answer, used for reporting.
pub fn to_f64(normalized: &str) -> Option<f64> {
    parse_rational(normalized)
        .and_then(|r| r.to_f64())
        .or_else(|| normalized.parse::<f64>().ok())
}
