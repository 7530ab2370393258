//! Prompt templates.
//!
//! Templates are plain-text files with `{placeholder}` slots. The defaults are
//! compiled in; a directory override lets users adapt the prompts to their
//! models without rebuilding. `{{` and `}}` escape literal braces.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One role-tagged turn of a chat prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Joins message contents for pattern matching and logging.
pub fn messages_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

const DEFAULT_TEMPLATES: &[(&str, &str)] = &[
    (
        "sub_question_numeric",
        include_str!("../templates/sub_question_numeric.txt"),
    ),
    (
        "sub_question_boolean",
        include_str!("../templates/sub_question_boolean.txt"),
    ),
    (
        "sub_answer_numeric",
        include_str!("../templates/sub_answer_numeric.txt"),
    ),
    (
        "sub_answer_boolean",
        include_str!("../templates/sub_answer_boolean.txt"),
    ),
    (
        "remaining_steps_numeric",
        include_str!("../templates/remaining_steps_numeric.txt"),
    ),
    (
        "remaining_steps_boolean",
        include_str!("../templates/remaining_steps_boolean.txt"),
    ),
    ("one_step_thought", include_str!("../templates/one_step_thought.txt")),
    ("rephrase", include_str!("../templates/rephrase.txt")),
    (
        "aggregate_numeric",
        include_str!("../templates/aggregate_numeric.txt"),
    ),
    (
        "aggregate_boolean",
        include_str!("../templates/aggregate_boolean.txt"),
    ),
];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{|\}\}|\{([a-z][a-z0-9_]*)\}").unwrap());

/// Loads templates from compiled-in defaults, optionally overridden by
/// `<dir>/<id>.txt` files.
#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    dir: Option<PathBuf>,
}

impl TemplateStore {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
        }
    }

    fn raw(&self, id: &str) -> Result<Cow<'static, str>> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{id}.txt"));
            if path.is_file() {
                return Ok(Cow::Owned(std::fs::read_to_string(path)?));
            }
        }
        DEFAULT_TEMPLATES
            .iter()
            .find(|(name, _)| *name == id)
            .map(|(_, text)| Cow::Borrowed(*text))
            .ok_or_else(|| Error::TemplateNotFound(id.to_string()))
    }

    /// Renders a template to text. Every `{name}` slot in the template must
    /// be bound in `context`.
    pub fn render(&self, id: &str, context: &BTreeMap<&str, String>) -> Result<String> {
        let template = self.raw(id)?;
        let mut out = String::with_capacity(template.len());
        let mut last = 0;
        for caps in PLACEHOLDER.captures_iter(&template) {
            let whole = caps.get(0).unwrap();
            out.push_str(&template[last..whole.start()]);
            last = whole.end();
            match whole.as_str() {
                "{{" => out.push('{'),
                "}}" => out.push('}'),
                _ => {
                    let name = caps.get(1).unwrap().as_str();
                    let value =
                        context
                            .get(name)
                            .ok_or_else(|| Error::UnboundPlaceholder {
                                template: id.to_string(),
                                placeholder: name.to_string(),
                            })?;
                    out.push_str(value);
                }
            }
        }
        out.push_str(&template[last..]);
        Ok(out)
    }

    /// Renders a template into the chat-message form consumed by backends.
    pub fn render_prompt(
        &self,
        id: &str,
        context: &BTreeMap<&str, String>,
    ) -> Result<Vec<ChatMessage>> {
        Ok(vec![ChatMessage::user(self.render(id, context)?)])
    }
}
