//! Prompt templates with `{input}` and `{label_hint}` placeholders.
//!
//! Literal braces are written `{{` and `}}`. Substitution is a single pass,
//! so braces inside the bound input are never re-interpreted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Message, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{template}` uses {{{name}}} but no value was bound")]
    Unbound { template: String, name: String },
    #[error("template `{template}` has unknown placeholder {{{name}}}")]
    Unknown { template: String, name: String },
    #[error("template `{template}` has an unbalanced brace at byte {offset}")]
    Unbalanced { template: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateTask {
    Translate,
    Summarize,
    RewriteSelf,
    RewriteBackTranslate,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub instruction: String,
    pub task: TemplateTask,
}

const SST_POSITIVE: &str =
    "Modify the input sentence to enhance its positive emotional tendency without altering the original meaning.";
const SST_NEGATIVE: &str =
    "Modify the input sentence to amplify its negative emotional tendency without changing the original meaning.";

enum Piece<'a> {
    Literal(&'a str),
    Input,
    LabelHint,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        instruction: impl Into<String>,
        task: TemplateTask,
    ) -> Self {
        Self {
            name: name.into(),
            instruction: instruction.into(),
            task,
        }
    }

    pub fn translate() -> Self {
        Self::new(
            "translate_de_en",
            "Translate German to English: {input}",
            TemplateTask::Translate,
        )
    }

    /// Target-side text back into the source language.
    pub fn back_translate() -> Self {
        Self::new(
            "back_translate_en_de",
            "Translate English to German: {input}",
            TemplateTask::RewriteBackTranslate,
        )
    }

    pub fn summarize() -> Self {
        Self::new(
            "summarize",
            "Summarize the following article in one sentence: {input}",
            TemplateTask::Summarize,
        )
    }

    pub fn classify() -> Self {
        Self::new(
            "classify_sentiment",
            "Is the sentiment of the following sentence positive or negative? {input}",
            TemplateTask::Classify,
        )
    }

    /// Self-rewrite prompt that needs the record's label as a hint.
    pub fn rewrite_self() -> Self {
        Self::new(
            "rewrite_self",
            "Modify the input sentence to make its {label_hint} character clearer without altering the original meaning.\n{input}",
            TemplateTask::RewriteSelf,
        )
    }

    pub fn rewrite_self_positive() -> Self {
        Self::new(
            "rewrite_self_positive",
            format!("{SST_POSITIVE}\n{{input}}"),
            TemplateTask::RewriteSelf,
        )
    }

    pub fn rewrite_self_negative() -> Self {
        Self::new(
            "rewrite_self_negative",
            format!("{SST_NEGATIVE}\n{{input}}"),
            TemplateTask::RewriteSelf,
        )
    }

    /// Sentiment labels get their dedicated prompts, anything else falls back
    /// to [`PromptTemplate::rewrite_self`].
    pub fn self_rewrite_for(label: Option<&str>) -> Self {
        match label.map(str::to_lowercase).as_deref() {
            Some("positive") => Self::rewrite_self_positive(),
            Some("negative") => Self::rewrite_self_negative(),
            _ => Self::rewrite_self(),
        }
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, TemplateError> {
        let src = self.instruction.as_str();
        let bytes = src.as_bytes();
        let mut pieces = Vec::new();
        let mut lit_start = 0;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    pieces.push(Piece::Literal(&src[lit_start..=i]));
                    i += 2;
                    lit_start = i;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    pieces.push(Piece::Literal(&src[lit_start..=i]));
                    i += 2;
                    lit_start = i;
                }
                b'{' => {
                    let close =
                        src[i + 1..]
                            .find('}')
                            .ok_or_else(|| TemplateError::Unbalanced {
                                template: self.name.clone(),
                                offset: i,
                            })?;
                    let name = &src[i + 1..i + 1 + close];
                    pieces.push(Piece::Literal(&src[lit_start..i]));
                    pieces.push(match name {
                        "input" => Piece::Input,
                        "label_hint" => Piece::LabelHint,
                        other => {
                            return Err(TemplateError::Unknown {
                                template: self.name.clone(),
                                name: other.to_owned(),
                            })
                        }
                    });
                    i += close + 2;
                    lit_start = i;
                }
                b'}' => {
                    return Err(TemplateError::Unbalanced {
                        template: self.name.clone(),
                        offset: i,
                    })
                }
                _ => i += 1,
            }
        }
        pieces.push(Piece::Literal(&src[lit_start..]));
        Ok(pieces)
    }

    pub fn uses_label_hint(&self) -> bool {
        self.pieces()
            .map(|p| p.iter().any(|p| matches!(p, Piece::LabelHint)))
            .unwrap_or(false)
    }

    /// Checks placeholder syntax without binding anything.
    pub fn validate(&self) -> Result<(), TemplateError> {
        self.pieces().map(|_| ())
    }
}

/// Renders `template` into a single user message. `input_text` is inserted
/// byte for byte.
pub fn render_prompt(
    template: &PromptTemplate,
    input_text: &str,
    label_hint: Option<&str>,
) -> Result<Vec<Message>, TemplateError> {
    let mut out = String::with_capacity(template.instruction.len() + input_text.len());
    for piece in template.pieces()? {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Input => out.push_str(input_text),
            Piece::LabelHint => out.push_str(label_hint.ok_or_else(|| TemplateError::Unbound {
                template: template.name.clone(),
                name: "label_hint".to_owned(),
            })?),
        }
    }
    Ok(vec![Message {
        role: Role::User,
        content: out,
    }])
}
