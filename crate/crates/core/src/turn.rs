use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// One message of a conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub token_count: usize,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if normalize_text(&text).is_empty() {
            return Err(Error::EmptyQuery);
        }
        let token_count = word_count(&text);
        Ok(Turn { role, text, token_count })
    }

    pub fn user(text: impl Into<String>) -> Result<Self> {
        Turn::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Result<Self> {
        Turn::new(Role::Assistant, text)
    }
}

/// Whitespace word count; stands in for tokenizer counts in reports.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
