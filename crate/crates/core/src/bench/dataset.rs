//! ShareGPT-style dialogue files: one JSON object per line,
//! `{"id": ..., "conversations": [{"from": "human"|"gpt", "value": ...}]}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::turn::{Role, Turn};

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    /// Alternating user/assistant turns, starting with the user.
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// (query, response) pairs in order.
    pub fn exchanges(&self) -> impl Iterator<Item = (&Turn, &Turn)> {
        self.turns.chunks_exact(2).map(|c| (&c[0], &c[1]))
    }
}

#[derive(Serialize, Deserialize)]
struct Message {
    from: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    conversations: Vec<Message>,
}

fn role(from: &str) -> Option<Role> {
    match from {
        "human" | "user" => Some(Role::User),
        "gpt" | "assistant" | "chatgpt" => Some(Role::Assistant),
        _ => None,
    }
}

/// Parses a dialogue file. Each dialogue must alternate user and assistant
/// messages, start with the user and contain at least one full exchange; a
/// trailing unanswered user message is dropped.
pub fn read_dialogues(reader: impl BufRead) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::BenchInput(format!("line {}: {msg}", n + 1));
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let mut turns = Vec::with_capacity(rec.conversations.len());
        for (i, m) in rec.conversations.iter().enumerate() {
            let r = role(&m.from).ok_or_else(|| bad(format!("unknown speaker {:?}", m.from)))?;
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if r != expected {
                return Err(bad(format!("message {i} should come from the {expected:?} side")));
            }
            turns.push(Turn::new(r, m.value.clone()).map_err(|e| bad(e.to_string()))?);
        }
        if turns.len() % 2 == 1 {
            turns.pop();
        }
        if turns.is_empty() {
            return Err(bad("dialogue has no complete exchange".into()));
        }
        out.push(Dialogue { id: rec.id, turns });
    }
    Ok(out)
}

pub fn write_dialogues(mut w: impl Write, dialogues: &[Dialogue]) -> Result<()> {
    for d in dialogues {
        let rec = Record {
            id: d.id.clone(),
            conversations: d
                .turns
                .iter()
                .map(|t| Message {
                    from: match t.role {
                        Role::User => "human",
                        Role::Assistant => "gpt",
                    }
                    .to_owned(),
                    value: t.text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::BenchInput(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
