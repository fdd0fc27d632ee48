//! Question records stored one JSON object per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: String,
    /// Label of the topic entity.
    pub topic_entity: String,
    /// Gold answer labels.
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// `train` or `test`; records without one are split by seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

/// A record with its entities resolved against a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQuestion {
    pub question: String,
    pub topic: EntityId,
    pub answers: Vec<EntityId>,
}

impl QuestionRecord {
    pub fn resolve(&self, graph: &KnowledgeGraph) -> Result<ResolvedQuestion> {
        let topic = graph.require_entity(&self.topic_entity)?;
        let answers = self
            .answers
            .iter()
            .map(|a| graph.require_entity(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResolvedQuestion {
            question: self.question.clone(),
            topic,
            answers,
        })
    }

    pub fn is_test(&self) -> bool {
        self.split.as_deref() == Some("test")
    }
}

pub fn parse_records(text: &str) -> Result<Vec<QuestionRecord>> {
    read_records(text.as_bytes())
}

pub fn read_records(reader: impl std::io::Read) -> Result<Vec<QuestionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records(records: &[QuestionRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_records(records: &[QuestionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
