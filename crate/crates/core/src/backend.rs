//! Answer backends: the model that reads evidence and replies with a
//! `FINAL:` or `NEXT:` decision.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{CoreError, Result};

/// Instructions sent as the system message on every answer call.
pub const SYSTEM_PROMPT: &str = include_str!("../prompts/answer_system.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub trait AnswerBackend: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, BackendError>;
}

/// User message for one answer call.
pub fn user_prompt(question: &str, topic: &str, evidence: &str) -> String {
    format!("Question: {question}\nTopic entity: {topic}\nEvidence:\n{evidence}")
}

/// Follow-up message after an unparseable reply.
pub fn reformat_prompt(original: &str, reply: &str) -> String {
    format!(
        "{original}\n\nYour previous reply could not be parsed:\n{reply}\n\
         Reply again with one line starting with FINAL: or NEXT:."
    )
}

/// Fields recovered from a message built by [`user_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptView<'a> {
    pub question: &'a str,
    pub topic: &'a str,
    pub evidence: Vec<&'a str>,
}

pub fn parse_user_prompt(user: &str) -> Option<PromptView<'_>> {
    let mut lines = user.lines();
    let question = lines.next()?.strip_prefix("Question: ")?;
    let topic = lines.next()?.strip_prefix("Topic entity: ")?;
    if lines.next()? != "Evidence:" {
        return None;
    }
    let evidence = lines.take_while(|l| !l.is_empty()).collect();
    Some(PromptView {
        question,
        topic,
        evidence,
    })
}

/// Entity labels mentioned by evidence lines: both ends of `(h, r, t)` lines
/// and the subject of `<label> (no incident relations retrieved)` lines.
pub fn evidence_labels(lines: &[&str]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for line in lines {
        if let Some(label) = line.strip_suffix(" (no incident relations retrieved)") {
            out.insert(label.to_string());
        } else if let Some(inner) = line.strip_prefix('(').and_then(|l| l.strip_suffix(')')) {
            let parts: Vec<&str> = inner.split(", ").collect();
            if parts.len() == 3 {
                out.insert(parts[0].to_string());
                out.insert(parts[2].to_string());
            }
        }
    }
    out
}

/// A reply chosen when every listed substring occurs in the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub when_contains: Vec<String>,
    pub reply: String,
}

/// Deterministic rule table; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<Rule>,
    pub default_reply: String,
}

impl ScriptedBackend {
    pub fn always(reply: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_reply: reply.into(),
        }
    }

    pub fn rule(mut self, when_contains: &[&str], reply: impl Into<String>) -> Self {
        self.rules.push(Rule {
            when_contains: when_contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
        });
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl AnswerBackend for ScriptedBackend {
    fn complete(&self, _system: &str, user: &str) -> std::result::Result<String, BackendError> {
        Ok(self
            .rules
            .iter()
            .find(|r| r.when_contains.iter().all(|s| user.contains(s.as_str())))
            .map_or(&self.default_reply, |r| &r.reply)
            .clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Reply(String),
    Fail(String),
}

/// Plays back a fixed sequence of replies and failures regardless of input.
/// An exhausted sequence fails every further call.
#[derive(Debug, Default)]
pub struct SequenceBackend {
    steps: Mutex<VecDeque<Step>>,
}

impl SequenceBackend {
    pub fn new(steps: impl IntoIterator<Item = Step>) -> Self {
        Self {
            steps: Mutex::new(steps.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.steps.lock().expect("sequence lock").len()
    }
}

impl AnswerBackend for SequenceBackend {
    fn complete(&self, _system: &str, _user: &str) -> std::result::Result<String, BackendError> {
        match self.steps.lock().expect("sequence lock").pop_front() {
            Some(Step::Reply(r)) => Ok(r),
            Some(Step::Fail(e)) => Err(BackendError::Transport(e)),
            None => Err(BackendError::Transport("sequence exhausted".into())),
        }
    }
}

/// Gold reasoning path for one benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathScript {
    pub question: String,
    /// Labels from the topic to the answer.
    pub path: Vec<String>,
    /// Entity whose presence in the evidence makes the question answerable.
    pub bridge: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BenchmarkScript {
    pub questions: Vec<PathScript>,
}

impl BenchmarkScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Answers a benchmark question correctly exactly when its bridge entity is
/// in the evidence. Otherwise it moves to the furthest path entity it can
/// see, or gives up with `FINAL: unknown`.
#[derive(Debug, Clone)]
pub struct PathScriptBackend {
    by_question: HashMap<String, PathScript>,
}

impl PathScriptBackend {
    pub fn new(script: BenchmarkScript) -> Self {
        Self {
            by_question: script.questions.into_iter().map(|q| (q.question.clone(), q)).collect(),
        }
    }
}

impl AnswerBackend for PathScriptBackend {
    fn complete(&self, _system: &str, user: &str) -> std::result::Result<String, BackendError> {
        let view = parse_user_prompt(user).ok_or_else(|| BackendError::Malformed("unrecognized prompt".into()))?;
        let Some(script) = self.by_question.get(view.question) else {
            return Ok("FINAL: unknown".into());
        };
        let seen = evidence_labels(&view.evidence);
        if seen.contains(&script.bridge) {
            return Ok(format!("The evidence names {}.\nFINAL: {}", script.bridge, script.answer));
        }
        let next = script
            .path
            .iter()
            .rev()
            .find(|l| l.as_str() != view.topic && seen.contains(*l));
        Ok(match next {
            Some(l) => format!("Not enough yet.\nNEXT: {l}"),
            None => "FINAL: unknown".into(),
        })
    }
}

pub const CHAT_URL_ENV: &str = "KGPROMPT_CHAT_URL";
pub const CHAT_KEY_ENV: &str = "KGPROMPT_CHAT_KEY";
pub const CHAT_MODEL_ENV: &str = "KGPROMPT_CHAT_MODEL";

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Chat-completions client (`{model, messages, temperature: 0}` →
/// `choices[0].message.content`).
pub struct HttpChatBackend {
    url: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            key,
            model: model.into(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into(),
        }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(CHAT_URL_ENV).map_err(|_| CoreError::Config(format!("{CHAT_URL_ENV} is not set")))?;
        let model = std::env::var(CHAT_MODEL_ENV).unwrap_or_else(|_| "default".into());
        Ok(Self::new(url, std::env::var(CHAT_KEY_ENV).ok(), model, Duration::from_secs(120)))
    }
}

impl AnswerBackend for HttpChatBackend {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let resp = req.send_json(&body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let parsed: ChatResponse = resp
            .into_body()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no message content".into()))
    }
}
