//! Iterative reasoning: extract, select, verbalize, ask the answer backend,
//! and either stop with an answer or move to the entity it names.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{reformat_prompt, user_prompt, AnswerBackend, BackendError, SYSTEM_PROMPT};
use crate::embed::EmbeddingProvider;
use crate::error::{CoreError, Result};
use crate::extract::{extract_with, ExtractionConfig, Subgraph};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::selector::{verbalize, SelectedEntity, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Final,
    Next,
}

/// A decision line found in raw backend text, before grounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReply {
    pub kind: ReplyKind,
    pub payload: String,
    /// Text before the marker.
    pub rationale: String,
}

const MARKERS: [(&str, ReplyKind); 2] = [("final:", ReplyKind::Final), ("next:", ReplyKind::Next)];

/// Finds the earliest `FINAL:` / `NEXT:` marker (any case, not preceded by a
/// letter, digit or underscore) and takes the rest of its line as payload.
/// Quotes, backticks, asterisks and one trailing period are stripped.
pub fn parse_reply(raw: &str) -> Result<ParsedReply> {
    let lower = raw.to_ascii_lowercase();
    let mut best: Option<(usize, usize, ReplyKind)> = None;
    for (marker, kind) in MARKERS {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(marker) {
            let at = from + pos;
            let boundary = lower[..at]
                .chars()
                .next_back()
                .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
            if boundary {
                if best.is_none_or(|b| at < b.0) {
                    best = Some((at, marker.len(), kind));
                }
                break;
            }
            from = at + marker.len();
        }
    }
    let (at, len, kind) = best.ok_or_else(|| CoreError::DecisionParse(format!("no FINAL:/NEXT: marker in {raw:?}")))?;
    let rest = &raw[at + len..];
    let line = rest.lines().next().unwrap_or("");
    let payload = clean_payload(line);
    if payload.is_empty() {
        return Err(CoreError::DecisionParse(format!("empty payload in {raw:?}")));
    }
    Ok(ParsedReply {
        kind,
        payload,
        rationale: raw[..at].trim().to_string(),
    })
}

fn clean_payload(s: &str) -> String {
    let junk = |c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*');
    let s = s.trim_matches(junk);
    let s = s.strip_suffix('.').unwrap_or(s);
    s.trim_matches(junk).to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Answer { text: String, rationale: String },
    Continue { entity: EntityId, label: String, rationale: String },
}

/// Resolves a label to an entity: subgraph nodes first (exact, then any
/// case), then the whole catalog (exact, then any case).
pub fn ground_entity(label: &str, subgraph: Option<&Subgraph>, graph: &KnowledgeGraph) -> Result<EntityId> {
    subgraph
        .and_then(|s| s.find_label(label))
        .or_else(|| graph.find_entity(label))
        .ok_or_else(|| CoreError::UnknownEntity(label.to_string()))
}

/// Parses and grounds a reply. A `NEXT` label that matches nothing is an
/// [`CoreError::UnknownEntity`] error.
pub fn parse_decision(raw: &str, subgraph: Option<&Subgraph>, graph: &KnowledgeGraph) -> Result<Decision> {
    let reply = parse_reply(raw)?;
    Ok(match reply.kind {
        ReplyKind::Final => Decision::Answer {
            text: reply.payload,
            rationale: reply.rationale,
        },
        ReplyKind::Next => {
            let entity = ground_entity(&reply.payload, subgraph, graph)?;
            Decision::Continue {
                entity,
                label: graph.entity_label(entity).to_string(),
                rationale: reply.rationale,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonConfig {
    pub max_iterations: usize,
    /// Extra attempts after a transport failure.
    pub backend_retries: usize,
    /// Extra attempts after an unparseable reply.
    pub reformat_retries: usize,
}

impl Default for ReasonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 4,
            backend_retries: 2,
            reformat_retries: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    /// Lightweight selection model.
    Select,
    /// Powerful answer model.
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub iteration: usize,
    /// Requests sent for this call, including retries.
    pub attempts: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub topic: EntityId,
    pub topic_label: String,
    pub subgraph_nodes: usize,
    pub subgraph_edges: usize,
    pub selected: Vec<SelectedEntity>,
    pub evidence: String,
    pub raw_reply: Option<String>,
    pub decision: Option<Decision>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    MaxIterations,
    Stuck(String),
    BackendFailure(String),
    DecisionParseFailure(String),
    PipelineFailure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub question: String,
    pub iterations: Vec<IterationRecord>,
    pub calls: Vec<CallRecord>,
    pub select_calls: usize,
    pub answer_calls: usize,
    pub terminal: Terminal,
    pub wall_ms: f64,
}

impl ReasoningTrace {
    fn new(question: &str) -> Self {
        Self {
            question: question.to_string(),
            iterations: Vec::new(),
            calls: Vec::new(),
            select_calls: 0,
            answer_calls: 0,
            terminal: Terminal::PipelineFailure("not finished".into()),
            wall_ms: 0.0,
        }
    }

    fn record_call(&mut self, kind: CallKind, iteration: usize, attempts: usize, ok: bool) {
        match kind {
            CallKind::Select => self.select_calls += 1,
            CallKind::Answer => self.answer_calls += 1,
        }
        self.calls.push(CallRecord {
            kind,
            iteration,
            attempts,
            ok,
        });
    }

    pub fn topics(&self) -> Vec<EntityId> {
        self.iterations.iter().map(|i| i.topic).collect()
    }

    pub fn answer(&self) -> Option<&str> {
        match (&self.terminal, self.iterations.last().and_then(|i| i.decision.as_ref())) {
            (Terminal::Answered, Some(Decision::Answer { text, .. })) => Some(text),
            _ => None,
        }
    }

    /// Checks the structural invariants every finished trace must satisfy.
    pub fn validate(&self, max_iterations: usize) -> Result<()> {
        let fail = |m: String| Err(CoreError::Validation(m));
        if self.iterations.is_empty() || self.iterations.len() > max_iterations {
            return fail(format!("{} iterations with cap {max_iterations}", self.iterations.len()));
        }
        let count = |k| self.calls.iter().filter(|c| c.kind == k).count();
        if count(CallKind::Select) != self.select_calls || count(CallKind::Answer) != self.answer_calls {
            return fail("call counters disagree with call records".into());
        }
        for (i, it) in self.iterations.iter().enumerate() {
            if it.iteration != i {
                return fail(format!("iteration {i} is numbered {}", it.iteration));
            }
            let per = |k| self.calls.iter().filter(|c| c.kind == k && c.iteration == i).count();
            if per(CallKind::Select) > 1 || per(CallKind::Answer) > 1 {
                return fail(format!("iteration {i} has more than one call of a kind"));
            }
        }
        let last = self.iterations.last().expect("non-empty");
        match &self.terminal {
            Terminal::Answered => {
                if !matches!(&last.decision, Some(Decision::Answer { text, .. }) if !text.is_empty()) {
                    return fail("answered trace without an answer decision".into());
                }
                let topics: BTreeSet<EntityId> = self.topics().into_iter().collect();
                if topics.len() != self.iterations.len() {
                    return fail("answered trace revisits a topic".into());
                }
            }
            Terminal::MaxIterations => {
                if self.iterations.len() != max_iterations {
                    return fail("max-iterations terminal before the cap".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// One JSON object per iteration.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for it in &self.iterations {
            serde_json::to_writer(&mut out, it)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    pub answer: Option<String>,
    pub trace: ReasoningTrace,
}

/// Everything a reasoning run reads. Shared immutably across questions.
pub struct Reasoner<'a> {
    pub graph: &'a KnowledgeGraph,
    pub provider: &'a dyn EmbeddingProvider,
    pub selector: &'a dyn Selector,
    pub backend: &'a dyn AnswerBackend,
    pub extraction: ExtractionConfig,
    pub config: ReasonConfig,
}

enum Asked {
    Decided(String, Decision),
    Transport(String),
    Unparseable(String, String),
    Ungrounded(String, String),
}

impl Reasoner<'_> {
    /// Runs the loop for one question. Errors are returned only for invalid
    /// inputs; failures during the run end the trace instead.
    pub fn reason(&self, question: &str, topic: EntityId) -> Result<ReasoningOutcome> {
        if !self.graph.has_entity(topic) {
            return Err(CoreError::UnknownEntity(topic.to_string()));
        }
        if self.config.max_iterations == 0 {
            return Err(CoreError::Config("max_iterations must be >= 1".into()));
        }
        let started = Instant::now();
        let mut trace = ReasoningTrace::new(question);
        trace.terminal = self.run(question, topic, &mut trace);
        trace.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(ReasoningOutcome {
            answer: trace.answer().map(str::to_string),
            trace,
        })
    }

    fn run(&self, question: &str, mut topic: EntityId, trace: &mut ReasoningTrace) -> Terminal {
        let q = match self.provider.embed(question) {
            Ok(q) => q,
            Err(e) => return Terminal::PipelineFailure(e.to_string()),
        };
        let mut visited = BTreeSet::new();
        for iteration in 0..self.config.max_iterations {
            let started = Instant::now();
            visited.insert(topic);
            let topic_label = self.graph.entity_label(topic).to_string();
            let mut record = IterationRecord {
                iteration,
                topic,
                topic_label: topic_label.clone(),
                subgraph_nodes: 0,
                subgraph_edges: 0,
                selected: Vec::new(),
                evidence: String::new(),
                raw_reply: None,
                decision: None,
                wall_ms: 0.0,
            };
            let subgraph = match extract_with(self.graph, self.provider, &q, topic, &self.extraction) {
                Ok(s) => s,
                Err(e) => {
                    record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                    trace.iterations.push(record);
                    return Terminal::PipelineFailure(e.to_string());
                }
            };
            record.subgraph_nodes = subgraph.len();
            record.subgraph_edges = subgraph.edges.len();

            let selection = self.selector.select(question, &q, &subgraph);
            trace.record_call(CallKind::Select, iteration, 1, selection.is_ok());
            let selection = match selection {
                Ok(s) => s,
                Err(e) => {
                    record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                    trace.iterations.push(record);
                    return Terminal::PipelineFailure(e.to_string());
                }
            };
            record.evidence = verbalize(&selection, &subgraph);
            record.selected = selection.selected;

            let prompt = user_prompt(question, &topic_label, &record.evidence);
            let (attempts, asked) = self.ask(&prompt, &subgraph);
            let ok = matches!(asked, Asked::Decided(..));
            trace.record_call(CallKind::Answer, iteration, attempts, ok);
            let terminal = match asked {
                Asked::Decided(raw, decision) => {
                    record.raw_reply = Some(raw);
                    let next = match &decision {
                        Decision::Answer { .. } => Some(Terminal::Answered),
                        Decision::Continue { entity, label, .. } => {
                            if visited.contains(entity) {
                                Some(Terminal::Stuck(format!("topic `{label}` revisited")))
                            } else {
                                topic = *entity;
                                None
                            }
                        }
                    };
                    record.decision = Some(decision);
                    next
                }
                Asked::Transport(e) => Some(Terminal::BackendFailure(e)),
                Asked::Unparseable(raw, e) => {
                    record.raw_reply = Some(raw);
                    Some(Terminal::DecisionParseFailure(e))
                }
                Asked::Ungrounded(raw, e) => {
                    record.raw_reply = Some(raw);
                    Some(Terminal::Stuck(e))
                }
            };
            record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            trace.iterations.push(record);
            if let Some(t) = terminal {
                return t;
            }
        }
        Terminal::MaxIterations
    }

    /// One answer call: transport retries, then reformat retries for
    /// unparseable replies. Returns the number of requests sent.
    fn ask(&self, prompt: &str, subgraph: &Subgraph) -> (usize, Asked) {
        let mut attempts = 0;
        let mut message = prompt.to_string();
        let mut reformats_left = self.config.reformat_retries;
        loop {
            let raw = match self.send(&message, &mut attempts) {
                Ok(raw) => raw,
                Err(e) => return (attempts, Asked::Transport(e.to_string())),
            };
            match parse_decision(&raw, Some(subgraph), self.graph) {
                Ok(d) => return (attempts, Asked::Decided(raw, d)),
                Err(CoreError::UnknownEntity(label)) => {
                    return (attempts, Asked::Ungrounded(raw, format!("entity `{label}` is not in the graph")))
                }
                Err(e) if reformats_left == 0 => return (attempts, Asked::Unparseable(raw, e.to_string())),
                Err(_) => {
                    reformats_left -= 1;
                    message = reformat_prompt(prompt, &raw);
                }
            }
        }
    }

    fn send(&self, message: &str, attempts: &mut usize) -> std::result::Result<String, BackendError> {
        let mut last = None;
        for _ in 0..=self.config.backend_retries {
            *attempts += 1;
            match self.backend.complete(SYSTEM_PROMPT, message) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("answer backend attempt {attempts} failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Per-question call counts and wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRecord {
    pub iterations: usize,
    pub select_calls: usize,
    pub answer_calls: usize,
    pub wall_ms: f64,
}

pub fn account(trace: &ReasoningTrace) -> EfficiencyRecord {
    EfficiencyRecord {
        iterations: trace.iterations.len(),
        select_calls: trace.select_calls,
        answer_calls: trace.answer_calls,
        wall_ms: trace.wall_ms,
    }
}

/// Batch means of [`EfficiencyRecord`]s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub questions: usize,
    pub mean_select_calls: f64,
    pub mean_answer_calls: f64,
    pub mean_runtime_ms: f64,
}

pub fn summarize(records: &[EfficiencyRecord]) -> EfficiencySummary {
    if records.is_empty() {
        return EfficiencySummary::default();
    }
    let n = records.len() as f64;
    EfficiencySummary {
        questions: records.len(),
        mean_select_calls: records.iter().map(|r| r.select_calls as f64).sum::<f64>() / n,
        mean_answer_calls: records.iter().map(|r| r.answer_calls as f64).sum::<f64>() / n,
        mean_runtime_ms: records.iter().map(|r| r.wall_ms).sum::<f64>() / n,
    }
}
