//! Hits@1 evaluation, the edge-removal sweep and the hop ablation table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::AnswerBackend;
use crate::dataset::QuestionRecord;
use crate::embed::EmbeddingProvider;
use crate::error::{CoreError, Result};
use crate::extract::ExtractionConfig;
use crate::kg::{EntityId, KnowledgeGraph, PerturbationScope, PerturbationSpec};
use crate::orchestrator::{account, summarize, ReasonConfig, Reasoner, Terminal};
use crate::selector::Selector;

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Compare [`normalize_answer`] forms.
    #[default]
    Normalized,
    /// Ground the prediction to an entity and compare ids.
    EntityId,
}

pub fn is_hit(predicted: Option<&str>, gold: &[String], graph: &KnowledgeGraph, mode: MatchMode) -> bool {
    let Some(p) = predicted else {
        return false;
    };
    match mode {
        MatchMode::Normalized => {
            let p = normalize_answer(p);
            !p.is_empty() && gold.iter().any(|g| normalize_answer(g) == p)
        }
        MatchMode::EntityId => {
            let Some(id) = graph.find_entity(p) else {
                return false;
            };
            gold.iter().any(|g| graph.find_entity(g) == Some(id))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: usize,
    pub question: String,
    pub depth: Option<usize>,
    pub predicted: Option<String>,
    pub gold: Vec<String>,
    pub hit: bool,
    pub iterations: usize,
    pub select_calls: usize,
    pub answer_calls: usize,
    pub wall_ms: f64,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthBreakdown {
    pub questions: usize,
    pub hits: usize,
    pub hits_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub questions: usize,
    pub hits_at_1: f64,
    pub per_depth: BTreeMap<usize, DepthBreakdown>,
    pub mean_select_calls: f64,
    pub mean_answer_calls: f64,
    pub mean_runtime_ms: f64,
}

impl Metrics {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let efficiency: Vec<_> = records
            .iter()
            .map(|r| crate::orchestrator::EfficiencyRecord {
                iterations: r.iterations,
                select_calls: r.select_calls,
                answer_calls: r.answer_calls,
                wall_ms: r.wall_ms,
            })
            .collect();
        let summary = summarize(&efficiency);
        let mut per_depth: BTreeMap<usize, DepthBreakdown> = BTreeMap::new();
        for r in records {
            if let Some(d) = r.depth {
                let e = per_depth.entry(d).or_default();
                e.questions += 1;
                e.hits += usize::from(r.hit);
            }
        }
        for e in per_depth.values_mut() {
            e.hits_at_1 = e.hits as f64 / e.questions as f64;
        }
        let hits = records.iter().filter(|r| r.hit).count();
        Self {
            questions: records.len(),
            hits_at_1: if records.is_empty() { 0.0 } else { hits as f64 / records.len() as f64 },
            per_depth,
            mean_select_calls: summary.mean_select_calls,
            mean_answer_calls: summary.mean_answer_calls,
            mean_runtime_ms: summary.mean_runtime_ms,
        }
    }
}

/// What a run needs besides the records and graph.
pub struct EvalSetup<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub selector: &'a dyn Selector,
    pub backend: &'a dyn AnswerBackend,
    pub extraction: ExtractionConfig,
    pub reasoning: ReasonConfig,
    pub match_mode: MatchMode,
}

/// Runs the reasoning loop on every record (in parallel) and scores it.
pub fn evaluate(records: &[QuestionRecord], graph: &KnowledgeGraph, setup: &EvalSetup<'_>) -> Result<(Metrics, Vec<EvalRecord>)> {
    let reasoner = Reasoner {
        graph,
        provider: setup.provider,
        selector: setup.selector,
        backend: setup.backend,
        extraction: setup.extraction,
        config: setup.reasoning,
    };
    let evals = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let topic = graph.require_entity(&rec.topic_entity)?;
            let outcome = reasoner.reason(&rec.question, topic)?;
            let eff = account(&outcome.trace);
            Ok(EvalRecord {
                question_id: i,
                question: rec.question.clone(),
                depth: rec.depth,
                hit: is_hit(outcome.answer.as_deref(), &rec.answers, graph, setup.match_mode),
                predicted: outcome.answer,
                gold: rec.answers.clone(),
                iterations: eff.iterations,
                select_calls: eff.select_calls,
                answer_calls: eff.answer_calls,
                wall_ms: eff.wall_ms,
                terminal: outcome.trace.terminal,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Metrics::from_records(&evals), evals))
}

/// Topic entities of every record.
pub fn topic_entities(records: &[QuestionRecord], graph: &KnowledgeGraph) -> Result<BTreeSet<EntityId>> {
    records.iter().map(|r| graph.require_entity(&r.topic_entity)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub removed_edges: usize,
    pub hits_at_1: f64,
}

/// Removes growing fractions of topic-entity edges (nested for one seed) and
/// evaluates on each perturbed graph.
pub fn sweep_incompleteness(
    records: &[QuestionRecord],
    graph: &KnowledgeGraph,
    setup: &EvalSetup<'_>,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let topics = topic_entities(records, graph)?;
    ratios
        .iter()
        .map(|&ratio| {
            let spec = PerturbationSpec::new(ratio, PerturbationScope::TopicEntityEdges, seed)?;
            let perturbed = graph.perturb(&spec, &topics)?;
            let (metrics, _) = evaluate(records, &perturbed.graph, setup)?;
            Ok(SweepPoint {
                ratio,
                removed_edges: perturbed.removed.len(),
                hits_at_1: metrics.hits_at_1,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("ratio,removed_edges,hits_at_1\n");
    for p in points {
        let _ = writeln!(out, "{:.2},{},{:.4}", p.ratio, p.removed_edges, p.hits_at_1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub hops: usize,
    pub metrics: Metrics,
}

pub const ABLATION_HEADER: &str = "hops,hits_at_1,questions,mean_select_calls,mean_answer_calls,mean_runtime_ms";

/// Evaluates each hop setting with its own selector.
pub fn hop_ablation(
    records: &[QuestionRecord],
    graph: &KnowledgeGraph,
    settings: &[(usize, &dyn Selector)],
    setup: &EvalSetup<'_>,
) -> Result<Vec<AblationRow>> {
    settings
        .iter()
        .map(|&(hops, selector)| {
            let run = EvalSetup {
                selector,
                extraction: ExtractionConfig {
                    hops,
                    ..setup.extraction
                },
                ..*setup
            };
            let (metrics, _) = evaluate(records, graph, &run)?;
            Ok(AblationRow { hops, metrics })
        })
        .collect()
}

/// Checks that a parameter set exists for every requested hop setting.
pub fn require_all_hops<T>(available: &BTreeMap<usize, T>, hops: &[usize]) -> Result<()> {
    let missing: Vec<String> = hops
        .iter()
        .filter(|h| !available.contains_key(h))
        .map(|h| format!("{h}-hop"))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CoreError::MissingCheckpoint(missing.join(", ")))
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{:.4},{},{:.3},{:.3},{:.3}",
            r.hops, m.hits_at_1, m.questions, m.mean_select_calls, m.mean_answer_calls, m.mean_runtime_ms
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  The  GREEK, language! "), "the greek language");
        assert_eq!(normalize_answer("Kavemo-city"), "kavemo city");
        let once = normalize_answer("A.B  c");
        assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn missing_hops_are_listed() {
        let avail: BTreeMap<usize, ()> = [(2, ())].into_iter().collect();
        let err = require_all_hops(&avail, &[1, 2, 3]).unwrap_err();
        assert_eq!(err.to_string(), "missing checkpoint(s): 1-hop, 3-hop");
    }
}
