//! Candidate scoring head, supervised training on shortest-path labels, and
//! verbalization of the selected entities as evidence text.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use kgprompt_tensor::{Activation, Matrix, Optimizer, ParameterStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::QuestionRecord;
use crate::embed::{Embedding, EmbeddingProvider};
use crate::encoder::{self, check_slots, EncoderConfig, EncoderInput};
use crate::error::{CoreError, Result};
use crate::extract::{extract_with, ExtractionConfig, Subgraph};
use crate::kg::{Direction, EntityId, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `score_i = w · (ĥ_i ‖ e_i ‖ q) + b`
    Linear,
    /// One hidden layer over `(ĥ_i ‖ e_i ‖ q)`.
    Mlp,
    /// `score_i = ((ĥ_i ‖ e_i) P) · (q Q) + w · (ĥ_i ‖ e_i) + b`
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub top_m: usize,
    pub head: HeadKind,
    pub d_head: usize,
    pub activation: Activation,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            top_m: 3,
            head: HeadKind::Bilinear,
            d_head: 32,
            activation: Activation::Elu,
        }
    }
}

/// Encoder plus scoring head.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub selector: SelectorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.selector.top_m == 0 || self.selector.d_head == 0 {
            return Err(CoreError::Config("top_m and d_head must be positive".into()));
        }
        Ok(())
    }

    /// Per-candidate head input: its soft prompt row and label embedding.
    fn candidate_width(&self) -> usize {
        self.encoder.d_prompt + self.encoder.d_in
    }

    pub fn head_slot_shapes(&self) -> Vec<(String, (usize, usize))> {
        let width = self.candidate_width() + self.encoder.d_in;
        match self.selector.head {
            HeadKind::Linear => vec![("head.w".into(), (width, 1)), ("head.b".into(), (1, 1))],
            HeadKind::Mlp => vec![
                ("head.w1".into(), (width, self.selector.d_head)),
                ("head.b1".into(), (1, self.selector.d_head)),
                ("head.w2".into(), (self.selector.d_head, 1)),
                ("head.b2".into(), (1, 1)),
            ],
            HeadKind::Bilinear => vec![
                ("head.wp".into(), (self.candidate_width(), self.selector.d_head)),
                ("head.wq".into(), (self.encoder.d_in, self.selector.d_head)),
                ("head.w".into(), (self.candidate_width(), 1)),
                ("head.b".into(), (1, 1)),
            ],
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        self.encoder.init_params(&mut params, &mut rng);
        for (name, (r, c)) in self.head_slot_shapes() {
            if name.starts_with("head.b") {
                params.insert_zeros(name, r, c);
            } else {
                params.insert_xavier(name, r, c, &mut rng);
            }
        }
        Ok(params)
    }

    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        self.encoder.check_params(params)?;
        check_slots(params, &self.head_slot_shapes())
    }

    /// Freezes or unfreezes every head slot.
    pub fn set_head_frozen(&self, params: &mut ParameterStore, frozen: bool) -> Result<()> {
        for (name, _) in self.head_slot_shapes() {
            params.set_frozen(&name, frozen)?;
        }
        Ok(())
    }
}

/// Candidate logits (`n x 1`) from soft prompts, candidate labels and the
/// question. The label embeddings play the part of the textual candidate
/// list a selection LLM reads next to the soft prompt.
pub fn head_logits(
    tape: &mut Tape,
    soft_prompt: Var,
    input: &EncoderInput,
    params: &ParameterStore,
    model: &ModelConfig,
) -> Result<Var> {
    let q = tape.constant(input.question_rows())?;
    let labels = tape.constant(input.states.clone())?;
    let candidate = tape.concat_cols(&[soft_prompt, labels])?;
    let x = tape.concat_cols(&[candidate, q])?;
    let out = match model.selector.head {
        HeadKind::Linear => {
            let w = tape.param(params, "head.w")?;
            let b = tape.param(params, "head.b")?;
            let s = tape.matmul(x, w)?;
            tape.add_row(s, b)?
        }
        HeadKind::Mlp => {
            let w1 = tape.param(params, "head.w1")?;
            let b1 = tape.param(params, "head.b1")?;
            let w2 = tape.param(params, "head.w2")?;
            let b2 = tape.param(params, "head.b2")?;
            let h = tape.matmul(x, w1)?;
            let h = tape.add_row(h, b1)?;
            let h = tape.activate(h, model.selector.activation)?;
            let s = tape.matmul(h, w2)?;
            tape.add_row(s, b2)?
        }
        HeadKind::Bilinear => {
            let wp = tape.param(params, "head.wp")?;
            let wq = tape.param(params, "head.wq")?;
            let w = tape.param(params, "head.w")?;
            let b = tape.param(params, "head.b")?;
            let rows = tape.matmul(candidate, wp)?;
            let query = tape.matmul(q, wq)?;
            let prod = tape.mul(rows, query)?;
            let pair = tape.sum_cols(prod)?;
            let lin = tape.matmul(candidate, w)?;
            let s = tape.add(pair, lin)?;
            tape.add_row(s, b)?
        }
    };
    Ok(out)
}

/// Encoder and head on one tape; returns the logits.
pub fn forward(
    tape: &mut Tape,
    input: &EncoderInput,
    params: &ParameterStore,
    model: &ModelConfig,
    layers: usize,
) -> Result<(Var, encoder::EncoderTrace)> {
    let trace = encoder::encode_on_tape(tape, input, params, &model.encoder, layers)?;
    let logits = head_logits(tape, trace.soft_prompt, input, params, model)?;
    Ok((logits, trace))
}

/// Mean negative log-likelihood of the labeled candidates.
pub fn selection_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(CoreError::Training("selection loss needs at least one label".into()));
    }
    let row = tape.transpose(logits)?;
    let log_p = tape.row_log_softmax(row)?;
    let positions: Vec<(usize, usize)> = labels.iter().map(|&c| (0, c)).collect();
    let picked = tape.pick(log_p, &positions)?;
    let total = tape.reduce_sum(picked)?;
    Ok(tape.scale(total, -1.0 / labels.len() as f64)?)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntity {
    pub entity: EntityId,
    pub label: String,
    /// Row in the subgraph.
    pub index: usize,
    pub probability: f64,
    /// Incident subgraph edges as `(head, relation, tail)` labels.
    pub relations: Vec<(String, String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Top-m entities, probability descending, entity id ascending on ties.
    pub selected: Vec<SelectedEntity>,
    /// Probability of every subgraph node, in subgraph order.
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

impl SelectionResult {
    pub fn from_logits(subgraph: &Subgraph, logits: Vec<f64>, top_m: usize) -> Self {
        let probabilities = softmax(&logits);
        let mut order: Vec<usize> = (0..subgraph.len()).collect();
        order.sort_by(|&a, &b| {
            probabilities[b]
                .total_cmp(&probabilities[a])
                .then_with(|| subgraph.nodes[a].entity.cmp(&subgraph.nodes[b].entity))
        });
        let selected = order
            .into_iter()
            .take(top_m)
            .map(|i| SelectedEntity {
                entity: subgraph.nodes[i].entity,
                label: subgraph.nodes[i].label.clone(),
                index: i,
                probability: probabilities[i],
                relations: subgraph.incident_triples(i),
            })
            .collect();
        Self {
            selected,
            probabilities,
            logits,
        }
    }

    pub fn top(&self) -> Option<&SelectedEntity> {
        self.selected.first()
    }
}

/// Instruction placed ahead of the question when a text-reading model
/// selects entities. The trained head never reads it.
pub const SELECTION_INSTRUCTION: &str = "You are given a question, a list of candidate entities from a knowledge \
graph, and one soft prompt vector per candidate. Name the candidate entities most relevant for answering the \
question, most relevant first, one per line, using the labels exactly as listed.";

/// Everything a selection model reads: instruction, question, candidate
/// list and one soft prompt row per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub question: String,
    /// `(entity, label)` in subgraph node order.
    pub candidates: Vec<(EntityId, String)>,
    /// Row `i` belongs to `candidates[i]`.
    pub soft_prompt: Matrix,
    pub row_of: BTreeMap<EntityId, usize>,
}

impl PromptBundle {
    pub fn new(question: &str, subgraph: &Subgraph, soft_prompt: Matrix) -> Result<Self> {
        if soft_prompt.rows() != subgraph.len() {
            return Err(CoreError::DimensionMismatch(soft_prompt.rows(), subgraph.len()));
        }
        let candidates: Vec<(EntityId, String)> = subgraph.nodes.iter().map(|n| (n.entity, n.label.clone())).collect();
        let row_of = candidates.iter().enumerate().map(|(i, (e, _))| (*e, i)).collect();
        Ok(Self {
            instruction: SELECTION_INSTRUCTION.to_string(),
            question: question.to_string(),
            candidates,
            soft_prompt,
            row_of,
        })
    }

    /// Soft prompt row of `entity`.
    pub fn row(&self, entity: EntityId) -> Option<&[f64]> {
        self.row_of.get(&entity).map(|&i| self.soft_prompt.row(i))
    }

    /// The textual part of the prompt: instruction, question, numbered
    /// candidates. The soft prompt rows follow it as embeddings.
    pub fn text_prompt(&self) -> String {
        let mut out = format!("{}\n\nQuestion: {}\nCandidates:\n", self.instruction, self.question);
        for (i, (_, label)) in self.candidates.iter().enumerate() {
            out.push_str(&format!("{}. {label}\n", i + 1));
        }
        out
    }
}

/// Scores every subgraph node; returns the selection, the prompt bundle and
/// the per-layer attention.
pub fn score_candidates(
    subgraph: &Subgraph,
    question: &str,
    q: &Embedding,
    provider: &dyn EmbeddingProvider,
    params: &ParameterStore,
    model: &ModelConfig,
) -> Result<(SelectionResult, PromptBundle, Vec<Matrix>)> {
    let input = EncoderInput::from_subgraph(subgraph, q.clone(), provider, &model.encoder)?;
    let layers = encoder::layers_for(&model.encoder, subgraph.hops);
    let mut tape = Tape::new();
    let (logits, trace) = forward(&mut tape, &input, params, model, layers)?;
    let logits = tape.value(logits).data().to_vec();
    let result = SelectionResult::from_logits(subgraph, logits, model.selector.top_m);
    let bundle = PromptBundle::new(question, subgraph, tape.value(trace.soft_prompt).clone())?;
    let attention = trace.attention.iter().map(|a| tape.value(*a).clone()).collect();
    Ok((result, bundle, attention))
}

/// Undirected BFS distances from `source`.
fn distances(graph: &KnowledgeGraph, source: EntityId) -> Result<HashMap<EntityId, usize>> {
    let mut dist = HashMap::from([(source, 0)]);
    let mut queue = VecDeque::from([source]);
    while let Some(e) = queue.pop_front() {
        let d = dist[&e];
        for n in graph.neighbor_entities(e, Direction::Both)? {
            if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(n) {
                slot.insert(d + 1);
                queue.push_back(n);
            }
        }
    }
    Ok(dist)
}

/// Supervision targets for one question.
///
/// If some answers are adjacent to the topic, those answers are the labels.
/// Otherwise the labels are every entity other than the topic lying on a
/// shortest undirected path from the topic to a reachable answer.
pub fn build_labels(graph: &KnowledgeGraph, topic: EntityId, answers: &[EntityId]) -> Result<BTreeSet<EntityId>> {
    if !graph.has_entity(topic) {
        return Err(CoreError::UnknownEntity(topic.to_string()));
    }
    let adjacent: BTreeSet<EntityId> = graph.neighbor_entities(topic, Direction::Both)?.into_iter().collect();
    let direct: BTreeSet<EntityId> = answers.iter().copied().filter(|a| adjacent.contains(a)).collect();
    if !direct.is_empty() {
        return Ok(direct);
    }
    let from_topic = distances(graph, topic)?;
    let mut labels = BTreeSet::new();
    for &a in answers {
        let Some(&total) = from_topic.get(&a) else {
            continue;
        };
        if a == topic {
            continue;
        }
        let from_answer = distances(graph, a)?;
        for (e, &dt) in &from_topic {
            if *e == topic || dt > total {
                continue;
            }
            if from_answer.get(e).is_some_and(|&da| dt + da == total) {
                labels.insert(*e);
            }
        }
    }
    if labels.is_empty() {
        return Err(CoreError::Unlabelable(format!(
            "no answer of topic {} is reachable",
            graph.entity_label(topic)
        )));
    }
    Ok(labels)
}

/// Evidence text for the selected entities: one `(head, relation, tail)`
/// line per incident subgraph edge, each line emitted once.
pub fn verbalize(selection: &SelectionResult, subgraph: &Subgraph) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &selection.selected {
        let triples = subgraph.incident_triples(s.index);
        if triples.is_empty() {
            lines.push(format!("{} (no incident relations retrieved)", s.label));
            continue;
        }
        for (h, r, t) in triples {
            let line = format!("({h}, {r}, {t})");
            if seen.insert(line.clone()) {
                lines.push(line);
            }
        }
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Used only when records carry no split.
    pub holdout_fraction: f64,
    pub freeze_head: bool,
    /// Writes `epoch-<n>.json` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once held-out top-1 label hit reaches this value.
    pub target_heldout_hit: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.005,
            optimizer: Optimizer::Adam(Default::default()),
            seed: 7,
            holdout_fraction: 0.2,
            freeze_head: false,
            checkpoint_dir: None,
            target_heldout_hit: None,
        }
    }
}

/// A question with its subgraph and encoder input precomputed.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub question: String,
    pub topic: EntityId,
    pub subgraph: Subgraph,
    pub input: EncoderInput,
    pub layers: usize,
    /// Subgraph rows of the label entities.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    Unlabelable,
    LabelsOutsideSubgraph,
}

/// Extracts, embeds and labels one record.
pub fn prepare_example(
    graph: &KnowledgeGraph,
    provider: &dyn EmbeddingProvider,
    record: &QuestionRecord,
    extraction: &ExtractionConfig,
    model: &ModelConfig,
) -> Result<std::result::Result<PreparedExample, SkipReason>> {
    let resolved = record.resolve(graph)?;
    let labels = match build_labels(graph, resolved.topic, &resolved.answers) {
        Ok(l) => l,
        Err(CoreError::Unlabelable(_)) => return Ok(Err(SkipReason::Unlabelable)),
        Err(e) => return Err(e),
    };
    let q = provider.embed(&record.question)?;
    let subgraph = extract_with(graph, provider, &q, resolved.topic, extraction)?;
    let rows: Vec<usize> = labels.iter().filter_map(|e| subgraph.index_of(*e)).collect();
    if rows.is_empty() {
        return Ok(Err(SkipReason::LabelsOutsideSubgraph));
    }
    let input = EncoderInput::from_subgraph(&subgraph, q, provider, &model.encoder)?;
    let layers = model.encoder.layers.min(subgraph.hops).max(1);
    Ok(Ok(PreparedExample {
        question: record.question.clone(),
        topic: resolved.topic,
        subgraph,
        input,
        layers,
        labels: rows,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_hit: f64,
    pub heldout_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub train_examples: usize,
    pub heldout_examples: usize,
    pub skipped_unlabelable: usize,
    pub skipped_outside_subgraph: usize,
}

impl TrainingReport {
    pub fn final_heldout_hit(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.heldout_hit)
    }
}

/// Top-1 selection falls on a label entity.
pub fn top1_hits(example: &PreparedExample, params: &ParameterStore, model: &ModelConfig) -> Result<bool> {
    let mut tape = Tape::new();
    let (logits, _) = forward(&mut tape, &example.input, params, model, example.layers)?;
    let result = SelectionResult::from_logits(&example.subgraph, tape.value(logits).data().to_vec(), 1);
    Ok(result.top().is_some_and(|t| example.labels.contains(&t.index)))
}

fn hit_rate(examples: &[PreparedExample], params: &ParameterStore, model: &ModelConfig) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits = examples
        .par_iter()
        .map(|ex| top1_hits(ex, params, model))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / examples.len() as f64)
}

/// Splits records into (train, held-out). Explicit `split` fields win;
/// otherwise a seeded shuffle holds out `holdout_fraction` of them.
pub fn split_records(records: &[QuestionRecord], cfg: &TrainingConfig) -> (Vec<QuestionRecord>, Vec<QuestionRecord>) {
    if records.iter().any(|r| r.split.is_some()) {
        let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().partition(QuestionRecord::is_test);
        return (train, test);
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let held = (records.len() as f64 * cfg.holdout_fraction).round() as usize;
    let test = idx[..held].iter().map(|&i| records[i].clone()).collect();
    let train = idx[held..].iter().map(|&i| records[i].clone()).collect();
    (train, test)
}

/// Prepares records in parallel, dropping skipped ones into the counters.
pub fn prepare_all(
    graph: &KnowledgeGraph,
    provider: &dyn EmbeddingProvider,
    records: &[QuestionRecord],
    extraction: &ExtractionConfig,
    model: &ModelConfig,
    report: &mut TrainingReport,
) -> Result<Vec<PreparedExample>> {
    let prepared = records
        .par_iter()
        .map(|r| prepare_example(graph, provider, r, extraction, model))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for p in prepared {
        match p {
            Ok(ex) => out.push(ex),
            Err(SkipReason::Unlabelable) => report.skipped_unlabelable += 1,
            Err(SkipReason::LabelsOutsideSubgraph) => report.skipped_outside_subgraph += 1,
        }
    }
    Ok(out)
}

/// Trains encoder and head on the records' shortest-path labels.
pub fn train(
    graph: &KnowledgeGraph,
    provider: &dyn EmbeddingProvider,
    records: &[QuestionRecord],
    extraction: &ExtractionConfig,
    model: &ModelConfig,
    params: &mut ParameterStore,
    cfg: &TrainingConfig,
) -> Result<TrainingReport> {
    model.check_params(params)?;
    let (train_recs, test_recs) = split_records(records, cfg);
    let mut report = TrainingReport::default();
    let train_set = prepare_all(graph, provider, &train_recs, extraction, model, &mut report)?;
    let test_set = prepare_all(graph, provider, &test_recs, extraction, model, &mut report)?;
    if report.skipped_unlabelable + report.skipped_outside_subgraph > 0 {
        log::warn!(
            "skipped {} unlabelable and {} out-of-subgraph examples",
            report.skipped_unlabelable,
            report.skipped_outside_subgraph
        );
    }
    if train_set.is_empty() {
        return Err(CoreError::Training("no trainable examples".into()));
    }
    report.train_examples = train_set.len();
    report.heldout_examples = test_set.len();
    train_prepared(&train_set, &test_set, model, params, cfg, &mut report)?;
    Ok(report)
}

/// Training loop over already prepared examples. One optimizer step per
/// example, examples reshuffled every epoch.
pub fn train_prepared(
    train_set: &[PreparedExample],
    test_set: &[PreparedExample],
    model: &ModelConfig,
    params: &mut ParameterStore,
    cfg: &TrainingConfig,
    report: &mut TrainingReport,
) -> Result<()> {
    model.set_head_frozen(params, cfg.freeze_head)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &train_set[i];
            let mut tape = Tape::new();
            let (logits, _) = forward(&mut tape, &ex.input, params, model, ex.layers)?;
            let loss = selection_loss(&mut tape, logits, &ex.labels)?;
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(CoreError::Training(format!("non-finite loss in epoch {epoch}")));
            }
            total += value;
            let grads = tape.backward(loss)?;
            tape.accumulate_param_grads(&grads, params)?;
            cfg.optimizer.step(params, cfg.learning_rate)?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / train_set.len() as f64,
            train_hit: hit_rate(train_set, params, model)?,
            heldout_hit: hit_rate(test_set, params, model)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train hit {:.3} held-out hit {:.3}",
            stats.mean_loss,
            stats.train_hit,
            stats.heldout_hit
        );
        let done = cfg.target_heldout_hit.is_some_and(|t| stats.heldout_hit >= t);
        report.epochs.push(stats);
        if let Some(dir) = &cfg.checkpoint_dir {
            params.save(dir.join(format!("epoch-{epoch}.json")))?;
        }
        if done {
            break;
        }
    }
    Ok(())
}

/// Anything that picks evidence entities from a subgraph.
pub trait Selector: Send + Sync {
    fn select(&self, question: &str, q: &Embedding, subgraph: &Subgraph) -> Result<SelectionResult>;
}

/// Trained encoder and head.
pub struct HeadSelector {
    pub model: ModelConfig,
    pub params: ParameterStore,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl HeadSelector {
    pub fn new(model: ModelConfig, params: ParameterStore, provider: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        model.check_params(&params)?;
        Ok(Self { model, params, provider })
    }
}

impl Selector for HeadSelector {
    fn select(&self, question: &str, q: &Embedding, subgraph: &Subgraph) -> Result<SelectionResult> {
        let (result, _, _) = score_candidates(subgraph, question, q, self.provider.as_ref(), &self.params, &self.model)?;
        Ok(result)
    }
}

/// Selects fixed entities when they are present, spreading probability
/// uniformly over them. Useful for isolating the reasoning loop from the
/// learned head.
pub struct OracleSelector {
    pub targets: BTreeSet<EntityId>,
    pub top_m: usize,
}

impl Selector for OracleSelector {
    fn select(&self, _question: &str, _q: &Embedding, subgraph: &Subgraph) -> Result<SelectionResult> {
        let logits = subgraph
            .nodes
            .iter()
            .map(|n| if self.targets.contains(&n.entity) { 0.0 } else { -1e3 })
            .collect();
        Ok(SelectionResult::from_logits(subgraph, logits, self.top_m))
    }
}

/// Request sent to an external model that consumes soft prompts directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPromptRequest {
    pub question: String,
    pub bundle: PromptBundle,
    pub top_m: usize,
}

/// Client for a model that reads soft prompts and names entities.
pub trait SoftPromptClient: Send + Sync {
    /// Returns chosen candidate labels, best first.
    fn choose(&self, request: &SoftPromptRequest) -> Result<Vec<String>>;
}

/// Stand-in client: ranks candidates by the norm of their soft prompt row.
pub struct MockSoftPromptClient;

impl SoftPromptClient for MockSoftPromptClient {
    fn choose(&self, request: &SoftPromptRequest) -> Result<Vec<String>> {
        let b = &request.bundle;
        let mut order: Vec<usize> = (0..b.candidates.len()).collect();
        let norm = |i: usize| b.soft_prompt.row(i).iter().map(|x| x * x).sum::<f64>();
        order.sort_by(|&x, &y| norm(y).total_cmp(&norm(x)).then(x.cmp(&y)));
        Ok(order.into_iter().take(request.top_m).map(|i| b.candidates[i].1.clone()).collect())
    }
}

/// Routes soft prompts through a [`SoftPromptClient`] instead of the head.
pub struct ExternalSelector<C> {
    pub model: ModelConfig,
    pub params: ParameterStore,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub client: C,
}

impl<C: SoftPromptClient> Selector for ExternalSelector<C> {
    fn select(&self, question: &str, q: &Embedding, subgraph: &Subgraph) -> Result<SelectionResult> {
        let (_, bundle, _) = score_candidates(subgraph, question, q, self.provider.as_ref(), &self.params, &self.model)?;
        let request = SoftPromptRequest {
            question: question.to_string(),
            bundle,
            top_m: self.model.selector.top_m,
        };
        let chosen = self.client.choose(&request)?;
        if chosen.is_empty() {
            return Err(CoreError::Selection("soft prompt client chose no entity".into()));
        }
        // Rank r gets logit -r; unchosen candidates sit far below.
        let mut logits = vec![-50.0; subgraph.len()];
        for (rank, label) in chosen.iter().enumerate() {
            let index = subgraph
                .nodes
                .iter()
                .position(|n| &n.label == label)
                .ok_or_else(|| CoreError::UnknownEntity(label.clone()))?;
            if logits[index] > -50.0 {
                continue;
            }
            logits[index] = -(rank as f64);
        }
        let picked = logits.iter().filter(|&&l| l > -50.0).count();
        Ok(SelectionResult::from_logits(subgraph, logits, picked))
    }
}
