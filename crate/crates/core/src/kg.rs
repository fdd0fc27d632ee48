//! Directed labeled knowledge graph with mirrored adjacency indexes.
//!
//! Entity and relation ids are dense integers assigned in first-appearance
//! order; labels live only in the catalogs. Edges are stored once, in their
//! stored direction. Reverse traversal goes through the in-adjacency index.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
    #[default]
    Both,
}

impl std::str::FromStr for Direction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "out" => Ok(Direction::Out),
            "in" => Ok(Direction::In),
            "both" => Ok(Direction::Both),
            other => Err(CoreError::Validation(format!("unknown direction `{other}`"))),
        }
    }
}

/// Which index an adjacency entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDirection {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Neighbor {
    pub relation: RelationId,
    pub entity: EntityId,
    pub direction: EdgeDirection,
}

/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    out_adj: Vec<Vec<(RelationId, EntityId)>>,
    in_adj: Vec<Vec<(RelationId, EntityId)>>,
}

/// Accumulates labeled triples, assigning ids on first appearance and
/// dropping duplicates.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    seen: HashSet<Triple>,
    triples: Vec<Triple>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        if let Some(id) = self.entity_index.get(label) {
            return *id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        id
    }

    pub fn relation(&mut self, label: &str) -> RelationId {
        if let Some(id) = self.relation_index.get(label) {
            return *id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }

    /// Returns false when the triple was already present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.entity(head);
        let r = self.relation(relation);
        let t = self.entity(tail);
        let triple = Triple::new(h, r, t);
        if self.seen.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn build(self) -> Result<KnowledgeGraph> {
        if self.triples.is_empty() {
            return Err(CoreError::EmptyGraph);
        }
        Ok(KnowledgeGraph::from_parts(
            self.entities,
            self.entity_index,
            self.relations,
            self.relation_index,
            self.triples,
        ))
    }
}

impl KnowledgeGraph {
    fn from_parts(
        entities: Vec<String>,
        entity_index: HashMap<String, EntityId>,
        relations: Vec<String>,
        relation_index: HashMap<String, RelationId>,
        mut triples: Vec<Triple>,
    ) -> Self {
        triples.sort_unstable();
        triples.dedup();
        let mut out_adj = vec![Vec::new(); entities.len()];
        let mut in_adj = vec![Vec::new(); entities.len()];
        for t in &triples {
            out_adj[t.head.index()].push((t.relation, t.tail));
            in_adj[t.tail.index()].push((t.relation, t.head));
        }
        for list in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            list.sort_unstable();
        }
        Self {
            entities,
            entity_index,
            relations,
            relation_index,
            triples,
            out_adj,
            in_adj,
        }
    }

    /// Parses the tab-separated triple format: `head<TAB>relation<TAB>tail`,
    /// one per line; `#` starts a comment line and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut builder = GraphBuilder::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CoreError::Parse {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(CoreError::Parse {
                    line: line_no,
                    reason: format!("field {} is empty", pos + 1),
                });
            }
            builder.add(fields[0].trim(), fields[1].trim(), fields[2].trim());
        }
        builder.build()
    }

    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Writes the graph back in the triple file format, in id order.
    pub fn to_triple_file(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&self.entities[t.head.index()]);
            out.push('\t');
            out.push_str(&self.relations[t.relation.index()]);
            out.push('\t');
            out.push_str(&self.entities[t.tail.index()]);
            out.push('\n');
        }
        out
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    /// Triples sorted by (head, relation, tail).
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.out_adj
            .get(triple.head.index())
            .is_some_and(|l| l.binary_search(&(triple.relation, triple.tail)).is_ok())
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        &self.entities[id.index()]
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        &self.relations[id.index()]
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn require_entity(&self, label: &str) -> Result<EntityId> {
        self.entity_id(label)
            .ok_or_else(|| CoreError::UnknownEntity(label.to_string()))
    }

    /// Exact label match, then a case-insensitive scan.
    pub fn find_entity(&self, label: &str) -> Option<EntityId> {
        let label = label.trim();
        self.entity_id(label).or_else(|| {
            self.entities
                .iter()
                .position(|l| l.eq_ignore_ascii_case(label))
                .map(|i| EntityId(i as u32))
        })
    }

    pub fn has_entity(&self, id: EntityId) -> bool {
        id.index() < self.entities.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn out_edges(&self, id: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adj[id.index()]
    }

    pub fn in_edges(&self, id: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_adj[id.index()]
    }

    pub fn out_degree(&self, id: EntityId) -> usize {
        self.out_adj[id.index()].len()
    }

    /// Adjacency entries in the requested direction(s), ordered by
    /// (relation, neighbor, direction).
    pub fn neighbors(&self, entity: EntityId, direction: Direction) -> Result<Vec<Neighbor>> {
        if !self.has_entity(entity) {
            return Err(CoreError::UnknownEntity(entity.to_string()));
        }
        let tag = |list: &[(RelationId, EntityId)], d: EdgeDirection| {
            list.iter()
                .map(move |&(relation, e)| Neighbor {
                    relation,
                    entity: e,
                    direction: d,
                })
                .collect::<Vec<_>>()
        };
        let mut out = match direction {
            Direction::Out => tag(self.out_edges(entity), EdgeDirection::Out),
            Direction::In => tag(self.in_edges(entity), EdgeDirection::In),
            Direction::Both => {
                let mut all = tag(self.out_edges(entity), EdgeDirection::Out);
                all.extend(tag(self.in_edges(entity), EdgeDirection::In));
                all
            }
        };
        out.sort_unstable();
        Ok(out)
    }

    /// Distinct neighboring entities (excluding `entity` itself), ascending.
    pub fn neighbor_entities(&self, entity: EntityId, direction: Direction) -> Result<Vec<EntityId>> {
        let set: BTreeSet<EntityId> = self
            .neighbors(entity, direction)?
            .into_iter()
            .map(|n| n.entity)
            .filter(|e| *e != entity)
            .collect();
        Ok(set.into_iter().collect())
    }

    /// A graph with the same catalogs and the given triple set.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Self {
        Self::from_parts(
            self.entities.clone(),
            self.entity_index.clone(),
            self.relations.clone(),
            self.relation_index.clone(),
            triples,
        )
    }

    /// Returns a copy with a seeded fraction of candidate edges removed.
    ///
    /// Candidates are the sorted triples touching any topic entity (or all
    /// triples). A ChaCha8 permutation seeded from `spec.seed` orders them and
    /// the first `⌊ratio·|candidates|⌋` are removed, so for a fixed seed the
    /// removed set only grows with the ratio.
    pub fn perturb(&self, spec: &PerturbationSpec, topics: &BTreeSet<EntityId>) -> Result<Perturbed> {
        spec.validate()?;
        if spec.scope == PerturbationScope::TopicEntityEdges && topics.is_empty() {
            return Err(CoreError::Validation(
                "topic-entity-edges perturbation requires at least one topic entity".into(),
            ));
        }
        let candidates: Vec<Triple> = match spec.scope {
            PerturbationScope::AllEdges => self.triples.clone(),
            PerturbationScope::TopicEntityEdges => self
                .triples
                .iter()
                .filter(|t| topics.contains(&t.head) || topics.contains(&t.tail))
                .copied()
                .collect(),
        };
        let order = removal_order(&candidates, spec.seed);
        let count = removal_count(spec.removal_ratio, candidates.len());
        let removed: HashSet<Triple> = order[..count].iter().copied().collect();
        let kept = self
            .triples
            .iter()
            .filter(|t| !removed.contains(t))
            .copied()
            .collect();
        let mut removed: Vec<Triple> = removed.into_iter().collect();
        removed.sort_unstable();
        Ok(Perturbed {
            graph: self.with_triples(kept),
            removed,
            candidates: candidates.len(),
        })
    }
}

/// Seeded permutation of the candidate edges (ChaCha8, Fisher-Yates).
pub fn removal_order(candidates: &[Triple], seed: u64) -> Vec<Triple> {
    let mut order = candidates.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// `⌊ratio · n⌋`, tolerant of binary rounding just below an integer.
pub fn removal_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor().min(n as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationScope {
    #[default]
    TopicEntityEdges,
    AllEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub removal_ratio: f64,
    pub scope: PerturbationScope,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(removal_ratio: f64, scope: PerturbationScope, seed: u64) -> Result<Self> {
        let spec = Self {
            removal_ratio,
            scope,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.removal_ratio) {
            return Err(CoreError::Validation(format!(
                "removal ratio {} outside [0, 1]",
                self.removal_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Perturbed {
    pub graph: KnowledgeGraph,
    pub removed: Vec<Triple>,
    pub candidates: usize,
}
