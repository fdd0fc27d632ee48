//! Relevance-filtered multi-hop subgraph extraction around a topic entity.
//!
//! Hop 1 keeps the `k1` neighbors of the topic most similar to the question.
//! Every later hop pools the neighbors of the previous hop's kept nodes and
//! keeps the `k2` best of that pool. Nodes already kept are never re-scored,
//! and the result is closed under the source graph's edges.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::embed::{relevance, top_k, Embedding, EmbeddingProvider};
use crate::error::{CoreError, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub hops: usize,
    pub k1: usize,
    pub k2: usize,
    pub direction: Direction,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            k1: 20,
            k2: 10,
            direction: Direction::Both,
        }
    }
}

impl ExtractionConfig {
    pub fn with_hops(hops: usize) -> Self {
        Self {
            hops,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 || self.k1 == 0 || self.k2 == 0 {
            return Err(CoreError::Validation(format!(
                "hops, k1 and k2 must be >= 1 (got {}, {}, {})",
                self.hops, self.k1, self.k2
            )));
        }
        if self.direction == Direction::In {
            return Err(CoreError::Validation("extraction direction must be `out` or `both`".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphNode {
    pub entity: EntityId,
    pub label: String,
    pub hop: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub head: usize,
    pub relation: RelationId,
    pub relation_label: String,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub root: EntityId,
    /// Configured hop count used to build this subgraph.
    pub hops: usize,
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<SubgraphEdge>,
    /// Set when the root had no neighbors at all.
    pub isolated_root: bool,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, entity: EntityId) -> Option<usize> {
        self.nodes.iter().position(|n| n.entity == entity)
    }

    pub fn entity_ids(&self) -> BTreeSet<EntityId> {
        self.nodes.iter().map(|n| n.entity).collect()
    }

    pub fn triples(&self) -> BTreeSet<Triple> {
        self.edges
            .iter()
            .map(|e| Triple::new(self.nodes[e.head].entity, e.relation, self.nodes[e.tail].entity))
            .collect()
    }

    /// `(head label, relation label, tail label)` for every edge touching node `idx`.
    pub fn incident_triples(&self, idx: usize) -> Vec<(String, String, String)> {
        self.edges
            .iter()
            .filter(|e| e.head == idx || e.tail == idx)
            .map(|e| {
                (
                    self.nodes[e.head].label.clone(),
                    e.relation_label.clone(),
                    self.nodes[e.tail].label.clone(),
                )
            })
            .collect()
    }

    /// Node labels matching `label` exactly, then case-insensitively.
    pub fn find_label(&self, label: &str) -> Option<EntityId> {
        let label = label.trim();
        self.nodes
            .iter()
            .find(|n| n.label == label)
            .or_else(|| self.nodes.iter().find(|n| n.label.eq_ignore_ascii_case(label)))
            .map(|n| n.entity)
    }

    /// Reorders nodes by `perm`, where new index `i` holds old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Subgraph {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Subgraph {
            root: self.root,
            hops: self.hops,
            nodes: perm.iter().map(|&old| self.nodes[old].clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| SubgraphEdge {
                    head: inverse[e.head],
                    tail: inverse[e.tail],
                    ..e.clone()
                })
                .collect(),
            isolated_root: self.isolated_root,
        }
    }
}

/// Source triples whose endpoints both lie in `nodes`.
pub fn induced_edges(graph: &KnowledgeGraph, nodes: &BTreeSet<EntityId>) -> Vec<Triple> {
    let mut out = Vec::new();
    for &h in nodes {
        if !graph.has_entity(h) {
            continue;
        }
        for &(r, t) in graph.out_edges(h) {
            if nodes.contains(&t) {
                out.push(Triple::new(h, r, t));
            }
        }
    }
    out
}

pub fn extract(
    graph: &KnowledgeGraph,
    provider: &dyn EmbeddingProvider,
    question: &str,
    topic: EntityId,
    cfg: &ExtractionConfig,
) -> Result<Subgraph> {
    let q = provider.embed(question)?;
    extract_with(graph, provider, &q, topic, cfg)
}

/// Same as [`extract`] with a precomputed question embedding.
pub fn extract_with(
    graph: &KnowledgeGraph,
    provider: &dyn EmbeddingProvider,
    q: &Embedding,
    topic: EntityId,
    cfg: &ExtractionConfig,
) -> Result<Subgraph> {
    cfg.validate()?;
    if !graph.has_entity(topic) {
        return Err(CoreError::UnknownEntity(topic.to_string()));
    }
    let root_score = relevance(q, &provider.embed(graph.entity_label(topic))?)?.score;
    let mut kept: Vec<(EntityId, usize, f64)> = vec![(topic, 0, root_score)];
    let mut kept_set: BTreeSet<EntityId> = [topic].into_iter().collect();
    let mut frontier = vec![topic];
    let isolated_root = graph.neighbor_entities(topic, cfg.direction)?.is_empty();
    if isolated_root {
        log::warn!("topic `{}` has no neighbors", graph.entity_label(topic));
    }

    for hop in 1..=cfg.hops {
        let mut pool: BTreeSet<EntityId> = BTreeSet::new();
        for &e in &frontier {
            for n in graph.neighbor_entities(e, cfg.direction)? {
                if !kept_set.contains(&n) {
                    pool.insert(n);
                }
            }
        }
        if pool.is_empty() {
            break;
        }
        let candidates = pool
            .into_iter()
            .map(|id| Ok((id, provider.embed(graph.entity_label(id))?)))
            .collect::<Result<Vec<_>>>()?;
        let width = if hop == 1 { cfg.k1 } else { cfg.k2 };
        let chosen = top_k(q, &candidates, width)?;
        frontier = chosen.iter().map(|(id, _)| *id).collect();
        for (id, score) in chosen {
            kept_set.insert(id);
            kept.push((id, hop, score));
        }
    }

    let index: HashMap<EntityId, usize> = kept.iter().enumerate().map(|(i, (e, _, _))| (*e, i)).collect();
    let edges = induced_edges(graph, &kept_set)
        .into_iter()
        .map(|t| SubgraphEdge {
            head: index[&t.head],
            relation: t.relation,
            relation_label: graph.relation_label(t.relation).to_string(),
            tail: index[&t.tail],
        })
        .collect();
    Ok(Subgraph {
        root: topic,
        hops: cfg.hops,
        nodes: kept
            .into_iter()
            .map(|(entity, hop, score)| SubgraphNode {
                entity,
                label: graph.entity_label(entity).to_string(),
                hop,
                score,
            })
            .collect(),
        edges,
        isolated_root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn graph(text: &str) -> KnowledgeGraph {
        KnowledgeGraph::parse(text).unwrap()
    }

    #[test]
    fn one_hop_without_filtering_keeps_whole_star() {
        let g = graph("A\tr\tB\nA\tr\tC\nD\tr\tA\nB\tr\tC\nC\tr\tE\n");
        let p = HashEmbedder::new(16).unwrap();
        let a = g.entity_id("A").unwrap();
        let cfg = ExtractionConfig {
            hops: 1,
            k1: 10,
            ..Default::default()
        };
        let sg = extract(&g, &p, "anything", a, &cfg).unwrap();
        let labels: BTreeSet<&str> = sg.nodes.iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["A", "B", "C", "D"].into_iter().collect());
        assert_eq!(sg.nodes[0].entity, a);
        assert_eq!(sg.nodes[0].hop, 0);
        // A->B, A->C, D->A and B->C are all induced
        assert_eq!(sg.edges.len(), 4);
    }

    #[test]
    fn isolated_topic_yields_single_node() {
        let g = graph("A\tr\tB\n");
        let p = HashEmbedder::new(16).unwrap();
        let b = g.entity_id("B").unwrap();
        let cfg = ExtractionConfig {
            direction: Direction::Out,
            ..Default::default()
        };
        let sg = extract(&g, &p, "q", b, &cfg).unwrap();
        assert_eq!(sg.len(), 1);
        assert!(sg.isolated_root);
        assert!(sg.edges.is_empty());
    }

    #[test]
    fn unknown_topic_and_bad_config_are_errors() {
        let g = graph("A\tr\tB\n");
        let p = HashEmbedder::new(16).unwrap();
        assert!(extract(&g, &p, "q", EntityId(7), &ExtractionConfig::default()).is_err());
        let cfg = ExtractionConfig {
            k1: 0,
            ..Default::default()
        };
        assert!(extract(&g, &p, "q", EntityId(0), &cfg).is_err());
    }

    #[test]
    fn induced_edges_edge_cases() {
        let g = graph("A\tr\tB\nB\tr\tC\nC\ts\tA\n");
        let single: BTreeSet<_> = [g.entity_id("A").unwrap()].into_iter().collect();
        assert!(induced_edges(&g, &single).is_empty());
        let all: BTreeSet<_> = g.entity_ids().collect();
        let mut got = induced_edges(&g, &all);
        got.sort();
        assert_eq!(got, g.triples());
    }
}
