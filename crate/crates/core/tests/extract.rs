use std::collections::{BTreeMap, BTreeSet};

use kgprompt_core::embed::{tokenize, EmbeddingProvider, HashEmbedder, TableEmbedder};
use kgprompt_core::extract::{extract, induced_edges, ExtractionConfig};
use kgprompt_core::kg::{Direction, EntityId, KnowledgeGraph, PerturbationScope, PerturbationSpec, Triple};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cosine of two texts recomputed from raw token sign vectors.
fn hand_score(p: &HashEmbedder, a: &str, b: &str) -> f64 {
    let sum = |text: &str| {
        let mut v = vec![0.0; p.dimension()];
        for tok in tokenize(text) {
            for (x, s) in v.iter_mut().zip(p.token_signs(&tok)) {
                *x += s;
            }
        }
        v
    };
    let (u, w) = (sum(a), sum(b));
    let dot: f64 = u.iter().zip(&w).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(&u) * n(&w))
}

#[test]
fn star_keeps_the_two_labels_sharing_question_tokens() {
    let leaves = [
        "river Nile", "river Thames", "quartz", "violin", "pepper", "glacier", "tuesday", "saffron", "harbor", "lantern",
    ];
    let text: String = leaves.iter().map(|l| format!("A\tlinks\t{l}\n")).collect();
    let g = KnowledgeGraph::parse(&text).unwrap();
    let p = HashEmbedder::new(64).unwrap();
    let question = "which river flows";

    let mut ranked: Vec<(f64, &str)> = leaves.iter().map(|l| (hand_score(&p, question, l), *l)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top2: BTreeSet<&str> = ranked[..2].iter().map(|r| r.1).collect();
    assert_eq!(top2, ["river Nile", "river Thames"].into_iter().collect(), "{ranked:?}");

    let cfg = ExtractionConfig { hops: 1, k1: 2, ..Default::default() };
    let sg = extract(&g, &p, question, g.entity_id("A").unwrap(), &cfg).unwrap();
    let kept: BTreeSet<&str> = sg.nodes.iter().map(|n| n.label.as_str()).collect();
    assert_eq!(kept, ["A", "river Nile", "river Thames"].into_iter().collect());
    for n in &sg.nodes[1..] {
        assert!((n.score - hand_score(&p, question, &n.label)).abs() < 1e-12);
    }
}

fn knews_graph() -> KnowledgeGraph {
    KnowledgeGraph::parse(
        "Knews\towned by\tSPP Media Group\n\
         SPP Media Group\toperates in\tCyprus\n\
         Cyprus\tofficial language\tGreek\n\
         Knews\tgenre\tTabloid\n\
         Knews\tfounded\t2001\n\
         SPP Media Group\tindustry\tPublishing\n",
    )
    .unwrap()
}

#[test]
fn two_hops_bridge_a_missing_direct_edge() {
    let g = knews_graph();
    let (knews, cyprus) = (g.entity_id("Knews").unwrap(), g.entity_id("Cyprus").unwrap());
    assert!(!g.neighbor_entities(knews, Direction::Both).unwrap().contains(&cyprus));
    let p = HashEmbedder::new(64).unwrap();
    let q = "What language do the people in the area where the newspaper Knews is circulated speak?";

    let one = extract(&g, &p, q, knews, &ExtractionConfig::with_hops(1)).unwrap();
    assert!(one.index_of(cyprus).is_none());
    let two = extract(&g, &p, q, knews, &ExtractionConfig::with_hops(2)).unwrap();
    let i = two.index_of(cyprus).expect("Cyprus reached at two hops");
    assert_eq!(two.nodes[i].hop, 2);
    let spp = g.entity_id("SPP Media Group").unwrap();
    let operates = g.relation_id("operates in").unwrap();
    assert!(two.triples().contains(&Triple::new(spp, operates, cyprus)));
}

#[test]
fn table_provider_ranks_by_its_vectors() {
    let g = knews_graph();
    // Only Tabloid points along the question direction.
    let table = TableEmbedder::parse(
        "q\t1,0\nKnews\t0,1\nSPP Media Group\t0.1,1\nTabloid\t1,0.1\n2001\t0,1\nCyprus\t0,1\nGreek\t0,1\nPublishing\t0,1\n",
    )
    .unwrap();
    let cfg = ExtractionConfig { hops: 1, k1: 1, ..Default::default() };
    let sg = extract(&g, &table, "q", g.entity_id("Knews").unwrap(), &cfg).unwrap();
    assert_eq!(sg.nodes[1].label, "Tabloid");
    assert!((sg.nodes[1].score - 1.0 / 1.01f64.sqrt()).abs() < 1e-12);
}

fn random_graph(rng: &mut ChaCha8Rng, entities: usize, triples: usize) -> KnowledgeGraph {
    let words = ["red", "blue", "river", "city", "lake", "king", "song", "film", "bird", "stone"];
    let mut text = String::new();
    for _ in 0..triples {
        let h = rng.gen_range(0..entities);
        let t = rng.gen_range(0..entities);
        let r = rng.gen_range(0..6);
        let label = |i: usize| format!("{} {} n{i}", words[i % 10], words[(i / 10) % 10]);
        text.push_str(&format!("{}\tr{r}\t{}\n", label(h), label(t)));
    }
    KnowledgeGraph::parse(&text).unwrap()
}

/// Pooled per-hop selection written out with full sorts.
fn oracle_nodes(
    g: &KnowledgeGraph,
    p: &dyn EmbeddingProvider,
    q: &str,
    topic: EntityId,
    cfg: &ExtractionConfig,
) -> BTreeMap<EntityId, usize> {
    let qv = p.embed(q).unwrap();
    let score = |e: EntityId| {
        let v = p.embed(g.entity_label(e)).unwrap();
        let dot: f64 = qv.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        let denom = qv.norm() * v.norm();
        if denom == 0.0 { 0.0 } else { (dot / denom).clamp(-1.0, 1.0) }
    };
    let mut kept = BTreeMap::from([(topic, 0)]);
    let mut frontier = vec![topic];
    for hop in 1..=cfg.hops {
        let mut pool: Vec<EntityId> = Vec::new();
        for &f in &frontier {
            for t in g.triples() {
                for (a, b) in [(t.head, t.tail), (t.tail, t.head)] {
                    if a == f && !kept.contains_key(&b) && !pool.contains(&b) {
                        pool.push(b);
                    }
                }
            }
        }
        let mut scored: Vec<(f64, EntityId)> = pool.into_iter().map(|e| (score(e), e)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(if hop == 1 { cfg.k1 } else { cfg.k2 });
        frontier = scored.iter().map(|s| s.1).collect();
        for &e in &frontier {
            kept.insert(e, hop);
        }
    }
    kept
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extraction_matches_a_sorting_oracle(seed in any::<u64>(), hops in 1usize..=3, k1 in 1usize..6, k2 in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 60, 150);
        let p = HashEmbedder::new(32).unwrap();
        let topic = EntityId(rng.gen_range(0..g.num_entities() as u32));
        let cfg = ExtractionConfig { hops, k1, k2, direction: Direction::Both };
        let q = "which river city";
        let sg = extract(&g, &p, q, topic, &cfg).unwrap();
        let got: BTreeMap<EntityId, usize> = sg.nodes.iter().map(|n| (n.entity, n.hop)).collect();
        prop_assert_eq!(&got, &oracle_nodes(&g, &p, q, topic, &cfg));

        // Structural invariants.
        prop_assert_eq!(sg.nodes[0].entity, topic);
        prop_assert_eq!(sg.nodes[0].hop, 0);
        let nodes = sg.entity_ids();
        let expected: BTreeSet<Triple> = g.triples().iter().filter(|t| nodes.contains(&t.head) && nodes.contains(&t.tail)).copied().collect();
        prop_assert_eq!(sg.triples(), expected);
        for h in 1..=hops {
            let count = sg.nodes.iter().filter(|n| n.hop == h).count();
            let width = if h == 1 { k1 } else { k2 };
            prop_assert!(count <= width);
        }
        for n in sg.nodes.iter().filter(|n| n.hop > 0) {
            let adj = g.neighbor_entities(n.entity, Direction::Both).unwrap();
            prop_assert!(sg.nodes.iter().any(|m| m.hop + 1 == n.hop && adj.contains(&m.entity)));
        }
    }

    #[test]
    fn two_hop_node_sets_nest_as_k2_grows(seed in any::<u64>(), k2 in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 80, 200);
        let p = HashEmbedder::new(32).unwrap();
        let topic = EntityId(rng.gen_range(0..g.num_entities() as u32));
        let narrow = ExtractionConfig { hops: 2, k1: 3, k2, direction: Direction::Both };
        let wide = ExtractionConfig { k2: k2 + 1, ..narrow };
        let a = extract(&g, &p, "blue stone song", topic, &narrow).unwrap().entity_ids();
        let b = extract(&g, &p, "blue stone song", topic, &wide).unwrap().entity_ids();
        prop_assert!(a.is_subset(&b));
    }

    #[test]
    fn perturbed_extraction_edges_are_a_subset(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 60, 200);
        let p = HashEmbedder::new(32).unwrap();
        let topic = EntityId(rng.gen_range(0..g.num_entities() as u32));
        let all: BTreeSet<EntityId> = g.entity_ids().collect();
        let perturbed = g.perturb(&PerturbationSpec::new(0.2, PerturbationScope::AllEdges, seed).unwrap(), &all).unwrap().graph;
        let cfg = ExtractionConfig::default();
        let before = extract(&g, &p, "red lake", topic, &cfg).unwrap();
        let after = extract(&perturbed, &p, "red lake", topic, &cfg).unwrap();
        if before.entity_ids() == after.entity_ids() {
            prop_assert!(after.triples().is_subset(&before.triples()));
        }
    }

    #[test]
    fn induced_edges_equal_a_brute_filter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 100, 500);
        let mut ids: Vec<EntityId> = g.entity_ids().collect();
        use rand::seq::SliceRandom;
        ids.shuffle(&mut rng);
        let subset: BTreeSet<EntityId> = ids.into_iter().take(50).collect();
        let mut got = induced_edges(&g, &subset);
        got.sort();
        let want: Vec<Triple> = g.triples().iter().filter(|t| subset.contains(&t.head) && subset.contains(&t.tail)).copied().collect();
        prop_assert_eq!(got, want);
    }
}
