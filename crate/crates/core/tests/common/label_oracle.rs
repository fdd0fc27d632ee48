//! Shortest-path label oracle and the random graphs it is checked on.

use std::collections::{BTreeSet, VecDeque};

use kgprompt_core::kg::{EntityId, KnowledgeGraph};
use rand::Rng;

/// A broken ring over 100 nodes plus random chords, so ids are dense and
/// some parts are unreachable.
pub fn broken_ring<R: Rng>(rng: &mut R) -> KnowledgeGraph {
    let mut text = String::new();
    for i in 0..100 {
        if i % 13 == 12 {
            text.push_str(&format!("n{i}\tr\tn{i}\n"));
        } else {
            text.push_str(&format!("n{i}\tr\tn{}\n", (i + 1) % 100));
        }
    }
    for _ in 0..rng.gen_range(20..120) {
        text.push_str(&format!("n{}\tr\tn{}\n", rng.gen_range(0..100), rng.gen_range(0..100)));
    }
    KnowledgeGraph::parse(&text).unwrap()
}

/// Enumerates every shortest path explicitly by walking BFS parents back
/// from the answer, then applies the labeling rules.
pub fn labels_by_path_enumeration(g: &KnowledgeGraph, topic: EntityId, answers: &[EntityId]) -> Option<BTreeSet<EntityId>> {
    let n = g.num_entities();
    let mut adj = vec![BTreeSet::new(); n];
    for t in g.triples() {
        adj[t.head.0 as usize].insert(t.tail.0 as usize);
        adj[t.tail.0 as usize].insert(t.head.0 as usize);
    }
    let s = topic.0 as usize;
    // The topic never labels itself, even through a self loop.
    let direct: BTreeSet<EntityId> =
        answers.iter().copied().filter(|a| a.0 as usize != s && adj[s].contains(&(a.0 as usize))).collect();
    if !direct.is_empty() {
        return Some(direct);
    }
    let mut dist = vec![usize::MAX; n];
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
            if dist[v] == dist[u] + 1 {
                parents[v].push(u);
            }
        }
    }
    let mut out = BTreeSet::new();
    for a in answers {
        let a = a.0 as usize;
        if a == s || dist[a] == usize::MAX {
            continue;
        }
        // Expand complete paths answer -> topic.
        let mut stack = vec![vec![a]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if last == s {
                out.extend(path.iter().filter(|&&v| v != s).map(|&v| EntityId(v as u32)));
                continue;
            }
            for &p in &parents[last] {
                let mut next = path.clone();
                next.push(p);
                stack.push(next);
            }
        }
    }
    (!out.is_empty()).then_some(out)
}

