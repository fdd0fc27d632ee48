//! Seeded synthetic benchmark: planted multi-hop answer paths inside a graph
//! of random distractor edges, with templated questions and a path script for
//! the scripted answer backend.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BenchmarkScript, PathScript};
use crate::dataset::{save_records, QuestionRecord};
use crate::error::{CoreError, Result};
use crate::kg::{GraphBuilder, KnowledgeGraph};

const TYPE_WORDS: [&str; 20] = [
    "city", "country", "person", "river", "company", "film", "book", "language", "team", "school", "mountain", "island",
    "song", "album", "award", "party", "museum", "region", "planet", "instrument",
];

const RELATION_WORDS: [&str; 30] = [
    "located_in",
    "born_in",
    "capital_of",
    "founded_by",
    "directed_by",
    "written_by",
    "member_of",
    "plays_for",
    "spoken_in",
    "part_of",
    "flows_through",
    "headquartered_in",
    "studied_at",
    "won_award",
    "performed_by",
    "produced_by",
    "borders",
    "named_after",
    "owned_by",
    "allied_with",
    "composed_by",
    "released_by",
    "governed_by",
    "discovered_by",
    "adjacent_to",
    "influenced_by",
    "married_to",
    "coached_by",
    "hosted_by",
    "designed_by",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VocabularyStyle {
    /// Pronounceable names followed by a type word, e.g. `Kavemo city`.
    #[default]
    Syllabic,
    /// `entity_<n> <type>`.
    Indexed,
    /// Two name words drawn from a shared pool of syllabic words, e.g.
    /// `Kave Romu city`, so no single name token identifies an entity.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Questions whose answer is 1, 2 and 3 hops from the topic.
    pub questions_per_depth: [usize; 3],
    /// Random edges per entity.
    pub distractor_density: f64,
    /// Plant a two-edge detour from the topic to the first gold entity, so
    /// that entity stays reachable when the direct edge is missing.
    pub detours: bool,
    /// Fraction of questions whose first gold edge is left out of the graph.
    pub missing_edge_fraction: f64,
    /// Fraction of questions marked `test`.
    pub test_fraction: f64,
    pub vocabulary: VocabularyStyle,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_entities: 2000,
            num_relations: 30,
            questions_per_depth: [0, 300, 0],
            distractor_density: 3.0,
            detours: true,
            missing_edge_fraction: 0.0,
            test_fraction: 0.2,
            vocabulary: VocabularyStyle::Syllabic,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    /// Entities consumed by planted paths.
    pub fn planted_entities(&self) -> usize {
        self.questions_per_depth
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let depth = i + 1;
                n * (depth + 1 + usize::from(self.detours))
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.questions_per_depth.iter().sum();
        if total == 0 {
            return Err(CoreError::Infeasible("no questions requested".into()));
        }
        if self.num_relations < 3 {
            return Err(CoreError::Infeasible("need at least 3 relations".into()));
        }
        let planted = self.planted_entities();
        if planted > self.num_entities {
            return Err(CoreError::Infeasible(format!(
                "{total} questions need {planted} path entities but only {} entities are available",
                self.num_entities
            )));
        }
        if !(0.0..=1.0).contains(&self.missing_edge_fraction) || !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(CoreError::Infeasible("fractions must lie in [0, 1]".into()));
        }
        if self.missing_edge_fraction > 0.0 && !self.detours {
            return Err(CoreError::Infeasible(
                "missing gold edges need detours to keep answers reachable".into(),
            ));
        }
        if self.missing_edge_fraction > 0.0 && self.questions_per_depth[0] > 0 {
            return Err(CoreError::Infeasible("one-hop questions cannot lose their only edge".into()));
        }
        if !(self.distractor_density >= 0.0 && self.distractor_density.is_finite()) {
            return Err(CoreError::Infeasible("distractor density must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub graph: KnowledgeGraph,
    pub records: Vec<QuestionRecord>,
    pub script: BenchmarkScript,
    /// Questions whose first gold edge was left out.
    pub missing_edge_questions: BTreeSet<usize>,
}

impl SyntheticBenchmark {
    /// Writes `graph.tsv`, `questions.jsonl` and `script.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("graph.tsv"), self.graph.to_triple_file())?;
        save_records(&self.records, dir.join("questions.jsonl"))?;
        self.script.save(dir.join("script.json"))
    }
}

fn relation_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match RELATION_WORDS.get(i) {
            Some(w) => w.to_string(),
            None => format!("relation_{i}"),
        })
        .collect()
}

fn syllabic_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        s.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    let mut chars = s.chars();
    let first = chars.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn entity_names(n: usize, style: VocabularyStyle, rng: &mut ChaCha8Rng) -> Vec<String> {
    // Pool size keeps every (word, word, type) combination plentiful.
    let pool: Vec<String> = match style {
        VocabularyStyle::Pooled => {
            let size = ((n as f64 / TYPE_WORDS.len() as f64).sqrt().ceil() as usize * 3).max(8);
            let mut words = BTreeSet::new();
            while words.len() < size {
                words.insert(syllabic_word(rng));
            }
            words.into_iter().collect()
        }
        _ => Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let ty = TYPE_WORDS[rng.gen_range(0..TYPE_WORDS.len())];
        let name = match style {
            VocabularyStyle::Indexed => format!("entity_{}", out.len()),
            VocabularyStyle::Syllabic => syllabic_word(rng),
            VocabularyStyle::Pooled => {
                let a = &pool[rng.gen_range(0..pool.len())];
                let b = &pool[rng.gen_range(0..pool.len())];
                format!("{a} {b}")
            }
        };
        let label = format!("{name} {ty}");
        if seen.insert(label.clone()) {
            out.push(label);
        }
    }
    out
}

fn type_of(label: &str) -> &str {
    label.rsplit(' ').next().unwrap_or(label)
}

/// The label without its trailing type word.
fn name_of(label: &str) -> &str {
    label.rsplit_once(' ').map_or(label, |(name, _)| name)
}

fn question_text(labels: &[String], relations: &[String]) -> String {
    // labels: topic, intermediates..., answer; relations along the path
    let d = relations.len();
    let mut text = format!(
        "Which {} is the {} of",
        type_of(&labels[d]),
        relations[d - 1]
    );
    for i in (1..d).rev() {
        text.push_str(&format!(" the {} that is the {} of", type_of(&labels[i]), relations[i - 1]));
    }
    text.push_str(&format!(" {}?", name_of(&labels[0])));
    text
}

/// Undirected distance between two nodes avoiding `blocked`, capped at
/// `limit + 1`, with one shortest path when found.
fn bounded_distance(
    adj: &HashMap<usize, HashSet<usize>>,
    from: usize,
    to: usize,
    limit: usize,
    blocked: &HashSet<usize>,
) -> (usize, Vec<usize>) {
    let mut prev: HashMap<usize, usize> = HashMap::from([(from, from)]);
    let mut queue = VecDeque::from([(from, 0)]);
    while let Some((n, d)) = queue.pop_front() {
        if n == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = prev[&cur];
                path.push(cur);
            }
            path.reverse();
            return (d, path);
        }
        if d >= limit {
            continue;
        }
        for &m in adj.get(&n).into_iter().flatten() {
            if blocked.contains(&m) {
                continue;
            }
            if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(m) {
                e.insert(n);
                queue.push_back((m, d + 1));
            }
        }
    }
    (limit + 1, Vec::new())
}

struct Planted {
    depth: usize,
    path: Vec<usize>,
    relations: Vec<usize>,
    missing_first_edge: bool,
}

impl Planted {
    /// Without its first edge the answer is one hop further, via the detour.
    fn reachable_depth(&self) -> usize {
        self.depth + usize::from(self.missing_first_edge)
    }

    /// Distance checks that keep the planted path the only shortest one:
    /// nothing may reach the answer sooner, and with the path interior
    /// blocked nothing may reach it as soon.
    fn distance_checks(&self) -> Vec<(usize, HashSet<usize>)> {
        let mut checks = vec![(self.reachable_depth(), HashSet::new())];
        if !self.missing_first_edge && self.depth >= 2 {
            checks.push((self.depth + 1, self.path[1..self.depth].iter().copied().collect()));
        }
        checks
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = entity_names(spec.num_entities, spec.vocabulary, &mut rng);
    let relations = relation_names(spec.num_relations);

    let mut pool: Vec<usize> = (0..spec.num_entities).collect();
    pool.shuffle(&mut rng);
    let mut next_entity = pool.into_iter();

    // (head, relation, tail) as indices
    let mut planted_edges: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut questions = Vec::new();
    let total: usize = spec.questions_per_depth.iter().sum();
    let missing_count = (spec.missing_edge_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let missing: BTreeSet<usize> = order[..missing_count].iter().copied().collect();

    for (i, &count) in spec.questions_per_depth.iter().enumerate() {
        let depth = i + 1;
        for _ in 0..count {
            let qid = questions.len();
            let path: Vec<usize> = (0..=depth).map(|_| next_entity.next().expect("validated")).collect();
            let rels: Vec<usize> = rand::seq::index::sample(&mut rng, spec.num_relations, depth.min(spec.num_relations))
                .into_iter()
                .cycle()
                .take(depth)
                .collect();
            let missing_first_edge = missing.contains(&qid);
            for h in 0..depth {
                if h == 0 && missing_first_edge {
                    continue;
                }
                planted_edges.insert((path[h], rels[h], path[h + 1]));
            }
            if spec.detours {
                let via = next_entity.next().expect("validated");
                planted_edges.insert((path[0], rng.gen_range(0..spec.num_relations), via));
                planted_edges.insert((via, rng.gen_range(0..spec.num_relations), path[1]));
            }
            questions.push(Planted {
                depth,
                path,
                relations: rels,
                missing_first_edge,
            });
        }
    }

    let mut adj: HashMap<usize, HashSet<usize>> = HashMap::new();
    let link = |adj: &mut HashMap<usize, HashSet<usize>>, a: usize, b: usize| {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    };
    for &(h, _, t) in &planted_edges {
        link(&mut adj, h, t);
    }
    // A missing gold edge must stay missing even as a distractor.
    let forbidden: HashSet<(usize, usize)> = questions
        .iter()
        .filter(|q| q.missing_first_edge)
        .flat_map(|q| [(q.path[0], q.path[1]), (q.path[1], q.path[0])])
        .collect();

    let n_distractors = (spec.distractor_density * spec.num_entities as f64).round() as usize;
    let mut distractors: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut tries = 0;
    while distractors.len() < n_distractors && tries < n_distractors * 20 + 100 {
        tries += 1;
        let h = rng.gen_range(0..spec.num_entities);
        let t = rng.gen_range(0..spec.num_entities);
        let r = rng.gen_range(0..spec.num_relations);
        if h == t || forbidden.contains(&(h, t)) || adj.get(&h).is_some_and(|s| s.contains(&t)) {
            continue;
        }
        distractors.insert((h, r, t));
        link(&mut adj, h, t);
    }

    // Remove distractors that shorten a topic-answer distance below its depth.
    loop {
        let mut removed_any = false;
        for (q, (want, blocked)) in questions.iter().flat_map(|q| q.distance_checks().into_iter().map(move |c| (q, c))) {
            let (topic, answer) = (q.path[0], q.path[q.depth]);
            let (d, path) = bounded_distance(&adj, topic, answer, want, &blocked);
            if d >= want {
                continue;
            }
            let culprit = path.windows(2).find_map(|w| {
                distractors
                    .iter()
                    .find(|&&(h, _, t)| (h, t) == (w[0], w[1]) || (h, t) == (w[1], w[0]))
                    .copied()
            });
            let Some(edge) = culprit else {
                return Err(CoreError::Infeasible("planted paths overlap".into()));
            };
            distractors.remove(&edge);
            let (h, _, t) = edge;
            let still_linked = planted_edges
                .iter()
                .chain(distractors.iter())
                .any(|&(a, _, b)| (a, b) == (h, t) || (a, b) == (t, h));
            if !still_linked {
                adj.get_mut(&h).map(|s| s.remove(&t));
                adj.get_mut(&t).map(|s| s.remove(&h));
            }
            removed_any = true;
        }
        if !removed_any {
            break;
        }
    }

    let mut builder = GraphBuilder::new();
    for name in &names {
        builder.entity(name);
    }
    for r in &relations {
        builder.relation(r);
    }
    for &(h, r, t) in planted_edges.iter().chain(distractors.iter()) {
        builder.add(&names[h], &relations[r], &names[t]);
    }
    let graph = builder.build()?;

    let test_count = (spec.test_fraction * questions.len() as f64).round() as usize;
    let mut split_order: Vec<usize> = (0..questions.len()).collect();
    split_order.shuffle(&mut rng);
    let test: BTreeSet<usize> = split_order[..test_count].iter().copied().collect();

    let mut records = Vec::new();
    let mut script = BenchmarkScript::default();
    for (qid, q) in questions.iter().enumerate() {
        let labels: Vec<String> = q.path.iter().map(|&e| names[e].clone()).collect();
        let rels: Vec<String> = q.relations.iter().map(|&r| relations[r].clone()).collect();
        let text = question_text(&labels, &rels);
        let answer = labels[q.depth].clone();
        records.push(QuestionRecord {
            question: text.clone(),
            topic_entity: labels[0].clone(),
            answers: vec![answer.clone()],
            depth: Some(q.reachable_depth()),
            split: Some(if test.contains(&qid) { "test" } else { "train" }.into()),
        });
        let bridge = if q.depth == 1 { answer.clone() } else { labels[q.depth - 1].clone() };
        script.questions.push(PathScript {
            question: text,
            path: labels,
            bridge,
            answer,
        });
    }
    Ok(SyntheticBenchmark {
        graph,
        records,
        script,
        missing_edge_questions: questions
            .iter()
            .enumerate()
            .filter(|(_, q)| q.missing_first_edge)
            .map(|(i, _)| i)
            .collect(),
    })
}
