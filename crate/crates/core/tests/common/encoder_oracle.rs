//! Straight-line reimplementation of the encoder with plain loops and
//! `Vec<f64>`, used as an oracle for the tape-based version.

use std::collections::BTreeMap;

use kgprompt_core::embed::Embedding;
use kgprompt_core::encoder::{AttentionScoring, AttentionStructure, EncoderConfig, EncoderInput};
use kgprompt_tensor::{Activation, Matrix, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RawEdge = (usize, usize, Vec<f64>);

/// A random small graph: a spanning path with random extra edges, some
/// parallel and some self edges.
pub fn random_edges<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<RawEdge> {
    let rel = |rng: &mut R| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let mut edges = Vec::new();
    for i in 1..n {
        if rng.gen_bool(0.85) {
            let j = rng.gen_range(0..i);
            let r = rel(rng);
            edges.push(if rng.gen_bool(0.5) { (i, j, r) } else { (j, i, r) });
        }
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let r = rel(rng);
        edges.push((h, t, r));
    }
    edges
}

pub fn random_input<R: Rng>(rng: &mut R, n: usize, d: usize, self_loops: bool) -> (EncoderInput, Vec<RawEdge>) {
    let edges = random_edges(rng, n, d);
    let refs: Vec<(usize, usize, &[f64])> = edges.iter().map(|(h, t, r)| (*h, *t, r.as_slice())).collect();
    let states = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let question = Embedding::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let structure = AttentionStructure::new(n, &refs, d, self_loops).unwrap();
    (EncoderInput { question, states, structure }, edges)
}

/// Neighborhoods rebuilt from the raw edge list: `i -> {j -> relation}`.
pub fn neighborhoods(n: usize, edges: &[RawEdge], d: usize, self_loops: bool) -> Vec<BTreeMap<usize, Vec<f64>>> {
    let mut sums: Vec<BTreeMap<usize, (Vec<f64>, f64)>> = vec![BTreeMap::new(); n];
    for (h, t, r) in edges {
        let mut add = |a: usize, b: usize| {
            let e = sums[a].entry(b).or_insert((vec![0.0; d], 0.0));
            for k in 0..d {
                e.0[k] += r[k];
            }
            e.1 += 1.0;
        };
        add(*h, *t);
        if h != t {
            add(*t, *h);
        }
    }
    if self_loops {
        for (i, s) in sums.iter_mut().enumerate() {
            s.entry(i).or_insert((vec![0.0; d], 1.0));
        }
    }
    sums.into_iter()
        .map(|m| m.into_iter().map(|(j, (v, c))| (j, v.into_iter().map(|x| x / c).collect())).collect())
        .collect()
}

fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols()).map(|c| (0..w.rows()).map(|r| x[r] * w[(r, c)]).sum()).collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub struct OracleOutput {
    pub attention: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub soft_prompt: Vec<Vec<f64>>,
}

/// One layer in per-node loop form:
/// `h'_i = σ(Σ_j a_ij / √(d_i d_j) · h_j W + b)`.
pub fn layer(
    h: &[Vec<f64>],
    q: &[f64],
    nbrs: &[BTreeMap<usize, Vec<f64>>],
    params: &ParameterStore,
    cfg: &EncoderConfig,
    l: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = h.len();
    let (wq, wk) = if cfg.shared_projection {
        let w = params.value(&format!("gat.{l}.attn.w")).unwrap();
        (w, w)
    } else {
        (
            params.value(&format!("gat.{l}.attn.w_query")).unwrap(),
            params.value(&format!("gat.{l}.attn.w_key")).unwrap(),
        )
    };
    let mut att = vec![vec![0.0; n]; n];
    for i in 0..n {
        if nbrs[i].is_empty() {
            continue;
        }
        let u = vec_mat(&cat(q, &h[i]), wq);
        let mut raw = BTreeMap::new();
        for (&j, r) in &nbrs[i] {
            let k = vec_mat(&cat(&h[j], r), wk);
            let s = match cfg.scoring {
                AttentionScoring::ScaledDot => {
                    u.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (cfg.d_hidden as f64).sqrt()
                }
                AttentionScoring::Additive => {
                    let a = params.value(&format!("gat.{l}.attn.a")).unwrap();
                    let z: f64 = cat(&u, &k).iter().enumerate().map(|(p, x)| x * a[(p, 0)]).sum();
                    Activation::LeakyRelu.apply(z)
                }
            };
            raw.insert(j, s);
        }
        let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = raw.values().map(|s| (s - max).exp()).sum();
        for (j, s) in raw {
            att[i][j] = (s - max).exp() / z;
        }
    }
    let w = params.value(&format!("gat.{l}.w")).unwrap();
    let b = params.value(&format!("gat.{l}.b")).unwrap();
    let projected: Vec<Vec<f64>> = h.iter().map(|row| vec_mat(row, w)).collect();
    let deg: Vec<f64> = nbrs.iter().map(|m| m.len() as f64).collect();
    let mut out = vec![vec![0.0; cfg.d_hidden]; n];
    for i in 0..n {
        for c in 0..cfg.d_hidden {
            let mut acc = 0.0;
            for &j in nbrs[i].keys() {
                acc += att[i][j] / (deg[i] * deg[j]).sqrt() * projected[j][c];
            }
            out[i][c] = cfg.activation.apply(acc + b[(0, c)]);
        }
    }
    (att, out)
}

pub fn ffn(h: &[Vec<f64>], params: &ParameterStore, cfg: &EncoderConfig) -> Vec<Vec<f64>> {
    let affine = |x: &[f64], w: &str, b: &str| {
        let b = params.value(b).unwrap();
        vec_mat(x, params.value(w).unwrap()).into_iter().enumerate().map(|(c, v)| v + b[(0, c)]).collect::<Vec<f64>>()
    };
    h.iter()
        .map(|row| {
            let hidden: Vec<f64> = affine(row, "ffn.w1", "ffn.b1").into_iter().map(|v| cfg.activation.apply(v)).collect();
            affine(&hidden, "ffn.w2", "ffn.b2")
        })
        .collect()
}

pub fn encode(
    states: &Matrix,
    q: &[f64],
    nbrs: &[BTreeMap<usize, Vec<f64>>],
    params: &ParameterStore,
    cfg: &EncoderConfig,
    layers: usize,
) -> OracleOutput {
    let mut h: Vec<Vec<f64>> = (0..states.rows()).map(|i| states.row(i).to_vec()).collect();
    let mut attention = Vec::new();
    let mut all = vec![h.clone()];
    for l in 0..layers {
        let (a, next) = layer(&h, q, nbrs, params, cfg, l);
        attention.push(a);
        h = next;
        all.push(h.clone());
    }
    OracleOutput { attention, soft_prompt: ffn(&h, params, cfg), states: all }
}

pub fn max_diff(m: &Matrix, rows: &[Vec<f64>]) -> f64 {
    assert_eq!(m.rows(), rows.len());
    let mut worst: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(m.cols(), row.len());
        for (a, b) in m.row(i).iter().zip(row) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Initialized encoder parameters with non-zero biases, so oracle
/// comparisons exercise them.
pub fn params_with_biases(cfg: &EncoderConfig, seed: u64) -> ParameterStore {
    let mut params = ParameterStore::new();
    cfg.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names.iter().filter(|n| n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2")) {
        params.value_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    params
}
