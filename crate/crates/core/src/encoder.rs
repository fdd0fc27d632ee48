//! Question-conditioned graph attention over an extracted subgraph, followed
//! by a two-layer feed-forward projection to one soft-prompt row per node.
//!
//! Layer `l` computes raw scores for every mask pair `(i, j)`:
//!
//! ```text
//! u_i  = W (q ‖ h_i)          k_ij = W (h_j ‖ r_ij)
//! s_ij = u_i · k_ij / √d_hidden               (scaled dot, default)
//! a_ij = softmax_j∈N(i) s_ij
//! H'   = σ( D^-1/2 Â D^-1/2 H W_l + b_l )
//! ```
//!
//! `N(i)` is the undirected neighborhood plus the self loop, `D` holds the
//! binary mask's row counts, and `Â = [a_ij]`. Expanding the matrix form row by
//! row gives `h'_i = σ(Σ_j a_ij / √(d_i d_j) · W_l h_j + b_l)`.

use std::collections::BTreeMap;

use kgprompt_tensor::{Activation, Matrix, ParameterStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, EmbeddingProvider};
use crate::error::{CoreError, Result};
use crate::extract::Subgraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScoring {
    /// `u · k / √d_hidden`
    #[default]
    ScaledDot,
    /// `LeakyReLU(a · (u ‖ k))`
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    /// Width of text embeddings (node states at layer 0, question, relations).
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_prompt: usize,
    /// Hidden width of the soft-prompt FFN.
    pub d_ffn: usize,
    pub self_loops: bool,
    pub activation: Activation,
    pub scoring: AttentionScoring,
    /// One projection for both sides of the attention score, or separate
    /// query/key projections.
    pub shared_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_in: crate::embed::DEFAULT_DIMENSION,
            d_hidden: 32,
            d_prompt: 48,
            d_ffn: 48,
            self_loops: true,
            activation: Activation::Elu,
            scoring: AttentionScoring::ScaledDot,
            shared_projection: true,
        }
    }
}

impl EncoderConfig {
    /// Full-size widths: 768-wide text embeddings, 128-wide
    /// attention layers, 2880-wide soft prompts.
    pub fn wide_profile() -> Self {
        Self {
            d_in: 768,
            d_hidden: 128,
            d_prompt: 2880,
            d_ffn: 2880,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_in == 0 || self.d_hidden == 0 || self.d_prompt == 0 || self.d_ffn == 0 {
            return Err(CoreError::Config("encoder layers and widths must be positive".into()));
        }
        Ok(())
    }

    fn layer_input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d_in
        } else {
            self.d_hidden
        }
    }

    /// Names and shapes of every encoder slot.
    pub fn slot_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            let d_l = self.layer_input_width(l);
            if self.shared_projection {
                out.push((format!("gat.{l}.attn.w"), (self.d_in + d_l, self.d_hidden)));
            } else {
                out.push((format!("gat.{l}.attn.w_query"), (self.d_in + d_l, self.d_hidden)));
                out.push((format!("gat.{l}.attn.w_key"), (d_l + self.d_in, self.d_hidden)));
            }
            if self.scoring == AttentionScoring::Additive {
                out.push((format!("gat.{l}.attn.a"), (2 * self.d_hidden, 1)));
            }
            out.push((format!("gat.{l}.w"), (d_l, self.d_hidden)));
            out.push((format!("gat.{l}.b"), (1, self.d_hidden)));
        }
        out.push(("ffn.w1".into(), (self.d_hidden, self.d_ffn)));
        out.push(("ffn.b1".into(), (1, self.d_ffn)));
        out.push(("ffn.w2".into(), (self.d_ffn, self.d_prompt)));
        out.push(("ffn.b2".into(), (1, self.d_prompt)));
        out
    }

    /// Glorot-initialized weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParameterStore, rng: &mut R) {
        for (name, (r, c)) in self.slot_shapes() {
            if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                params.insert_zeros(name, r, c);
            } else {
                params.insert_xavier(name, r, c, rng);
            }
        }
    }

    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        check_slots(params, &self.slot_shapes())
    }
}

pub(crate) fn check_slots(params: &ParameterStore, shapes: &[(String, (usize, usize))]) -> Result<()> {
    for (name, shape) in shapes {
        let slot = params
            .slot(name)
            .ok_or_else(|| CoreError::Config(format!("parameter store has no slot `{name}`")))?;
        if slot.shape() != *shape {
            return Err(CoreError::Config(format!(
                "slot `{name}` has shape {:?}, expected {shape:?}",
                slot.shape()
            )));
        }
    }
    Ok(())
}

/// Attention mask over subgraph nodes with one relation embedding per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStructure {
    n: usize,
    pairs: Vec<(usize, usize)>,
    relations: Matrix,
    degrees: Vec<usize>,
}

impl AttentionStructure {
    /// Builds the mask from directed edges `(head, tail, relation embedding)`.
    /// Each edge opens both `(head, tail)` and `(tail, head)`; parallel edges
    /// between the same pair average their relation embeddings. With
    /// `self_loops`, every `(i, i)` is opened with a zero relation vector
    /// unless the data already has a self edge.
    pub fn new(n: usize, edges: &[(usize, usize, &[f64])], rel_dim: usize, self_loops: bool) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
        for &(h, t, rel) in edges {
            if h >= n || t >= n {
                return Err(CoreError::Validation(format!("edge ({h}, {t}) outside {n} nodes")));
            }
            if rel.len() != rel_dim {
                return Err(CoreError::DimensionMismatch(rel.len(), rel_dim));
            }
            let mut add = |key: (usize, usize)| {
                let entry = acc.entry(key).or_insert_with(|| (vec![0.0; rel_dim], 0));
                entry.0.iter_mut().zip(rel).for_each(|(a, r)| *a += r);
                entry.1 += 1;
            };
            add((h, t));
            if h != t {
                add((t, h));
            }
        }
        if self_loops {
            for i in 0..n {
                acc.entry((i, i)).or_insert_with(|| (vec![0.0; rel_dim], 1));
            }
        }
        let pairs: Vec<(usize, usize)> = acc.keys().copied().collect();
        let mut relations = Matrix::zeros(pairs.len(), rel_dim);
        let mut degrees = vec![0; n];
        for (k, (key, (sum, count))) in acc.iter().enumerate() {
            for (dst, s) in relations.row_mut(k).iter_mut().zip(sum) {
                *dst = s / *count as f64;
            }
            degrees[key.0] += 1;
        }
        Ok(Self {
            n,
            pairs,
            relations,
            degrees,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Mask pairs `(i, j)` in row-major order: node `i` attends to `j`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Relation embedding for each pair, aligned with [`Self::pairs`].
    pub fn relations(&self) -> &Matrix {
        &self.relations
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n * self.n];
        for &(i, j) in &self.pairs {
            m[i * self.n + j] = true;
        }
        m
    }

    /// Nodes whose mask row is empty.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.degrees[i] == 0).collect()
    }

    /// `C_ij = 1/√(d_i d_j)` on the mask, zero elsewhere.
    pub fn normalization(&self) -> Matrix {
        let mut c = Matrix::zeros(self.n, self.n);
        for &(i, j) in &self.pairs {
            c[(i, j)] = 1.0 / ((self.degrees[i] * self.degrees[j]) as f64).sqrt();
        }
        c
    }
}

/// Everything the encoder reads besides parameters.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub question: Embedding,
    /// Layer-0 node states, one row per subgraph node.
    pub states: Matrix,
    pub structure: AttentionStructure,
}

/// Row `i` is the embedding of node `i`'s label.
pub fn init_states(subgraph: &Subgraph, provider: &dyn EmbeddingProvider) -> Result<Matrix> {
    if subgraph.is_empty() {
        return Err(CoreError::Validation("cannot encode an empty subgraph".into()));
    }
    let rows = subgraph
        .nodes
        .iter()
        .map(|n| provider.embed(&n.label).map(Embedding::into_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows)?)
}

impl EncoderInput {
    pub fn from_subgraph(
        subgraph: &Subgraph,
        question: Embedding,
        provider: &dyn EmbeddingProvider,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        if provider.dimension() != cfg.d_in {
            return Err(CoreError::Config(format!(
                "provider dimension {} does not match encoder d_in {}",
                provider.dimension(),
                cfg.d_in
            )));
        }
        let states = init_states(subgraph, provider)?;
        let rel_embeds = subgraph
            .edges
            .iter()
            .map(|e| provider.embed(&e.relation_label).map(Embedding::into_vec))
            .collect::<Result<Vec<_>>>()?;
        let edges: Vec<(usize, usize, &[f64])> = subgraph
            .edges
            .iter()
            .zip(&rel_embeds)
            .map(|(e, r)| (e.head, e.tail, r.as_slice()))
            .collect();
        let structure = AttentionStructure::new(subgraph.len(), &edges, cfg.d_in, cfg.self_loops)?;
        Ok(Self {
            question,
            states,
            structure,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.states.rows()
    }

    /// Question embedding repeated once per node.
    pub fn question_rows(&self) -> Matrix {
        let n = self.num_nodes();
        let q = self.question.as_slice();
        let mut m = Matrix::zeros(n, q.len());
        for i in 0..n {
            m.row_mut(i).copy_from_slice(q);
        }
        m
    }
}

/// Tape handles produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub soft_prompt: Var,
    pub attention: Vec<Var>,
    pub states: Vec<Var>,
    /// Number of GAT layers actually run.
    pub layers: usize,
}

/// Records the attention weights of one layer on the tape (`n x n`).
pub fn attention_weights(
    tape: &mut Tape,
    input: &EncoderInput,
    states: Var,
    params: &ParameterStore,
    cfg: &EncoderConfig,
    layer: usize,
) -> Result<Var> {
    let s = &input.structure;
    let n = s.num_nodes();
    let q = tape.constant(input.question_rows())?;
    let rel = tape.constant(s.relations().clone())?;
    let targets: Vec<usize> = s.pairs().iter().map(|p| p.0).collect();
    let sources: Vec<usize> = s.pairs().iter().map(|p| p.1).collect();

    let (w_query, w_key) = if cfg.shared_projection {
        let w = tape.param(params, &format!("gat.{layer}.attn.w"))?;
        (w, w)
    } else {
        (
            tape.param(params, &format!("gat.{layer}.attn.w_query"))?,
            tape.param(params, &format!("gat.{layer}.attn.w_key"))?,
        )
    };
    let query_in = tape.concat_cols(&[q, states])?;
    let queries = tape.matmul(query_in, w_query)?;
    let neighbor_states = tape.gather_rows(states, &sources)?;
    let key_in = tape.concat_cols(&[neighbor_states, rel])?;
    let keys = tape.matmul(key_in, w_key)?;
    let pair_queries = tape.gather_rows(queries, &targets)?;

    let scores = match cfg.scoring {
        AttentionScoring::ScaledDot => {
            let prod = tape.mul(pair_queries, keys)?;
            let dot = tape.sum_cols(prod)?;
            tape.scale(dot, 1.0 / (cfg.d_hidden as f64).sqrt())?
        }
        AttentionScoring::Additive => {
            let a = tape.param(params, &format!("gat.{layer}.attn.a"))?;
            let both = tape.concat_cols(&[pair_queries, keys])?;
            let raw = tape.matmul(both, a)?;
            tape.activate(raw, Activation::LeakyRelu)?
        }
    };
    let dense = tape.scatter_entries(scores, s.pairs(), n, n)?;
    Ok(tape.masked_row_softmax(dense, &s.mask())?)
}

/// One message-passing layer given its attention matrix.
pub fn gat_layer(
    tape: &mut Tape,
    input: &EncoderInput,
    states: Var,
    attention: Var,
    params: &ParameterStore,
    cfg: &EncoderConfig,
    layer: usize,
) -> Result<Var> {
    let norm = tape.constant(input.structure.normalization())?;
    let propagation = tape.mul(attention, norm)?;
    let w = tape.param(params, &format!("gat.{layer}.w"))?;
    let b = tape.param(params, &format!("gat.{layer}.b"))?;
    let projected = tape.matmul(states, w)?;
    let mixed = tape.matmul(propagation, projected)?;
    let shifted = tape.add_row(mixed, b)?;
    Ok(tape.activate(shifted, cfg.activation)?)
}

/// Affine → activation → affine.
pub fn ffn(tape: &mut Tape, states: Var, params: &ParameterStore, cfg: &EncoderConfig) -> Result<Var> {
    let w1 = tape.param(params, "ffn.w1")?;
    let b1 = tape.param(params, "ffn.b1")?;
    let w2 = tape.param(params, "ffn.w2")?;
    let b2 = tape.param(params, "ffn.b2")?;
    let h = tape.matmul(states, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.activate(h, cfg.activation)?;
    let out = tape.matmul(h, w2)?;
    Ok(tape.add_row(out, b2)?)
}

/// Runs `layers` GAT layers and the FFN on the tape.
pub fn encode_on_tape(
    tape: &mut Tape,
    input: &EncoderInput,
    params: &ParameterStore,
    cfg: &EncoderConfig,
    layers: usize,
) -> Result<EncoderTrace> {
    if layers > cfg.layers {
        return Err(CoreError::Config(format!(
            "requested {layers} layers but the encoder has {}",
            cfg.layers
        )));
    }
    if input.states.cols() != cfg.d_in || input.question.dim() != cfg.d_in {
        return Err(CoreError::DimensionMismatch(input.states.cols(), cfg.d_in));
    }
    cfg.check_params(params)?;
    let mut h = tape.constant(input.states.clone())?;
    let mut attention = Vec::with_capacity(layers);
    let mut states = vec![h];
    for l in 0..layers {
        let a = attention_weights(tape, input, h, params, cfg, l)?;
        h = gat_layer(tape, input, h, a, params, cfg, l)?;
        attention.push(a);
        states.push(h);
    }
    let soft_prompt = ffn(tape, h, params, cfg)?;
    Ok(EncoderTrace {
        soft_prompt,
        attention,
        states,
        layers,
    })
}

/// Number of layers to run for a subgraph built with `subgraph_hops` hops.
pub fn layers_for(cfg: &EncoderConfig, subgraph_hops: usize) -> usize {
    if subgraph_hops != cfg.layers {
        log::warn!(
            "encoder has {} layers but the subgraph was extracted with {} hops; running {}",
            cfg.layers,
            subgraph_hops,
            cfg.layers.min(subgraph_hops)
        );
    }
    cfg.layers.min(subgraph_hops).max(1)
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub soft_prompt: Matrix,
    /// Attention matrix of each layer.
    pub attention: Vec<Matrix>,
    /// Nodes whose attention row was empty.
    pub isolated: Vec<usize>,
}

pub fn encode(
    subgraph: &Subgraph,
    question: &str,
    provider: &dyn EmbeddingProvider,
    params: &ParameterStore,
    cfg: &EncoderConfig,
) -> Result<Encoded> {
    let q = provider.embed(question)?;
    let input = EncoderInput::from_subgraph(subgraph, q, provider, cfg)?;
    let layers = layers_for(cfg, subgraph.hops);
    encode_input(&input, params, cfg, layers)
}

pub fn encode_input(input: &EncoderInput, params: &ParameterStore, cfg: &EncoderConfig, layers: usize) -> Result<Encoded> {
    let mut tape = Tape::new();
    let trace = encode_on_tape(&mut tape, input, params, cfg, layers)?;
    Ok(Encoded {
        soft_prompt: tape.value(trace.soft_prompt).clone(),
        attention: trace.attention.iter().map(|a| tape.value(*a).clone()).collect(),
        isolated: input.structure.isolated(),
    })
}
