//! Named trainable parameters and their initialization.
//!
//! A [`ParamStore`] keeps tensors in insertion order under stable
//! slash-separated names, so optimizer slots, checkpoints, and RNG draws all
//! agree across runs. Weight matrices are stored `[in x out]` for row-vector
//! right-multiplication; the recurrent weights are therefore the transpose of
//! the conventional gate-matrix orientation, holding the same coefficients.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::tensor::{Tape, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RnnKind {
    #[default]
    Gru,
    Lstm,
}

impl RnnKind {
    pub fn gate_names(&self) -> &'static [&'static str] {
        match self {
            RnnKind::Gru => &["z", "r", "s"],
            RnnKind::Lstm => &["i", "f", "o", "c"],
        }
    }
}

/// Which stages run; used for the ablated model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    /// Concatenate per-snapshot embeddings, no recurrence or attention.
    Concat,
    /// Recurrent encoder only.
    RnnOnly,
    /// Temporal self-attention directly over per-snapshot embeddings.
    AttentionOnly,
    /// Recurrence followed by temporal self-attention.
    #[default]
    Full,
}

/// Model dimensions. `embed_dim` is E = heads * head_dim; the recurrent state
/// width D equals E (the gate weights are sized for the concatenation
/// [h ‖ s], which the source formulation fixes at twice the input width).
/// The final embedding dim is d = temporal_heads * temporal_head_dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub edge_hidden: usize,
    pub temporal_heads: usize,
    pub temporal_head_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 32,
            heads: 4,
            head_dim: 8,
            edge_hidden: 32,
            temporal_heads: 4,
            temporal_head_dim: 8,
        }
    }
}

impl ModelDims {
    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn rnn_dim(&self) -> usize {
        self.embed_dim()
    }

    pub fn final_dim(&self) -> usize {
        self.temporal_heads * self.temporal_head_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("edge_hidden", self.edge_hidden),
            ("temporal_heads", self.temporal_heads),
            ("temporal_head_dim", self.temporal_head_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter '{name}'")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t.with_grad());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))?;
        if t.shape() != self.tensors[i].shape() {
            return Err(Error::Dimension(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                t.shape()
            )));
        }
        self.tensors[i] = t.with_grad();
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Sum of squared entries over every parameter; the L2 penalty operand.
    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum()
    }

    /// Registers every parameter on a fresh tape for one forward pass.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut ids = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            ids.push(tape.leaf(t)?);
        }
        Ok(BoundParams { ids, index: self.index.clone() })
    }

    /// Gradients aligned with store order, ready for the optimizer.
    pub fn collect_grads(
        &self,
        bound: &BoundParams,
        grads: &crate::tensor::Gradients,
    ) -> Vec<Option<Tensor>> {
        bound.ids.iter().map(|&id| grads.get(id)).collect()
    }
}

/// Tape handles for one bound pass, keyed by parameter name.
#[derive(Debug)]
pub struct BoundParams {
    ids: Vec<TensorId>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    /// Handles in store order; the L2 penalty ranges over these.
    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.index
            .get(name)
            .map(|&i| self.ids[i])
            .ok_or_else(|| Error::Contract(format!("unbound parameter '{name}'")))
    }
}

/// Uniform Glorot initialization for an `[rows x cols]` weight.
pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![rows, cols], data, true).expect("finite init")
}

fn zeros_row(cols: usize) -> Tensor {
    Tensor::zeros(1, cols).with_grad()
}

fn ones_row(cols: usize) -> Tensor {
    Tensor::new(vec![1, cols], vec![1.0; cols], true).expect("finite literal")
}

pub mod names {
    pub fn feature_table() -> String {
        "feat/table".to_string()
    }
    pub fn node_attn_w(r: usize, head: usize) -> String {
        format!("node_attn/r{r}/h{head}/w")
    }
    pub fn node_attn_a(r: usize, head: usize) -> String {
        format!("node_attn/r{r}/h{head}/a")
    }
    pub fn edge_attn_w() -> String {
        "edge_attn/w".to_string()
    }
    pub fn edge_attn_b() -> String {
        "edge_attn/b".to_string()
    }
    pub fn edge_attn_q() -> String {
        "edge_attn/q".to_string()
    }
    pub fn rnn_w(gate: &str) -> String {
        format!("rnn/w_{gate}")
    }
    pub fn rnn_b(gate: &str) -> String {
        format!("rnn/b_{gate}")
    }
    pub fn temporal_wq(head: usize) -> String {
        format!("temporal/h{head}/wq")
    }
    pub fn temporal_wk(head: usize) -> String {
        format!("temporal/h{head}/wk")
    }
    pub fn temporal_wv(head: usize) -> String {
        format!("temporal/h{head}/wv")
    }
}

/// Builds the full parameter set for the chosen variant. Draws come from one
/// seeded stream in insertion order, so (seed, dims, variant) fixes every
/// initial value.
pub fn init_params(
    seed: u64,
    num_nodes: usize,
    num_edge_types: usize,
    dims: &ModelDims,
    rnn: RnnKind,
    variant: TemporalVariant,
) -> Result<ParamStore> {
    dims.validate()?;
    if num_nodes == 0 || num_edge_types == 0 {
        return Err(Error::Config("graph must have nodes and edge types".into()));
    }
    let mut rng = stream(seed, tag::PARAM_INIT);
    let mut p = ParamStore::new();
    let e = dims.embed_dim();
    let d = dims.rnn_dim();

    // Trainable per-node input features (id-embedding mode).
    let limit = 0.5 / dims.feature_dim as f64;
    let table: Vec<f64> = (0..num_nodes * dims.feature_dim)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    p.insert(
        &names::feature_table(),
        Tensor::new(vec![num_nodes, dims.feature_dim], table, true)?,
    )?;

    for r in 0..num_edge_types {
        for h in 0..dims.heads {
            p.insert(
                &names::node_attn_w(r, h),
                glorot(&mut rng, dims.feature_dim, dims.head_dim),
            )?;
            p.insert(&names::node_attn_a(r, h), glorot(&mut rng, 2 * dims.head_dim, 1))?;
        }
    }

    p.insert(&names::edge_attn_w(), glorot(&mut rng, e, dims.edge_hidden))?;
    p.insert(&names::edge_attn_b(), zeros_row(dims.edge_hidden))?;
    p.insert(&names::edge_attn_q(), glorot(&mut rng, dims.edge_hidden, 1))?;

    if matches!(variant, TemporalVariant::RnnOnly | TemporalVariant::Full) {
        for gate in rnn.gate_names() {
            p.insert(&names::rnn_w(gate), glorot(&mut rng, e + d, d))?;
            // Forget-gate bias starts at 1 so the cell state persists early
            // in training; everything else starts neutral.
            let bias = if matches!(rnn, RnnKind::Lstm) && *gate == "f" {
                ones_row(d)
            } else {
                zeros_row(d)
            };
            p.insert(&names::rnn_b(gate), bias)?;
        }
    }

    if matches!(variant, TemporalVariant::AttentionOnly | TemporalVariant::Full) {
        // AttentionOnly attends over the per-snapshot embeddings themselves.
        let attn_in = if matches!(variant, TemporalVariant::Full) { d } else { e };
        for h in 0..dims.temporal_heads {
            p.insert(&names::temporal_wq(h), glorot(&mut rng, attn_in, dims.temporal_head_dim))?;
            p.insert(&names::temporal_wk(h), glorot(&mut rng, attn_in, dims.temporal_head_dim))?;
            p.insert(&names::temporal_wv(h), glorot(&mut rng, attn_in, dims.temporal_head_dim))?;
        }
    }

    Ok(p)
}
