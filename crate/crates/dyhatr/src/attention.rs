//! Per-snapshot hierarchical attention.
//!
//! Stage one runs multi-head graph attention inside each edge-type
//! sub-network: for node i with sampled typed neighbors j, the logit is
//! LeakyReLU(a_topᵀ(W x_i) + a_botᵀ(W x_j)), softmax-normalized per node, and
//! the head output is ELU of the attention-weighted sum of W x_j. Stage two
//! fuses the per-type representations with a shared tanh scorer: beta is a
//! softmax over the edge types available to the node, and the snapshot
//! embedding is the beta-weighted sum. Nodes absent from the snapshot get a
//! zero row so downstream sequences keep full length.
//!
//! Neighbor sampling happens up front in [`plan_snapshot`]; the forward pass
//! is a deterministic function of (plan, parameters).

use crate::error::{Error, Result};
use crate::graph::{NodeId, Snapshot};
use crate::params::{names, BoundParams, ModelDims};
use crate::rng::{substream, tag};
use crate::tensor::{AttentionMask, Tape, TensorId};

/// Default negative slope of the logit activation.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Presampled neighborhoods for one snapshot: per edge type, the nodes that
/// participate and one sampled multiset per head per node (self included).
#[derive(Debug, Clone)]
pub struct SnapshotPlan {
    pub types: Vec<TypePlan>,
}

#[derive(Debug, Clone)]
pub struct TypePlan {
    /// Ascending node ids with at least one neighbor of this type.
    pub nodes: Vec<NodeId>,
    /// `per_head[h][i]` is the neighbor multiset for `nodes[i]`: k sampled
    /// neighbors plus the node itself.
    pub per_head: Vec<Vec<Vec<NodeId>>>,
}

/// Samples neighborhoods for snapshot `t`. Each (edge type, head) pair draws
/// from its own RNG substream keyed by (epoch, t, r, head), so edits to one
/// edge type never shift the samples of another.
pub fn plan_snapshot(
    snap: &Snapshot,
    num_edge_types: usize,
    heads: usize,
    k: usize,
    seed: u64,
    epoch: u64,
    t: usize,
) -> SnapshotPlan {
    let types = (0..num_edge_types)
        .map(|r| {
            let nodes: Vec<NodeId> = snap
                .present_nodes()
                .iter()
                .copied()
                .filter(|&v| !snap.neighbors_typed(v, r).is_empty())
                .collect();
            let per_head = (0..heads)
                .map(|h| {
                    let mut rng = substream(
                        seed,
                        tag::NEIGHBORS,
                        &[epoch, t as u64, r as u64, h as u64],
                    );
                    nodes
                        .iter()
                        .map(|&v| {
                            let mut s = snap.sample_neighbors(v, r, k, &mut rng);
                            s.push(v);
                            s
                        })
                        .collect()
                })
                .collect();
            TypePlan { nodes, per_head }
        })
        .collect();
    SnapshotPlan { types }
}

#[derive(Debug, Clone, Copy)]
pub struct NodeAttnOut {
    /// `[entries x head_dim]` head output, rows aligned with the input order.
    pub out: TensorId,
    /// `[entries x K]` attention coefficients over each node's multiset.
    pub alpha: TensorId,
}

/// One attention head over one edge-type sub-network.
///
/// `entries` pairs each node with its sampled neighbor multiset; lists must
/// share one length. Lists are canonicalized (sorted) first, so any ordering
/// of the same multiset produces bit-identical output.
pub fn node_attention(
    tape: &mut Tape,
    features: TensorId,
    entries: &[(NodeId, Vec<NodeId>)],
    w: TensorId,
    a: TensorId,
    slope: f64,
) -> Result<NodeAttnOut> {
    if entries.is_empty() {
        return Err(Error::Contract("node_attention with no entries".into()));
    }
    let kk = entries[0].1.len();
    if kk == 0 || entries.iter().any(|(_, l)| l.len() != kk) {
        return Err(Error::Contract(
            "node_attention needs equal-length, non-empty neighbor lists".into(),
        ));
    }
    let (_, hd) = tape.shape(w);
    let (ar, ac) = tape.shape(a);
    if (ar, ac) != (2 * hd, 1) {
        return Err(Error::Dimension(format!(
            "attention vector must be [{}x1], got [{ar}x{ac}]",
            2 * hd
        )));
    }

    let h = tape.matmul(features, w)?;
    let top: Vec<usize> = (0..hd).collect();
    let bot: Vec<usize> = (hd..2 * hd).collect();
    let a_top = tape.gather_rows(a, &top)?;
    let a_bot = tape.gather_rows(a, &bot)?;
    let left = tape.matmul(h, a_top)?;
    let right = tape.matmul(h, a_bot)?;

    let nodes: Vec<usize> = entries.iter().map(|(v, _)| *v).collect();
    let mut flat = Vec::with_capacity(entries.len() * kk);
    for (_, list) in entries {
        let mut sorted = list.clone();
        sorted.sort_unstable();
        flat.extend_from_slice(&sorted);
    }

    let right_flat = tape.gather_rows(right, &flat)?;
    let right_mat = tape.reshape(right_flat, entries.len(), kk)?;
    let left_col = tape.gather_rows(left, &nodes)?;
    let logits = tape.add_col(right_mat, left_col)?;
    let act = tape.leaky_relu(logits, slope)?;
    let alpha = tape.softmax_rows(act)?;
    let agg = tape.gather_weighted_sum(alpha, h, &flat)?;
    let out = tape.elu(agg)?;
    Ok(NodeAttnOut { out, alpha })
}

/// Concatenates per-head outputs in head order; all heads must agree on both
/// dimensions.
pub fn multi_head_concat(tape: &mut Tape, heads: &[TensorId]) -> Result<TensorId> {
    if heads.is_empty() {
        return Err(Error::Contract("multi_head_concat of no heads".into()));
    }
    let (rows, cols) = tape.shape(heads[0]);
    for &h in heads {
        if tape.shape(h) != (rows, cols) {
            return Err(Error::Contract(format!(
                "head output shapes differ: [{rows}x{cols}] vs [{}x{}]",
                tape.shape(h).0,
                tape.shape(h).1
            )));
        }
    }
    tape.concat_cols(heads)
}

#[derive(Debug, Clone)]
pub struct EdgeAttnOut {
    /// `[num_nodes x E]` fused snapshot embedding; absent nodes are zero rows.
    pub fused: TensorId,
    /// `[active x R]` coefficients over available edge types, `None` when the
    /// snapshot has no active nodes.
    pub beta: Option<TensorId>,
    /// Ascending ids of nodes active in at least one edge type.
    pub active: Vec<NodeId>,
}

/// Fuses per-edge-type representations. `per_type[r]` carries the node list
/// and `[A_r x E]` output of edge type r, or `None` when the type has no
/// participants in this snapshot. Types unavailable to a node are masked out
/// of its softmax.
pub fn edge_attention(
    tape: &mut Tape,
    num_nodes: usize,
    per_type: &[Option<(Vec<NodeId>, TensorId)>],
    w: TensorId,
    b: TensorId,
    q: TensorId,
) -> Result<EdgeAttnOut> {
    if per_type.is_empty() {
        return Err(Error::Contract("edge_attention with no edge types".into()));
    }
    let (e_dim, _) = tape.shape(w);
    let num_types = per_type.len();

    let mut active: Vec<NodeId> = Vec::new();
    for entry in per_type.iter().flatten() {
        active.extend_from_slice(&entry.0);
    }
    active.sort_unstable();
    active.dedup();

    let zeros_ne = crate::tensor::Tensor::zeros(num_nodes, e_dim);
    if active.is_empty() {
        let fused = tape.constant(&zeros_ne)?;
        return Ok(EdgeAttnOut { fused, beta: None, active });
    }

    let zeros_col = crate::tensor::Tensor::zeros(num_nodes, 1);
    let mut score_cols = Vec::with_capacity(num_types);
    let mut full_reprs: Vec<Option<TensorId>> = Vec::with_capacity(num_types);
    for entry in per_type {
        match entry {
            Some((nodes, h_rt)) => {
                let (rows, cols) = tape.shape(*h_rt);
                if rows != nodes.len() || cols != e_dim {
                    return Err(Error::Dimension(format!(
                        "edge-type representation [{rows}x{cols}] does not match \
                         {} nodes x E={e_dim}",
                        nodes.len()
                    )));
                }
                let lin = tape.matmul(*h_rt, w)?;
                let shifted = tape.add_row(lin, b)?;
                let hidden = tape.tanh(shifted)?;
                let score = tape.matmul(hidden, q)?;
                score_cols.push(tape.scatter_rows(score, nodes, num_nodes)?);
                full_reprs.push(Some(tape.scatter_rows(*h_rt, nodes, num_nodes)?));
            }
            None => {
                score_cols.push(tape.constant(&zeros_col)?);
                full_reprs.push(None);
            }
        }
    }

    let scores_full = tape.concat_cols(&score_cols)?;
    let scores_active = tape.gather_rows(scores_full, &active)?;
    let mut off = vec![true; active.len() * num_types];
    for (r, entry) in per_type.iter().enumerate() {
        if let Some((nodes, _)) = entry {
            for (i, v) in active.iter().enumerate() {
                if nodes.binary_search(v).is_ok() {
                    off[i * num_types + r] = false;
                }
            }
        }
    }
    let mask = AttentionMask::from_flags(active.len(), num_types, off)?;
    let beta = tape.masked_softmax_rows(scores_active, &mask)?;

    let mut fused_active: Option<TensorId> = None;
    for (r, repr) in full_reprs.iter().enumerate() {
        let Some(repr) = repr else { continue };
        let h_act = tape.gather_rows(*repr, &active)?;
        let b_col = tape.slice_cols(beta, r, r + 1)?;
        let term = tape.mul_col(h_act, b_col)?;
        fused_active = Some(match fused_active {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let fused_active = fused_active.expect("active nodes imply at least one type");
    let fused = tape.scatter_rows(fused_active, &active, num_nodes)?;
    Ok(EdgeAttnOut { fused, beta: Some(beta), active })
}

/// Full per-snapshot encoder: node attention per (edge type, head), head
/// concatenation, then edge-level fusion. Returns `[num_nodes x E]`.
pub fn encode_snapshot(
    tape: &mut Tape,
    features: TensorId,
    num_nodes: usize,
    plan: &SnapshotPlan,
    bound: &BoundParams,
    dims: &ModelDims,
) -> Result<TensorId> {
    let mut per_type: Vec<Option<(Vec<NodeId>, TensorId)>> =
        Vec::with_capacity(plan.types.len());
    for (r, tp) in plan.types.iter().enumerate() {
        if tp.nodes.is_empty() {
            per_type.push(None);
            continue;
        }
        let mut head_outs = Vec::with_capacity(dims.heads);
        for h in 0..dims.heads {
            let entries: Vec<(NodeId, Vec<NodeId>)> = tp
                .nodes
                .iter()
                .copied()
                .zip(tp.per_head[h].iter().cloned())
                .collect();
            let w = bound.id(&names::node_attn_w(r, h))?;
            let a = bound.id(&names::node_attn_a(r, h))?;
            let out = node_attention(tape, features, &entries, w, a, LEAKY_SLOPE)?;
            head_outs.push(out.out);
        }
        let h_rt = multi_head_concat(tape, &head_outs)?;
        per_type.push(Some((tp.nodes.clone(), h_rt)));
    }
    let w = bound.id(&names::edge_attn_w())?;
    let b = bound.id(&names::edge_attn_b())?;
    let q = bound.id(&names::edge_attn_q())?;
    Ok(edge_attention(tape, num_nodes, &per_type, w, b, q)?.fused)
}
