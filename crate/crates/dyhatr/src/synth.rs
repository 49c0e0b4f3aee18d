//! Synthetic drifting stochastic-block graphs.
//!
//! Nodes split into planted communities; within-community pairs link with
//! `p_intra` per snapshot, cross-community pairs with `p_inter`. Between
//! snapshots each node resamples its community with probability `drift`.
//! Node types partition the id range by `nodes_per_type`; an edge's type is
//! a fixed function of its endpoint node types, so edge-type sub-networks
//! carry real structure. Everything is a pure function of the spec.

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, Edge, NodeId, Snapshot};
use crate::rng::{substream, tag};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Node count per node type; type k owns a contiguous id block.
    pub nodes_per_type: Vec<usize>,
    pub num_edge_types: usize,
    /// Planted community count.
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Per-snapshot probability that a node moves to another community.
    pub drift: f64,
    pub snapshots: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            nodes_per_type: vec![150, 150],
            num_edge_types: 2,
            communities: 2,
            p_intra: 0.08,
            p_inter: 0.005,
            drift: 0.05,
            snapshots: 6,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_type.is_empty() || self.nodes_per_type.iter().sum::<usize>() < 2 {
            return Err(Error::Config("need at least two nodes".into()));
        }
        if self.nodes_per_type.iter().any(|&n| n == 0) {
            return Err(Error::Config("every node type needs at least one node".into()));
        }
        if self.num_edge_types == 0 {
            return Err(Error::Config("need at least one edge type".into()));
        }
        if self.communities == 0 {
            return Err(Error::Config("need at least one community".into()));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter), ("drift", self.drift)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.snapshots < 2 {
            return Err(Error::Config("need at least two snapshots".into()));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_type.iter().sum()
    }

    /// Node type owning id `v` under the contiguous block layout.
    pub fn node_type_of(&self, v: NodeId) -> usize {
        let mut rest = v;
        for (k, &n) in self.nodes_per_type.iter().enumerate() {
            if rest < n {
                return k;
            }
            rest -= n;
        }
        unreachable!("id within num_nodes");
    }
}

/// Edge type induced by the endpoint node types: same-type pairs use type 0,
/// cross-type pairs spread over the remaining types.
pub fn edge_type_for(tu: usize, tv: usize, num_edge_types: usize) -> usize {
    if num_edge_types == 1 || tu == tv {
        0
    } else {
        1 + (tu + tv) % (num_edge_types - 1)
    }
}

/// A generated benchmark: the graph plus per-snapshot ground-truth
/// community memberships (`memberships[t][node]`).
#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: DynamicGraph,
    pub memberships: Vec<Vec<usize>>,
}

/// Samples the graph. Memberships draw from one stream, each snapshot's
/// edges from its own, so the same spec always produces the same graph.
pub fn generate(spec: &SyntheticSpec) -> Result<Generated> {
    spec.validate()?;
    let n = spec.num_nodes();

    let mut rng_m = substream(spec.seed, tag::SYNTH, &[0]);
    let mut current: Vec<usize> =
        (0..n).map(|_| rng_m.random_range(0..spec.communities)).collect();
    let mut memberships = Vec::with_capacity(spec.snapshots);
    memberships.push(current.clone());
    for _ in 1..spec.snapshots {
        for c in current.iter_mut() {
            if spec.communities > 1 && rng_m.random_range(0.0..1.0) < spec.drift {
                let mut next = rng_m.random_range(0..spec.communities - 1);
                if next >= *c {
                    next += 1;
                }
                *c = next;
            }
        }
        memberships.push(current.clone());
    }

    let snapshots: Vec<Snapshot> = (0..spec.snapshots)
        .map(|t| {
            let mut rng_e = substream(spec.seed, tag::SYNTH, &[1 + t as u64]);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if memberships[t][u] == memberships[t][v] {
                        spec.p_intra
                    } else {
                        spec.p_inter
                    };
                    if rng_e.random_range(0.0..1.0) < p {
                        let etype = edge_type_for(
                            spec.node_type_of(u),
                            spec.node_type_of(v),
                            spec.num_edge_types,
                        );
                        edges.push(Edge { src: u, dst: v, etype });
                    }
                }
            }
            Snapshot::from_edges(edges)
        })
        .collect();

    let node_names = (0..n).map(|v| format!("n{v}")).collect();
    let node_type_of = (0..n).map(|v| spec.node_type_of(v)).collect();
    let node_type_names =
        (0..spec.nodes_per_type.len()).map(|k| format!("type{k}")).collect();
    let edge_type_names = (0..spec.num_edge_types).map(|r| format!("e{r}")).collect();
    Ok(Generated {
        graph: DynamicGraph::from_parts(
            snapshots,
            node_names,
            node_type_of,
            node_type_names,
            edge_type_names,
        ),
        memberships,
    })
}

/// Exact conditional expectation of each snapshot's edge count given the
/// drawn memberships.
pub fn expected_edge_counts(spec: &SyntheticSpec, memberships: &[Vec<usize>]) -> Vec<f64> {
    let n = spec.num_nodes();
    memberships
        .iter()
        .map(|m| {
            let mut e = 0.0;
            for u in 0..n {
                for v in (u + 1)..n {
                    e += if m[u] == m[v] { spec.p_intra } else { spec.p_inter };
                }
            }
            e
        })
        .collect()
}

/// Writes `node<TAB>snapshot<TAB>community` lines, one per (node, snapshot).
pub fn write_communities(gen: &Generated, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let mut buf = String::new();
    for (t, m) in gen.memberships.iter().enumerate() {
        for (v, c) in m.iter().enumerate() {
            buf.push_str(gen.graph.node_name(v));
            buf.push('\t');
            buf.push_str(&t.to_string());
            buf.push('\t');
            buf.push_str(&c.to_string());
            buf.push('\n');
        }
    }
    f.write_all(buf.as_bytes())?;
    Ok(())
}
