//! Dynamic heterogeneous graphs as ordered snapshot lists.
//!
//! A [`DynamicGraph`] owns a global node registry (external name plus node
//! type per id) and `T` [`Snapshot`]s. Each snapshot is a typed undirected
//! edge multiset with adjacency indexes. Sampling procedures (typed neighbor
//! sampling, random-walk neighborhoods, negative sampling) take explicit RNG
//! streams so parallel callers stay reproducible.

mod load;

pub use load::{
    load_edge_list, read_edge_list, save_edge_list, write_edge_list, FormatDescriptor,
    GraphBuilder, Separator,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type NodeTypeId = usize;
pub type EdgeTypeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub etype: EdgeTypeId,
}

/// One observed snapshot: an edge multiset plus derived indexes. Edges are
/// undirected; adjacency lists hold both directions and are sorted, so
/// behavior does not depend on input line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    edges: Vec<Edge>,
    present: Vec<NodeId>,
    adj_typed: BTreeMap<(NodeId, EdgeTypeId), Vec<NodeId>>,
    adj_all: BTreeMap<NodeId, Vec<NodeId>>,
    pairs: BTreeSet<(NodeId, NodeId)>,
}

impl Snapshot {
    pub fn from_edges(edges: Vec<Edge>) -> Snapshot {
        let mut adj_typed: BTreeMap<(NodeId, EdgeTypeId), Vec<NodeId>> = BTreeMap::new();
        let mut adj_all: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut pairs = BTreeSet::new();
        let mut present = BTreeSet::new();
        for e in &edges {
            present.insert(e.src);
            present.insert(e.dst);
            adj_typed.entry((e.src, e.etype)).or_default().push(e.dst);
            adj_typed.entry((e.dst, e.etype)).or_default().push(e.src);
            adj_all.entry(e.src).or_default().push(e.dst);
            adj_all.entry(e.dst).or_default().push(e.src);
            pairs.insert((e.src.min(e.dst), e.src.max(e.dst)));
        }
        for l in adj_typed.values_mut() {
            l.sort_unstable();
        }
        for l in adj_all.values_mut() {
            l.sort_unstable();
        }
        Snapshot {
            edges,
            present: present.into_iter().collect(),
            adj_typed,
            adj_all,
            pairs,
        }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Nodes appearing as an endpoint in this snapshot, sorted.
    pub fn present_nodes(&self) -> &[NodeId] {
        &self.present
    }

    pub fn has_node(&self, v: NodeId) -> bool {
        self.present.binary_search(&v).is_ok()
    }

    /// True when some edge of any type joins `u` and `v`.
    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.pairs.contains(&(u.min(v), u.max(v)))
    }

    pub fn undirected_pairs(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.pairs
    }

    /// Neighbors of `v` through edges of type `r`, sorted, with multiplicity.
    pub fn neighbors_typed(&self, v: NodeId, r: EdgeTypeId) -> &[NodeId] {
        self.adj_typed.get(&(v, r)).map_or(&[], |l| l.as_slice())
    }

    /// Neighbors of `v` through edges of any type, sorted, with multiplicity.
    pub fn neighbors_any(&self, v: NodeId) -> &[NodeId] {
        self.adj_all.get(&v).map_or(&[], |l| l.as_slice())
    }

    /// Type-agnostic degree counting edge multiplicity.
    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors_any(v).len()
    }

    /// Edge types through which `v` has at least one neighbor, ascending.
    pub fn available_edge_types(&self, v: NodeId, num_edge_types: usize) -> Vec<EdgeTypeId> {
        (0..num_edge_types)
            .filter(|&r| !self.neighbors_typed(v, r).is_empty())
            .collect()
    }

    /// Edge multiset keyed by (src, dst, etype) for order-free comparison.
    pub fn edge_multiset(&self) -> BTreeMap<(NodeId, NodeId, EdgeTypeId), usize> {
        let mut m = BTreeMap::new();
        for e in &self.edges {
            let key = (e.src.min(e.dst), e.src.max(e.dst), e.etype);
            *m.entry(key).or_insert(0) += 1;
        }
        m
    }

    /// Edge-type-specific sub-networks: entry `r` holds exactly the edges of
    /// type `r` plus their endpoints. Together they partition the edge
    /// multiset.
    pub fn split_by_edge_type(&self, num_edge_types: usize) -> Vec<Snapshot> {
        (0..num_edge_types)
            .map(|r| {
                Snapshot::from_edges(
                    self.edges.iter().filter(|e| e.etype == r).copied().collect(),
                )
            })
            .collect()
    }

    /// `k` neighbors of `node` through type `r`, sampled uniformly with
    /// replacement and returned sorted (callers treat the result as a
    /// multiset). Empty when the node has no such neighbors.
    pub fn sample_neighbors(
        &self,
        node: NodeId,
        r: EdgeTypeId,
        k: usize,
        rng: &mut impl Rng,
    ) -> Vec<NodeId> {
        let pool = self.neighbors_typed(node, r);
        if pool.is_empty() {
            return Vec::new();
        }
        let mut out: Vec<NodeId> =
            (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        out.sort_unstable();
        out
    }

    /// Multiset of context nodes for skip-gram training: visit positions
    /// `1..=window` of `num_walks` uniform random walks started at `node`,
    /// excluding the start node itself. Walks traverse edges of any type;
    /// `walk_len` counts visited nodes including the start.
    pub fn walk_neighborhood(
        &self,
        node: NodeId,
        walk_len: usize,
        num_walks: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> BTreeMap<NodeId, usize> {
        let mut contexts = BTreeMap::new();
        if walk_len < 2 || self.neighbors_any(node).is_empty() {
            return contexts;
        }
        for _ in 0..num_walks {
            let mut cur = node;
            for pos in 1..walk_len {
                let pool = self.neighbors_any(cur);
                if pool.is_empty() {
                    break;
                }
                cur = pool[rng.random_range(0..pool.len())];
                if pos <= window && cur != node {
                    *contexts.entry(cur).or_insert(0) += 1;
                }
            }
        }
        contexts
    }

    /// Categorical sampler over present nodes with probability proportional
    /// to degree^0.75.
    pub fn negative_distribution(&self) -> Result<NegativeSampler> {
        if self.present.is_empty() {
            return Err(Error::Contract(
                "negative distribution over an empty snapshot".into(),
            ));
        }
        let weights: Vec<f64> = self
            .present
            .iter()
            .map(|&v| (self.degree(v) as f64).powf(0.75))
            .collect();
        NegativeSampler::new(self.present.clone(), weights)
    }
}

/// Degree-weighted categorical sampler.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    nodes: Vec<NodeId>,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl NegativeSampler {
    fn new(nodes: Vec<NodeId>, weights: Vec<f64>) -> Result<NegativeSampler> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numeric(format!(
                "negative sampler weight total degenerate: {total}"
            )));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cum.push(acc);
        }
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        Ok(NegativeSampler { nodes, probs, cum })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> NodeId {
        let u: f64 = rng.random_range(0.0..1.0);
        let idx = self.cum.partition_point(|&c| c < u).min(self.nodes.len() - 1);
        self.nodes[idx]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Ordered snapshot list plus the global node registry and interned type
/// names. Immutable after construction; shareable across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    snapshots: Vec<Snapshot>,
    node_names: Vec<String>,
    node_type_of: Vec<NodeTypeId>,
    node_type_names: Vec<String>,
    edge_type_names: Vec<String>,
}

impl DynamicGraph {
    pub(crate) fn from_parts(
        snapshots: Vec<Snapshot>,
        node_names: Vec<String>,
        node_type_of: Vec<NodeTypeId>,
        node_type_names: Vec<String>,
        edge_type_names: Vec<String>,
    ) -> DynamicGraph {
        DynamicGraph { snapshots, node_names, node_type_of, node_type_names, edge_type_names }
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn snapshot(&self, t: usize) -> &Snapshot {
        &self.snapshots[t]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn node_name(&self, v: NodeId) -> &str {
        &self.node_names[v]
    }

    pub fn node_index(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn node_type(&self, v: NodeId) -> NodeTypeId {
        self.node_type_of[v]
    }

    pub fn node_type_names(&self) -> &[String] {
        &self.node_type_names
    }

    pub fn edge_type_names(&self) -> &[String] {
        &self.edge_type_names
    }

    pub fn num_node_types(&self) -> usize {
        self.node_type_names.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_type_names.len()
    }

    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.edge_count()).sum()
    }

    /// Drops the last snapshot; used to hold out the link-prediction target.
    pub fn without_last_snapshot(&self) -> Result<DynamicGraph> {
        if self.snapshots.len() < 2 {
            return Err(Error::Contract(format!(
                "need at least 2 snapshots to hold one out, have {}",
                self.snapshots.len()
            )));
        }
        let mut g = self.clone();
        g.snapshots.pop();
        Ok(g)
    }

    /// Coarsens time: consecutive groups of `group_size` snapshots union
    /// their node and edge multisets. The new length is ceil(T/group_size).
    pub fn merge_snapshots(&self, group_size: usize) -> Result<DynamicGraph> {
        if group_size < 1 {
            return Err(Error::Contract("merge group size must be at least 1".into()));
        }
        if group_size == 1 {
            return Ok(self.clone());
        }
        let merged: Vec<Snapshot> = self
            .snapshots
            .chunks(group_size)
            .map(|group| {
                Snapshot::from_edges(
                    group.iter().flat_map(|s| s.edges.iter().copied()).collect(),
                )
            })
            .collect();
        Ok(DynamicGraph { snapshots: merged, ..self.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};

    fn snap(edges: &[(usize, usize, usize)]) -> Snapshot {
        Snapshot::from_edges(
            edges.iter().map(|&(src, dst, etype)| Edge { src, dst, etype }).collect(),
        )
    }

    #[test]
    fn split_single_type_is_identity() {
        let s = snap(&[(0, 1, 0), (1, 2, 0)]);
        let subs = s.split_by_edge_type(1);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0], s);
    }

    #[test]
    fn split_two_disjoint_types_partitions_edges() {
        let s = snap(&[(0, 1, 0), (2, 3, 1), (0, 2, 1)]);
        let subs = s.split_by_edge_type(2);
        assert_eq!(subs[0].edge_count(), 1);
        assert_eq!(subs[1].edge_count(), 2);
        assert_eq!(subs[0].present_nodes(), &[0, 1]);
        assert_eq!(subs[1].present_nodes(), &[0, 2, 3]);
    }

    #[test]
    fn split_four_types_edge_counts_sum() {
        let mut edges = Vec::new();
        for i in 0..17usize {
            edges.push((i % 5, (i + 1) % 7 + 5, i % 4));
        }
        let s = snap(&edges);
        let subs = s.split_by_edge_type(4);
        let total: usize = subs.iter().map(|x| x.edge_count()).sum();
        assert_eq!(total, s.edge_count());
        for (r, sub) in subs.iter().enumerate() {
            assert!(sub.edges().iter().all(|e| e.etype == r));
        }
    }

    #[test]
    fn duplicate_edges_keep_multiplicity() {
        let s = snap(&[(0, 1, 0), (0, 1, 0)]);
        assert_eq!(s.edge_count(), 2);
        assert_eq!(s.degree(0), 2);
        assert_eq!(s.neighbors_typed(0, 0), &[1, 1]);
    }

    #[test]
    fn sample_neighbors_forced_repetition() {
        let s = snap(&[(0, 1, 0)]);
        let mut rng = stream(1, tag::NEIGHBORS);
        assert_eq!(s.sample_neighbors(0, 0, 3, &mut rng), vec![1, 1, 1]);
    }

    #[test]
    fn sample_neighbors_empty_without_typed_edges() {
        let s = snap(&[(0, 1, 0)]);
        let mut rng = stream(1, tag::NEIGHBORS);
        assert!(s.sample_neighbors(0, 1, 3, &mut rng).is_empty());
        assert!(s.sample_neighbors(5, 0, 3, &mut rng).is_empty());
    }

    #[test]
    fn sample_neighbors_frequencies_near_uniform() {
        let s = snap(&[(0, 1, 0), (0, 2, 0)]);
        let mut rng = stream(2, tag::NEIGHBORS);
        let draws = s.sample_neighbors(0, 0, 10_000, &mut rng);
        let ones = draws.iter().filter(|&&v| v == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.02, "frequency {ones}");
    }

    #[test]
    fn walk_on_path_graph_is_forced() {
        let s = snap(&[(0, 1, 0)]);
        let mut rng = stream(3, tag::WALKS);
        let ctx = s.walk_neighborhood(0, 2, 50, 5, &mut rng);
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx[&1], 50);
    }

    #[test]
    fn walk_from_isolated_node_is_empty() {
        let s = snap(&[(0, 1, 0)]);
        let mut rng = stream(4, tag::WALKS);
        assert!(s.walk_neighborhood(7, 10, 10, 5, &mut rng).is_empty());
    }

    /// Exhaustive enumeration of equal-probability walks on a triangle,
    /// applying the same context rule as the implementation.
    #[test]
    fn triangle_walk_contexts_match_enumeration() {
        let s = snap(&[(0, 1, 0), (1, 2, 0), (2, 0, 0)]);
        let (walk_len, window, start) = (4usize, 2usize, 0usize);

        fn enumerate(
            s: &Snapshot,
            cur: usize,
            pos: usize,
            walk_len: usize,
            window: usize,
            start: usize,
            weight: f64,
            acc: &mut BTreeMap<usize, f64>,
        ) {
            if pos == walk_len {
                return;
            }
            let pool = s.neighbors_any(cur);
            let p = weight / pool.len() as f64;
            for &nxt in pool {
                if pos <= window && nxt != start {
                    *acc.entry(nxt).or_insert(0.0) += p;
                }
                enumerate(s, nxt, pos + 1, walk_len, window, start, p, acc);
            }
        }

        let mut expected = BTreeMap::new();
        enumerate(&s, start, 1, walk_len, window, start, 1.0, &mut expected);
        let etotal: f64 = expected.values().sum();

        let mut rng = stream(5, tag::WALKS);
        let got = s.walk_neighborhood(start, walk_len, 10_000, window, &mut rng);
        let gtotal: f64 = got.values().map(|&c| c as f64).sum();

        for (&node, &ew) in &expected {
            let gf = got.get(&node).copied().unwrap_or(0) as f64 / gtotal;
            let ef = ew / etotal;
            assert!((gf - ef).abs() < 0.02, "node {node}: {gf} vs {ef}");
        }
    }

    #[test]
    fn negative_distribution_uniform_when_degrees_equal() {
        let s = snap(&[(0, 1, 0), (2, 3, 0)]);
        let d = s.negative_distribution().unwrap();
        for &p in d.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_distribution_power_ratio() {
        // Node 0 has degree 16, node 17 degree 1 (leaf of node 16's edge...).
        let mut edges: Vec<(usize, usize, usize)> = (1..=16).map(|i| (0, i, 0)).collect();
        edges.push((16, 17, 0));
        let s = snap(&edges);
        let d = s.negative_distribution().unwrap();
        let nodes = d.nodes();
        let p0 = d.probs()[nodes.iter().position(|&v| v == 0).unwrap()];
        let p17 = d.probs()[nodes.iter().position(|&v| v == 17).unwrap()];
        assert!((p0 / p17 - 8.0).abs() < 1e-12, "ratio {}", p0 / p17);
    }

    #[test]
    fn negative_distribution_normalizes_and_matches_frequencies() {
        let s = snap(&[(0, 1, 0), (0, 2, 0), (0, 3, 0), (1, 2, 1)]);
        let d = s.negative_distribution().unwrap();
        let total: f64 = d.probs().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);

        let mut rng = stream(6, tag::NEGATIVES);
        let n = 10_000;
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(d.sample(&mut rng)).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for (i, &node) in d.nodes().iter().enumerate() {
            let emp = counts.get(&node).copied().unwrap_or(0) as f64 / n as f64;
            tv += 0.5 * (emp - d.probs()[i]).abs();
        }
        assert!(tv < 0.02, "total variation {tv}");
    }

    fn toy_graph(t: usize) -> DynamicGraph {
        let snaps: Vec<Snapshot> = (0..t)
            .map(|i| snap(&[(i % 3, (i + 1) % 3, i % 2), (0, 2, 0)]))
            .collect();
        DynamicGraph::from_parts(
            snaps,
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 0, 1],
            vec!["user".into(), "item".into()],
            vec!["click".into(), "buy".into()],
        )
    }

    #[test]
    fn merge_group_size_one_is_identity() {
        let g = toy_graph(4);
        assert_eq!(g.merge_snapshots(1).unwrap(), g);
    }

    #[test]
    fn merge_ten_by_two_gives_five() {
        let g = toy_graph(10);
        let m = g.merge_snapshots(2).unwrap();
        assert_eq!(m.num_snapshots(), 5);
        assert_eq!(g.total_edges(), m.total_edges());
    }

    #[test]
    fn merged_edges_are_multiset_union_of_members() {
        let g = toy_graph(5);
        let m = g.merge_snapshots(2).unwrap();
        assert_eq!(m.num_snapshots(), 3);
        for (gi, group) in g.snapshots().chunks(2).enumerate() {
            let mut want = BTreeMap::new();
            for s in group {
                for (k, c) in s.edge_multiset() {
                    *want.entry(k).or_insert(0) += c;
                }
            }
            assert_eq!(m.snapshot(gi).edge_multiset(), want);
        }
    }

    #[test]
    fn without_last_snapshot_shortens_by_one() {
        let g = toy_graph(3);
        let h = g.without_last_snapshot().unwrap();
        assert_eq!(h.num_snapshots(), 2);
        assert_eq!(h.snapshot(0), g.snapshot(0));
    }
}
