//! Weighted GPU graph and min-k-cut partitioning.
//!
//! The cluster is a complete graph over GPUs whose edge weights are the
//! measured bandwidths. Cheap cuts separate weakly connected GPUs, so the
//! parts of a min-k-cut make good data-parallel groups while pipeline
//! traffic crosses the cut. Min 2-cuts use Stoer–Wagner; k-cuts for every k
//! come from one run of the greedy SPLIT procedure.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::workload::ClusterProfile;

/// Largest vertex count accepted by [`exact_min_k_cut`].
pub const EXACT_MAX_VERTICES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("graph needs at least 2 vertices")]
    TooFewVertices,
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("exhaustive k-cut limited to {max} vertices, got {n}")]
    TooLarge { n: usize, max: usize },
}

/// Undirected weighted graph stored as a dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    ids: Vec<String>,
    /// Position of each vertex in lexicographic id order; used for ties.
    rank: Vec<usize>,
    weights: Vec<f64>,
}

impl ClusterGraph {
    /// Builds a graph from a symmetric `n x n` row-major weight matrix.
    /// Zero weight means no edge.
    pub fn from_matrix(ids: Vec<String>, weights: Vec<f64>) -> Self {
        let n = ids.len();
        assert_eq!(weights.len(), n * n, "weight matrix must be n x n");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]).then(a.cmp(&b)));
        let mut rank = vec![0; n];
        for (r, &v) in order.iter().enumerate() {
            rank[v] = r;
        }
        let mut g = Self { ids, rank, weights };
        for v in 0..n {
            g.weights[v * n + v] = 0.0;
        }
        g
    }

    /// Builds a graph with vertex ids `v0..v{n-1}` from an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let ids = (0..n).map(|i| alloc::format!("v{i:03}")).collect();
        let mut w = vec![0.0; n * n];
        for &(u, v, x) in edges {
            assert!(u != v, "self edge");
            w[u * n + v] += x;
            w[v * n + u] += x;
        }
        Self::from_matrix(ids, w)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.ids.len() + v]
    }

    pub fn edge_count(&self) -> usize {
        let n = self.len();
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|&(u, v)| self.weight(u, v) > 0.0).count()
    }

    pub fn total_weight(&self) -> f64 {
        let n = self.len();
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).map(|(u, v)| self.weight(u, v)).sum()
    }

    /// Sum of weights of edges whose endpoints lie in different groups.
    pub fn cut_weight(&self, groups: &[Vec<usize>]) -> f64 {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        for (g, vs) in groups.iter().enumerate() {
            for &v in vs {
                label[v] = g;
            }
        }
        let mut total = 0.0;
        for u in 0..n {
            for v in u + 1..n {
                if label[u] != label[v] {
                    total += self.weight(u, v);
                }
            }
        }
        total
    }

    /// Minimum bandwidth over pairs inside `group`; `None` for singletons.
    pub fn min_pairwise(&self, group: &[usize]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, &u) in group.iter().enumerate() {
            for &v in &group[i + 1..] {
                let w = self.weight(u, v);
                best = Some(best.map_or(w, |b: f64| b.min(w)));
            }
        }
        best
    }

    /// Maximum bandwidth over pairs crossing from `a` to `b`.
    pub fn max_cross(&self, a: &[usize], b: &[usize]) -> f64 {
        a.iter().flat_map(|&u| b.iter().map(move |&v| (u, v))).map(|(u, v)| self.weight(u, v)).fold(0.0, f64::max)
    }

    /// Stoer–Wagner restricted to the induced subgraph on `verts`.
    /// Returns the cut weight and the side containing the last vertex of
    /// the best phase.
    fn stoer_wagner(&self, verts: &[usize]) -> (f64, Vec<usize>) {
        let m = verts.len();
        debug_assert!(m >= 2);
        let mut w: Vec<f64> = Vec::with_capacity(m * m);
        for &u in verts {
            for &v in verts {
                w.push(if u == v { 0.0 } else { self.weight(u, v) });
            }
        }
        let mut members: Vec<Vec<usize>> = verts.iter().map(|&v| vec![v]).collect();
        // representative rank of each super-vertex
        let mut rank: Vec<usize> = verts.iter().map(|&v| self.rank[v]).collect();
        let mut active: Vec<usize> = (0..m).collect();
        active.sort_by_key(|&i| rank[i]);

        let mut best_w = f64::INFINITY;
        let mut best_side: Vec<usize> = Vec::new();
        let mut key = vec![0.0f64; m];
        let mut in_a = vec![false; m];

        while active.len() > 1 {
            for &i in &active {
                key[i] = 0.0;
                in_a[i] = false;
            }
            let mut prev = usize::MAX;
            let mut last = active[0];
            for step in 0..active.len() {
                let next = if step == 0 {
                    active[0]
                } else {
                    let mut pick = usize::MAX;
                    for &i in &active {
                        if in_a[i] {
                            continue;
                        }
                        if pick == usize::MAX || key[i] > key[pick] || (key[i] == key[pick] && rank[i] < rank[pick]) {
                            pick = i;
                        }
                    }
                    pick
                };
                in_a[next] = true;
                prev = last;
                last = next;
                for &i in &active {
                    if !in_a[i] {
                        key[i] += w[next * m + i];
                    }
                }
            }
            let cut = key[last];
            if cut < best_w {
                best_w = cut;
                best_side = members[last].clone();
            }
            // merge `last` into `prev`
            let (s, t) = (prev, last);
            for &i in &active {
                if i != s && i != t {
                    let x = w[s * m + i] + w[t * m + i];
                    w[s * m + i] = x;
                    w[i * m + s] = x;
                }
            }
            let moved = core::mem::take(&mut members[t]);
            members[s].extend(moved);
            rank[s] = rank[s].min(rank[t]);
            active.retain(|&i| i != t);
        }
        best_side.sort_unstable();
        (best_w, best_side)
    }
}

impl ClusterGraph {
    /// Complete graph over the profile's devices (in profile order). Same
    /// node pairs get the node's intra bandwidth, others the node-pair
    /// inter bandwidth.
    pub fn from_profile(profile: &ClusterProfile) -> Self {
        let n = profile.num_devices();
        let ids = profile.devices.iter().map(|d| d.id.clone()).collect();
        let mut w = vec![0.0; n * n];
        for u in 0..n {
            for v in u + 1..n {
                let x = profile.bandwidth(u, v);
                w[u * n + v] = x;
                w[v * n + u] = x;
            }
        }
        Self::from_matrix(ids, w)
    }
}

pub fn build_cluster_graph(profile: &ClusterProfile) -> ClusterGraph {
    ClusterGraph::from_profile(profile)
}

/// A 2-way split of a vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    pub weight: f64,
    pub side: Vec<usize>,
    pub rest: Vec<usize>,
}

/// Global minimum 2-cut of the whole graph.
pub fn min_2cut(graph: &ClusterGraph) -> Result<Bipartition, PartitionError> {
    let all: Vec<usize> = (0..graph.len()).collect();
    min_2cut_of(graph, &all)
}

fn min_2cut_of(graph: &ClusterGraph, verts: &[usize]) -> Result<Bipartition, PartitionError> {
    if verts.len() < 2 {
        return Err(PartitionError::TooFewVertices);
    }
    let (weight, side) = graph.stoer_wagner(verts);
    let rest = verts.iter().copied().filter(|v| side.binary_search(v).is_err()).collect();
    Ok(Bipartition { weight, side, rest })
}

/// Division of the vertex set into `k` disjoint groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub k: usize,
    pub groups: Vec<Vec<usize>>,
    pub cut_weight: f64,
}

impl Partition {
    fn new(graph: &ClusterGraph, mut groups: Vec<Vec<usize>>) -> Self {
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_by_key(|g| g[0]);
        let cut_weight = graph.cut_weight(&groups);
        Self { k: groups.len(), groups, cut_weight }
    }
}

struct Component {
    verts: Vec<usize>,
    min_rank: usize,
    cut: Option<Bipartition>,
}

impl Component {
    fn new(graph: &ClusterGraph, verts: Vec<usize>) -> Self {
        let min_rank = verts.iter().map(|&v| graph.rank[v]).min().unwrap_or(usize::MAX);
        let cut = min_2cut_of(graph, &verts).ok();
        Self { verts, min_rank, cut }
    }
}

/// Greedy SPLIT: starting from the whole graph, repeatedly apply the
/// cheapest min 2-cut among the current parts. Returns the partitions for
/// k = 1..=k_max in order.
pub fn split_min_k_cut_sequence(graph: &ClusterGraph, k_max: usize) -> Result<Vec<Partition>, PartitionError> {
    let n = graph.len();
    if k_max == 0 || k_max > n {
        return Err(PartitionError::KOutOfRange { k: k_max, n });
    }
    let mut parts = vec![Component::new(graph, (0..n).collect())];
    let mut out = Vec::with_capacity(k_max);
    out.push(Partition::new(graph, vec![(0..n).collect()]));
    while parts.len() < k_max {
        let mut pick: Option<usize> = None;
        for (i, c) in parts.iter().enumerate() {
            let Some(cut) = &c.cut else { continue };
            pick = match pick {
                None => Some(i),
                Some(j) => {
                    let other = parts[j].cut.as_ref().map_or(f64::INFINITY, |b| b.weight);
                    match cut.weight.partial_cmp(&other) {
                        Some(Ordering::Less) => Some(i),
                        Some(Ordering::Equal) if c.min_rank < parts[j].min_rank => Some(i),
                        _ => Some(j),
                    }
                }
            };
        }
        let i = pick.expect("a part with >= 2 vertices exists while parts < n");
        let c = parts.swap_remove(i);
        let cut = c.cut.expect("picked part has a cut");
        parts.push(Component::new(graph, cut.side));
        parts.push(Component::new(graph, cut.rest));
        parts.sort_by_key(|c| c.min_rank);
        out.push(Partition::new(graph, parts.iter().map(|c| c.verts.clone()).collect()));
    }
    Ok(out)
}

/// Exhaustive minimum k-cut over all set partitions into exactly `k`
/// nonempty blocks. Only for small graphs; serves as a reference.
pub fn exact_min_k_cut(graph: &ClusterGraph, k: usize) -> Result<Partition, PartitionError> {
    let n = graph.len();
    if n > EXACT_MAX_VERTICES {
        return Err(PartitionError::TooLarge { n, max: EXACT_MAX_VERTICES });
    }
    if k == 0 || k > n {
        return Err(PartitionError::KOutOfRange { k, n });
    }
    // restricted growth strings: label[0] = 0, label[i] <= max(label[..i]) + 1
    let mut label = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    fn rec(
        graph: &ClusterGraph,
        k: usize,
        i: usize,
        used: usize,
        label: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let n = label.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            if used != k {
                return;
            }
            let mut w = 0.0;
            for u in 0..n {
                for v in u + 1..n {
                    if label[u] != label[v] {
                        w += graph.weight(u, v);
                    }
                }
            }
            if best.as_ref().is_none_or(|(b, _)| w < *b) {
                *best = Some((w, label.clone()));
            }
            return;
        }
        let limit = (used + 1).min(k);
        for l in 0..limit {
            label[i] = l;
            rec(graph, k, i + 1, used.max(l + 1), label, best);
        }
    }
    rec(graph, k, 0, 0, &mut label, &mut best);
    let (_, labels) = best.expect("k <= n admits a partition");
    let mut groups = vec![Vec::new(); k];
    for (v, &l) in labels.iter().enumerate() {
        groups[l].push(v);
    }
    Ok(Partition::new(graph, groups))
}
