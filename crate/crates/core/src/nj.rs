//! Neighbor-joining over a symmetric distance matrix.
//!
//! The join criterion is the canonical one,
//! `Q(i, j) = D[i][j] - (r_i + r_j) / (n - 2)`, with `r_i` the row sum over
//! the `n` currently active nodes. The pair search skips a row when the
//! cached row minimum proves no pair in it can beat the best criterion found
//! so far, which keeps the result identical to an exhaustive scan.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Symmetric `m x m` matrix with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry (to a relative `1e-12`), non-negativity and a zero
    /// diagonal. Near-symmetric pairs are replaced by their mean.
    pub fn new(m: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != m * m {
            return Err(Error::Matrix(format!(
                "expected {} entries for m = {m}, got {}",
                m * m,
                data.len()
            )));
        }
        for i in 0..m {
            if data[i * m + i] != 0.0 {
                return Err(Error::Matrix(format!("non-zero diagonal at {i}")));
            }
            for j in (i + 1)..m {
                let (a, b) = (data[i * m + j], data[j * m + i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::Matrix(format!("non-finite entry at ({i}, {j})")));
                }
                if a < 0.0 || b < 0.0 {
                    return Err(Error::Matrix(format!("negative entry at ({i}, {j})")));
                }
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Matrix(format!("asymmetric at ({i}, {j}): {a} vs {b}")));
                }
                let mean = 0.5 * (a + b);
                data[i * m + j] = mean;
                data[j * m + i] = mean;
            }
        }
        Ok(Self { m, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                got: bad.len(),
            });
        }
        Self::new(m, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise Euclidean distances. Each entry is summed in feature order, so
/// results are reproducible bit for bit.
pub fn euclidean_matrix<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DistanceMatrix> {
    let m = vectors.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no vectors".into()));
    }
    let d = vectors[0].as_ref().len();
    if let Some(bad) = vectors.iter().find(|v| v.as_ref().len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.as_ref().len(),
        });
    }
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let v = euclidean(vectors[i].as_ref(), vectors[j].as_ref());
            data[i * m + j] = v;
            data[j * m + i] = v;
        }
    }
    Ok(DistanceMatrix { m, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Leaf,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Branch length clamped at zero.
    pub length: f64,
    /// Branch length as computed, possibly negative.
    pub raw_length: f64,
}

/// Unrooted tree. Nodes `0..leaf_count` are leaves and node `i` stands for
/// item `i` of the input; virtual nodes follow in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct NjTree {
    leaf_count: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl NjTree {
    /// Builds a tree from explicit edges `(a, b, length)`. Node ids below
    /// `leaf_count` are leaves. Fails unless the edges form a spanning tree
    /// over `leaf_count + virtual_count` nodes.
    pub fn from_edges(leaf_count: usize, virtual_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = leaf_count + virtual_count;
        if n == 0 {
            return Err(Error::InvalidArgument("tree needs at least one node".into()));
        }
        if edges.len() + 1 != n {
            return Err(Error::InvalidArgument(format!(
                "{n} nodes need {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let edges: Vec<Edge> = edges
            .iter()
            .map(|&(a, b, l)| Edge {
                a,
                b,
                length: l.max(0.0),
                raw_length: l,
            })
            .collect();
        if edges.iter().any(|e| e.a >= n || e.b >= n || e.a == e.b) {
            return Err(Error::InvalidArgument("edge endpoint out of range".into()));
        }
        let tree = Self::assemble(leaf_count, n, edges);
        let reached = tree.bfs_order(0).len();
        if reached != n {
            return Err(Error::InvalidArgument("edges do not connect all nodes".into()));
        }
        Ok(tree)
    }

    fn assemble(leaf_count: usize, n: usize, edges: Vec<Edge>) -> Self {
        let nodes = (0..n)
            .map(|i| Node {
                kind: if i < leaf_count { NodeKind::Leaf } else { NodeKind::Virtual },
                x: 0.0,
                y: 0.0,
            })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            adjacency[e.a].push((e.b, k));
            adjacency[e.b].push((e.a, k));
        }
        Self {
            leaf_count,
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.leaf_count
    }

    /// Neighbors of `node` as `(neighbor, edge index)`, in edge order.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub(crate) fn bfs_order(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order
    }

    /// Hop counts from `start` to every node.
    pub fn hops_from(&self, start: usize) -> Vec<usize> {
        let mut hops = vec![usize::MAX; self.nodes.len()];
        hops[start] = 0;
        for v in self.bfs_order(start) {
            for &(w, _) in &self.adjacency[v] {
                if hops[w] == usize::MAX {
                    hops[w] = hops[v] + 1;
                }
            }
        }
        hops
    }

    /// Topological center: the node of minimum eccentricity (in hops),
    /// lowest id on ties.
    pub fn center(&self) -> usize {
        // Two BFS sweeps find a diameter path; its midpoint(s) are the centers.
        let far = |from: usize| {
            let hops = self.hops_from(from);
            let mut best = from;
            for (v, &h) in hops.iter().enumerate() {
                if h > hops[best] {
                    best = v;
                }
            }
            (best, hops)
        };
        let (a, _) = far(0);
        let (b, from_a) = far(a);
        let diameter = from_a[b];
        let from_b = self.hops_from(b);
        let mut candidates: Vec<usize> = (0..self.nodes.len())
            .filter(|&v| from_a[v] + from_b[v] == diameter && from_a[v].max(from_b[v]) == diameter.div_ceil(2))
            .collect();
        candidates.sort_unstable();
        candidates[0]
    }

    /// Parent pointers and a pre-order with `root` first.
    pub fn rooted(&self, root: usize) -> (Vec<Option<(usize, usize)>>, Vec<usize>) {
        let n = self.nodes.len();
        let mut parent = vec![None; n];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(w, e) in self.adjacency[v].iter().rev() {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, e));
                    stack.push(w);
                }
            }
        }
        (parent, order)
    }

    /// Children of `v` when rooted with the given parent pointers, in edge order.
    pub fn children<'a>(
        &'a self,
        v: usize,
        parent: &'a [Option<(usize, usize)>],
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        let up = parent[v].map(|(p, _)| p);
        self.adjacency[v].iter().copied().filter(move |&(w, _)| Some(w) != up)
    }

    /// Path lengths (clamped edge lengths) between every pair of leaves.
    pub fn leaf_distances(&self) -> Vec<Vec<f64>> {
        (0..self.leaf_count)
            .map(|leaf| {
                let mut dist = vec![f64::NAN; self.nodes.len()];
                dist[leaf] = 0.0;
                for v in self.bfs_order(leaf) {
                    for &(w, e) in &self.adjacency[v] {
                        if dist[w].is_nan() {
                            dist[w] = dist[v] + self.edges[e].length;
                        }
                    }
                }
                dist.truncate(self.leaf_count);
                dist
            })
            .collect()
    }

    /// JSON export: `{nodes: [{id, kind, item?, x, y, ...}], edges: [{a, b, length}]}`.
    /// `annotate` may add extra fields to each node object.
    pub fn to_json_with<F>(&self, mut annotate: F) -> Value
    where
        F: FnMut(usize, &mut Map<String, Value>),
    {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let mut obj = Map::new();
                obj.insert("id".into(), id.into());
                obj.insert("kind".into(), serde_json::to_value(n.kind).expect("enum"));
                if n.kind == NodeKind::Leaf {
                    obj.insert("item".into(), id.into());
                }
                obj.insert("x".into(), n.x.into());
                obj.insert("y".into(), n.y.into());
                annotate(id, &mut obj);
                Value::Object(obj)
            })
            .collect();
        let edges: Vec<Value> = self
            .edges
            .iter()
            .map(|e| serde_json::json!({"a": e.a, "b": e.b, "length": e.length}))
            .collect();
        serde_json::json!({"nodes": nodes, "edges": edges})
    }

    pub fn to_json(&self) -> Value {
        self.to_json_with(|_, _| {})
    }

    /// Newick string rooted at the topological center.
    pub fn to_newick<F: Fn(usize) -> String>(&self, leaf_name: F) -> String {
        let root = self.center();
        let (parent, _) = self.rooted(root);
        let mut out = String::new();
        self.write_newick(root, &parent, &leaf_name, &mut out);
        out.push(';');
        out
    }

    fn write_newick<F: Fn(usize) -> String>(
        &self,
        v: usize,
        parent: &[Option<(usize, usize)>],
        leaf_name: &F,
        out: &mut String,
    ) {
        let children: Vec<(usize, usize)> = self.children(v, parent).collect();
        if !children.is_empty() {
            out.push('(');
            for (k, &(c, e)) in children.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                self.write_newick(c, parent, leaf_name, out);
                let _ = write!(out, ":{}", self.edges[e].length);
            }
            out.push(')');
        }
        if self.is_leaf(v) {
            out.push_str(&leaf_name(v));
        }
    }
}

/// Builds the neighbor-joining tree for `d`.
///
/// Produces `max(0, m - 2)` virtual nodes and `2m - 3` edges for `m >= 2`.
/// Ties on the criterion go to the lexicographically smallest `(i, j)` in
/// current matrix order, where a joined pair's new node takes the slot of
/// its lower member.
pub fn nj_build(d: &DistanceMatrix) -> NjTree {
    let m = d.len();
    match m {
        0 | 1 => return NjTree::assemble(m, m, Vec::new()),
        2 => {
            let l = d.get(0, 1);
            return NjTree::assemble(
                2,
                2,
                vec![Edge {
                    a: 0,
                    b: 1,
                    length: l.max(0.0),
                    raw_length: l,
                }],
            );
        }
        _ => {}
    }

    let mut dist = d.data.clone();
    let at = |i: usize, j: usize| i * m + j;
    let mut slot_node: Vec<usize> = (0..m).collect();
    let mut active: Vec<usize> = (0..m).collect();
    let mut r: Vec<f64> = (0..m).map(|i| d.row(i).iter().sum()).collect();
    let mut row_min = vec![f64::INFINITY; m];
    let mut row_arg = vec![usize::MAX; m];
    let refresh_row = |i: usize, active: &[usize], dist: &[f64], row_min: &mut [f64], row_arg: &mut [usize]| {
        row_min[i] = f64::INFINITY;
        row_arg[i] = usize::MAX;
        for &k in active {
            if k != i && dist[at(i, k)] < row_min[i] {
                row_min[i] = dist[at(i, k)];
                row_arg[i] = k;
            }
        }
    };
    for i in 0..m {
        refresh_row(i, &active, &dist, &mut row_min, &mut row_arg);
    }

    let mut edges = Vec::with_capacity(2 * m - 3);
    let mut next_node = m;
    while active.len() > 2 {
        let n = active.len();
        let denom = (n - 2) as f64;
        let r_max = active.iter().map(|&i| r[i]).fold(f64::NEG_INFINITY, f64::max);

        let mut best = f64::INFINITY;
        let (mut bi, mut bj) = (active[0], active[1]);
        // With three nodes every pair has the same criterion value, and with
        // four each pair ties with its complement, so only pairs containing
        // the first node need to be scored.
        let scan = match n {
            3 => 0,
            4 => 1,
            _ => n - 1,
        };
        for (a, &i) in active.iter().enumerate().take(scan) {
            let bound = row_min[i] - (r[i] + r_max) / denom;
            if bound > best + 1e-9 * (1.0 + best.abs() + bound.abs()) {
                continue;
            }
            for &j in &active[a + 1..] {
                let q = dist[at(i, j)] - (r[i] + r[j]) / denom;
                if q < best {
                    best = q;
                    bi = i;
                    bj = j;
                }
            }
        }

        let dij = dist[at(bi, bj)];
        let si = 0.5 * dij + (r[bi] - r[bj]) / (2.0 * denom);
        let sj = dij - si;
        let u = next_node;
        next_node += 1;
        for (child, len) in [(slot_node[bi], si), (slot_node[bj], sj)] {
            edges.push(Edge {
                a: u,
                b: child,
                length: len.max(0.0),
                raw_length: len,
            });
        }

        active.retain(|&k| k != bj);
        let mut ru = 0.0;
        for &k in &active {
            if k == bi {
                continue;
            }
            let dku = 0.5 * (dist[at(bi, k)] + dist[at(bj, k)] - dij);
            r[k] += dku - dist[at(bi, k)] - dist[at(bj, k)];
            dist[at(bi, k)] = dku;
            dist[at(k, bi)] = dku;
            ru += dku;
        }
        r[bi] = ru;
        slot_node[bi] = u;
        for &k in &active {
            if k == bi {
                continue;
            }
            if row_arg[k] == bi || row_arg[k] == bj {
                refresh_row(k, &active, &dist, &mut row_min, &mut row_arg);
            } else if dist[at(k, bi)] < row_min[k] {
                row_min[k] = dist[at(k, bi)];
                row_arg[k] = bi;
            }
        }
        refresh_row(bi, &active, &dist, &mut row_min, &mut row_arg);
    }

    let (a, b) = (active[0], active[1]);
    let l = dist[at(a, b)];
    edges.push(Edge {
        a: slot_node[a],
        b: slot_node[b],
        length: l.max(0.0),
        raw_length: l,
    });
    NjTree::assemble(m, next_node, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let d = euclidean_matrix(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        let single = euclidean_matrix(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.get(0, 0), 0.0);
    }

    #[test]
    fn euclidean_dimension_mismatch() {
        assert!(matches!(
            euclidean_matrix(&[vec![0.0, 0.0], vec![1.0]]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(euclidean_matrix::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn matrix_validation() {
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
    }

    #[test]
    fn base_cases() {
        let one = nj_build(&DistanceMatrix::from_rows(&[vec![0.0]]).unwrap());
        assert_eq!(one.node_count(), 1);
        assert!(one.edges().is_empty());

        let two = nj_build(&DistanceMatrix::from_rows(&[vec![0.0, 7.0], vec![7.0, 0.0]]).unwrap());
        assert_eq!(two.internal_count(), 0);
        assert_eq!(two.edges().len(), 1);
        assert_eq!(two.edges()[0].length, 7.0);
    }

    #[test]
    fn all_zero_three() {
        let t = nj_build(&DistanceMatrix::new(3, vec![0.0; 9]).unwrap());
        assert_eq!(t.internal_count(), 1);
        assert_eq!(t.edges().len(), 3);
        assert!(t.edges().iter().all(|e| e.length == 0.0));
        // first join is (0, 1)
        assert_eq!((t.edges()[0].a, t.edges()[0].b), (3, 0));
        assert_eq!((t.edges()[1].a, t.edges()[1].b), (3, 1));
    }

    #[test]
    fn four_leaf_additive() {
        // ((A:1,B:2):1,(C:3,D:1))
        let d = DistanceMatrix::from_rows(&[
            vec![0.0, 3.0, 5.0, 3.0],
            vec![3.0, 0.0, 6.0, 4.0],
            vec![5.0, 6.0, 0.0, 4.0],
            vec![3.0, 4.0, 4.0, 0.0],
        ])
        .unwrap();
        let t = nj_build(&d);
        let lens: Vec<(usize, usize, f64)> = t.edges().iter().map(|e| (e.a, e.b, e.length)).collect();
        assert_eq!(lens, vec![(4, 0, 1.0), (4, 1, 2.0), (5, 4, 1.0), (5, 2, 3.0), (5, 3, 1.0)]);
    }

    #[test]
    fn negative_branch_is_clamped() {
        // non-additive: triangle inequality violated
        let d = DistanceMatrix::from_rows(&[
            vec![0.0, 1.0, 10.0],
            vec![1.0, 0.0, 1.0],
            vec![10.0, 1.0, 0.0],
        ])
        .unwrap();
        let t = nj_build(&d);
        let neg = t.edges().iter().find(|e| e.raw_length < 0.0).expect("one negative branch");
        assert_eq!(neg.length, 0.0);
    }

    #[test]
    fn center_and_newick() {
        // path 0 - 3 - 4 - 1, plus leaf 2 on node 4
        let t = NjTree::from_edges(3, 2, &[(0, 3, 1.0), (3, 4, 1.0), (4, 1, 2.0), (4, 2, 0.5)]).unwrap();
        // nodes 3 and 4 both have eccentricity 2
        assert_eq!(t.center(), 3);
        let s = t.to_newick(|i| format!("L{i}"));
        assert_eq!(s, "(L0:1,(L1:2,L2:0.5):1);");
    }

    #[test]
    fn from_edges_rejects_non_trees() {
        assert!(NjTree::from_edges(3, 1, &[(0, 3, 1.0), (1, 3, 1.0)]).is_err());
        assert!(NjTree::from_edges(2, 2, &[(0, 1, 1.0), (2, 3, 1.0), (0, 2, 1.0)]).is_ok());
        assert!(NjTree::from_edges(2, 2, &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0)]).is_err());
    }
}
