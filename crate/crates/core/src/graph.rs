//! Complete view graphs: one global view plus `k` local views, with a feature
//! vector on every node and on every unordered node pair.
//!
//! Node `0` is always the global view. Edge features are stored once per
//! unordered pair in row-major upper-triangle order, so `(i, j)` and `(j, i)`
//! resolve to the same row.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};

use crate::error::{contract, domain, Result, TrdError};

/// Index of the global view in every graph.
pub const GLOBAL: usize = 0;

/// Number of unordered pairs over `n` nodes.
pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row of the unordered pair `{i, j}` in the edge-feature table. Requires `i != j`.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(a != b && b < n);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// All unordered pairs `(i, j)` with `i < j`, in edge-table order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    node_features: Array2<f64>,
    edge_features: Array2<f64>,
    label: Option<usize>,
}

impl ViewGraph {
    /// Builds a graph from an `N x n` node table and an `N(N-1)/2 x n` edge table.
    pub fn new(
        node_features: Array2<f64>,
        edge_features: Array2<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        let n = node_features.nrows();
        if n == 0 {
            return Err(contract("a view graph needs at least the global node"));
        }
        if edge_features.nrows() != num_pairs(n) {
            return Err(contract(format!(
                "graph over {n} nodes needs {} edge features, got {}",
                num_pairs(n),
                edge_features.nrows()
            )));
        }
        if n > 1 && edge_features.ncols() != node_features.ncols() {
            return Err(contract(format!(
                "node dimension {} differs from edge dimension {}",
                node_features.ncols(),
                edge_features.ncols()
            )));
        }
        Ok(Self {
            node_features,
            edge_features,
            label,
        })
    }

    pub fn num_views(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_features.nrows()
    }

    pub fn global_index(&self) -> usize {
        GLOBAL
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Array2<f64> {
        &self.edge_features
    }

    pub fn node(&self, i: usize) -> ArrayView1<'_, f64> {
        self.node_features.row(i)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_views() {
            Err(TrdError::Index {
                index: i,
                len: self.num_views(),
            })
        } else {
            Ok(())
        }
    }

    /// Feature vector of the undirected edge `{i, j}`.
    pub fn edge(&self, i: usize, j: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(domain(format!("no self-edge at node {i}")));
        }
        Ok(self
            .edge_features
            .row(pair_index(self.num_views(), i, j)))
    }
}

/// L2 norm of the edge feature between `i` and `j`.
pub fn edge_weight(g: &ViewGraph, i: usize, j: usize) -> Result<f64> {
    Ok(g.edge(i, j)?.dot(&g.edge(i, j)?).sqrt())
}

/// Edge weight without bounds checks; callers guarantee `i != j` and both in range.
pub(crate) fn edge_weight_unchecked(g: &ViewGraph, i: usize, j: usize) -> f64 {
    let row = g.edge_features.row(pair_index(g.num_views(), i, j));
    row.dot(&row).sqrt()
}

/// Complete graph over `nodes` with copied features. Nodes are re-indexed in
/// ascending order of their original index, so the global view stays at 0.
pub fn induced_subgraph(g: &ViewGraph, nodes: &BTreeSet<usize>) -> Result<ViewGraph> {
    if !nodes.contains(&GLOBAL) {
        return Err(contract("induced subgraph must contain the global view"));
    }
    for &i in nodes {
        g.check_index(i)?;
    }
    let keep: Vec<usize> = nodes.iter().copied().collect();
    let m = keep.len();
    let dim = g.feature_dim();
    let mut node_features = Array2::zeros((m, dim));
    for (new, &old) in keep.iter().enumerate() {
        node_features.row_mut(new).assign(&g.node(old));
    }
    let mut edge_features = Array2::zeros((num_pairs(m), g.edge_features.ncols()));
    for (row, (a, b)) in pairs(m).enumerate() {
        let src = pair_index(g.num_views(), keep[a], keep[b]);
        edge_features.row_mut(row).assign(&g.edge_features.row(src));
    }
    ViewGraph::new(node_features, edge_features, g.label)
}

/// A subset of a graph's nodes that explains its classification. Always
/// contains the global view.
#[derive(Debug, Clone)]
pub struct ExplanationSubgraph<'a> {
    parent: &'a ViewGraph,
    nodes: BTreeSet<usize>,
}

impl<'a> ExplanationSubgraph<'a> {
    pub fn new(parent: &'a ViewGraph, nodes: BTreeSet<usize>) -> Result<Self> {
        if !nodes.contains(&GLOBAL) {
            return Err(contract("explanation must contain the global view"));
        }
        if let Some(&bad) = nodes.iter().find(|&&i| i >= parent.num_views()) {
            return Err(TrdError::Index {
                index: bad,
                len: parent.num_views(),
            });
        }
        Ok(Self { parent, nodes })
    }

    /// The whole parent graph as its own explanation.
    pub fn full(parent: &'a ViewGraph) -> Self {
        Self {
            parent,
            nodes: (0..parent.num_views()).collect(),
        }
    }

    pub fn parent(&self) -> &'a ViewGraph {
        self.parent
    }

    pub fn nodes(&self) -> &BTreeSet<usize> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn to_graph(&self) -> ViewGraph {
        induced_subgraph(self.parent, &self.nodes).expect("validated at construction")
    }

    /// DOT rendering that keeps the parent's node indices as node ids.
    pub fn export_dot(&self, weights_as_labels: bool) -> String {
        let ids: Vec<usize> = self.nodes.iter().copied().collect();
        render_dot(&self.to_graph(), &ids, weights_as_labels)
    }
}

/// Undirected DOT rendering; nodes and edges in ascending index order.
pub fn export_dot(g: &ViewGraph, weights_as_labels: bool) -> String {
    let ids: Vec<usize> = (0..g.num_views()).collect();
    render_dot(g, &ids, weights_as_labels)
}

fn render_dot(g: &ViewGraph, ids: &[usize], weights_as_labels: bool) -> String {
    let mut out = String::new();
    out.push_str("graph view_graph {\n");
    if let Some(label) = g.label() {
        let _ = writeln!(out, "  label=\"class {label}\";");
    }
    out.push_str("  node [shape=circle];\n");
    for (i, id) in ids.iter().enumerate() {
        if i == GLOBAL {
            let _ = writeln!(
                out,
                "  n{id} [label=\"g\", shape=doublecircle, style=filled, fillcolor=lightblue];"
            );
        } else {
            let _ = writeln!(out, "  n{id} [label=\"{id}\"];");
        }
    }
    for (a, b) in pairs(g.num_views()) {
        if weights_as_labels {
            let w = edge_weight_unchecked(g, a, b);
            let _ = writeln!(out, "  n{} -- n{} [label=\"{w:.3}\"];", ids[a], ids[b]);
        } else {
            let _ = writeln!(out, "  n{} -- n{};", ids[a], ids[b]);
        }
    }
    out.push_str("}\n");
    out
}
