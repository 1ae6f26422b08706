//! Complementarity graph construction.
//!
//! Local-local edges start as constant vectors with value `1/|z_i · z_j|`
//! (capped), so redundant view pairs get weak edges and complementary pairs
//! get strong ones. Every edge incident to the global view starts as the
//! all-ones vector.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::graph::{pairs, ViewGraph, GLOBAL};
use crate::synth::SynthDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplementarityConfig {
    /// Cap on the local-local edge value (`w_max`).
    pub weight_cap: f64,
    /// Normalize embeddings to unit L2 norm before building the graph.
    pub normalize_embeddings: bool,
    /// When false, local-local edges start as all-ones like the global edges.
    pub use_complementarity: bool,
}

impl Default for ComplementarityConfig {
    fn default() -> Self {
        Self {
            weight_cap: 1e4,
            normalize_embeddings: true,
            use_complementarity: true,
        }
    }
}

/// Builds the complementarity graph over `embeddings` (one row per view, the
/// global view at row `global_index`, which must be 0).
pub fn build(
    embeddings: &Array2<f64>,
    global_index: usize,
    label: Option<usize>,
    cfg: &ComplementarityConfig,
) -> Result<ViewGraph> {
    if embeddings.nrows() < 2 {
        return Err(contract("complementarity graph needs at least two views"));
    }
    if global_index != GLOBAL {
        return Err(contract("the global view must be stored at index 0"));
    }
    if !(cfg.weight_cap > 0.0) {
        return Err(contract("weight cap must be positive"));
    }
    let mut nodes = embeddings.clone();
    if cfg.normalize_embeddings {
        for mut row in nodes.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    let n = nodes.nrows();
    let dim = nodes.ncols();
    let mut edges = Array2::zeros((n * (n - 1) / 2, dim));
    for (row, (i, j)) in pairs(n).enumerate() {
        let value = if i == GLOBAL || !cfg.use_complementarity {
            1.0
        } else {
            let dot = nodes.row(i).dot(&nodes.row(j)).abs();
            if dot > 0.0 {
                (1.0 / dot).min(cfg.weight_cap)
            } else {
                cfg.weight_cap
            }
        };
        edges.row_mut(row).fill(value);
    }
    ViewGraph::new(nodes, edges, label)
}

/// One graph per dataset instance, in dataset order.
pub fn build_dataset(ds: &SynthDataset, cfg: &ComplementarityConfig) -> Result<Vec<ViewGraph>> {
    ds.instances
        .par_iter()
        .map(|inst| build(&inst.embeddings, GLOBAL, Some(inst.label), cfg))
        .collect()
}
