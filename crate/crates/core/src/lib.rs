//! Transitivity-recovering decompositions: classify instances by matching
//! their view graphs to class concept graphs under a learnable Hausdorff edit
//! distance.
//!
//! The pipeline runs synthetic view embeddings ([`synth`]) through a
//! complementarity graph ([`complementarity`]), a graph attention encoder
//! ([`encoder`]), and compares the resulting semantic relevance graphs with
//! per-class proxy graphs ([`proxy`]) using [`hed`]. [`transitivity`] and
//! [`explain`] analyse the learned graphs; [`trainer`] wires it all together.

pub mod checkpoint;
pub mod complementarity;
pub mod config;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod graph;
pub mod hed;
pub mod params;
pub mod proxy;
pub mod synth;
pub mod trainer;
pub mod transitivity;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Result, TrdError};
pub use graph::{edge_weight, export_dot, induced_subgraph, ExplanationSubgraph, ViewGraph};
