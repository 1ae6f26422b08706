//! Explanation quality: fidelity, sparsity, fidelity–sparsity curves against a
//! random-subset baseline, and mean average clique similarity (mACS@k).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{contract, domain, Result};
use crate::graph::{ExplanationSubgraph, ViewGraph, GLOBAL};
use crate::hed::{hed, CostModel};
use crate::proxy::ProxyGraph;
use crate::transitivity::{count_k_cliques_with_global, emergence_score, Gamma};

#[derive(Debug, Clone)]
pub struct ExplanationItem<'a> {
    pub subgraph: ExplanationSubgraph<'a>,
    pub label: usize,
}

/// One explanation per instance, plus the class proxies they are judged against.
#[derive(Debug, Clone)]
pub struct ExplanationSet<'a> {
    items: Vec<ExplanationItem<'a>>,
    proxies: &'a [ProxyGraph],
}

impl<'a> ExplanationSet<'a> {
    pub fn new(items: Vec<ExplanationItem<'a>>, proxies: &'a [ProxyGraph]) -> Result<Self> {
        let set = Self { items, proxies };
        for item in &set.items {
            set.proxy(item.label)?;
        }
        Ok(set)
    }

    pub fn items(&self) -> &[ExplanationItem<'a>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn proxy(&self, label: usize) -> Result<&'a ProxyGraph> {
        self.proxies
            .iter()
            .find(|p| p.class_id == label)
            .ok_or_else(|| contract(format!("no proxy for class {label}")))
    }
}

/// `hed(G', G_p) - hed(G, G_p)` for every instance.
pub fn per_instance_fidelity<C: CostModel + ?Sized>(
    expls: &ExplanationSet,
    psi: &C,
) -> Result<Vec<f64>> {
    expls
        .items
        .par_iter()
        .map(|item| {
            let proxy = expls.proxy(item.label)?;
            let sub = item.subgraph.to_graph();
            let h_sub = hed(sub.node_features().view(), proxy.nodes(), psi)?.value;
            let full = item.subgraph.parent();
            let h_full = hed(full.node_features().view(), proxy.nodes(), psi)?.value;
            Ok(h_sub - h_full)
        })
        .collect()
}

/// Mean of `hed(G', G_p) - hed(G, G_p)`. Positive values mean the explanation
/// sits farther from its class proxy than the full graph does.
pub fn fidelity<C: CostModel + ?Sized>(expls: &ExplanationSet, psi: &C) -> Result<f64> {
    if expls.is_empty() {
        return Err(domain("fidelity of an empty explanation set"));
    }
    let values = per_instance_fidelity(expls, psi)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of `1 - |G'| / |G|`.
pub fn sparsity(expls: &ExplanationSet) -> Result<f64> {
    if expls.is_empty() {
        return Err(domain("sparsity of an empty explanation set"));
    }
    let total: f64 = expls
        .items
        .iter()
        .map(|item| 1.0 - item.subgraph.len() as f64 / item.subgraph.parent().num_views() as f64)
        .sum();
    Ok(total / expls.len() as f64)
}

/// Global view plus the `k` locals with the highest emergence score (ties to
/// the lower index). `k` larger than the local count keeps every node.
pub fn top_k_explanation(g: &ViewGraph, k: usize) -> Result<ExplanationSubgraph<'_>> {
    let mut locals: Vec<(usize, f64)> = (1..g.num_views())
        .map(|i| Ok((i, emergence_score(g, i)?)))
        .collect::<Result<_>>()?;
    locals.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut nodes: BTreeSet<usize> = locals.iter().take(k).map(|&(i, _)| i).collect();
    nodes.insert(GLOBAL);
    ExplanationSubgraph::new(g, nodes)
}

/// Global view plus `k` locals drawn uniformly without replacement.
pub fn random_explanation<'a>(
    g: &'a ViewGraph,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ExplanationSubgraph<'a>> {
    let locals = g.num_views() - 1;
    let mut nodes: BTreeSet<usize> = sample(rng, locals, k.min(locals))
        .into_iter()
        .map(|i| i + 1)
        .collect();
    nodes.insert(GLOBAL);
    ExplanationSubgraph::new(g, nodes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub sparsity: f64,
    pub fidelity: f64,
}

fn labelled(graphs: &[ViewGraph]) -> Result<Vec<usize>> {
    graphs
        .iter()
        .map(|g| g.label().ok_or_else(|| contract("explained graphs need labels")))
        .collect()
}

/// One (sparsity, fidelity) point per requested `k`, explaining every graph by
/// its top-`k` emergence subgraph. `graphs` are semantic relevance graphs.
pub fn fidelity_sparsity_curve<C: CostModel + ?Sized>(
    graphs: &[ViewGraph],
    proxies: &[ProxyGraph],
    psi: &C,
    top_k: &[usize],
) -> Result<Vec<CurvePoint>> {
    let labels = labelled(graphs)?;
    top_k
        .iter()
        .map(|&k| {
            let items = graphs
                .iter()
                .zip(&labels)
                .map(|(g, &label)| {
                    Ok(ExplanationItem {
                        subgraph: top_k_explanation(g, k)?,
                        label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set = ExplanationSet::new(items, proxies)?;
            Ok(CurvePoint {
                k,
                sparsity: sparsity(&set)?,
                fidelity: fidelity(&set, psi)?,
            })
        })
        .collect()
}

/// The same curve with random `k`-subsets, averaged over `draws` draws.
pub fn random_baseline_curve<C: CostModel + ?Sized>(
    graphs: &[ViewGraph],
    proxies: &[ProxyGraph],
    psi: &C,
    top_k: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if draws == 0 {
        return Err(contract("random baseline needs at least one draw"));
    }
    let labels = labelled(graphs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(top_k.len());
    for &k in top_k {
        let (mut s, mut f) = (0.0, 0.0);
        for _ in 0..draws {
            let items = graphs
                .iter()
                .zip(&labels)
                .map(|(g, &label)| {
                    Ok(ExplanationItem {
                        subgraph: random_explanation(g, k, &mut rng)?,
                        label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set = ExplanationSet::new(items, proxies)?;
            s += sparsity(&set)?;
            f += fidelity(&set, psi)?;
        }
        out.push(CurvePoint {
            k,
            sparsity: s / draws as f64,
            fidelity: f / draws as f64,
        });
    }
    Ok(out)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("k,sparsity,fidelity\n");
    for p in points {
        let _ = writeln!(s, "{},{:.6},{:.6}", p.k, p.sparsity, p.fidelity);
    }
    s
}

pub fn macs_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,macs\n");
    for (k, m) in rows {
        let _ = writeln!(s, "{k},{m:.6}");
    }
    s
}

/// Mean over classes of `1 - ACD`, where `ACD = |ACC_a - ACC_b| / max(ACC_a, ACC_b)`
/// and `ACC` is a class's mean count of `k`-cliques through the global view.
/// Both sets must explain the same instances in the same order.
pub fn macs_at_k(a: &ExplanationSet, b: &ExplanationSet, k: usize, gamma: &Gamma) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract("mACS needs explanations of the same instances"));
    }
    if a.is_empty() {
        return Err(domain("mACS of empty explanation sets"));
    }
    for (x, y) in a.items.iter().zip(&b.items) {
        if x.label != y.label || x.subgraph.parent().num_views() != y.subgraph.parent().num_views()
        {
            return Err(contract("mACS needs explanations of the same instances"));
        }
    }
    let counts = |set: &ExplanationSet| -> Result<Vec<f64>> {
        set.items
            .par_iter()
            .map(|item| {
                let g = item.subgraph.to_graph();
                let threshold = gamma.resolve(&g)?;
                Ok(count_k_cliques_with_global(&g, k, threshold)? as f64)
            })
            .collect()
    };
    let ca = counts(a)?;
    let cb = counts(b)?;
    let classes: BTreeSet<usize> = a.items.iter().map(|i| i.label).collect();
    let mut total = 0.0;
    for &c in &classes {
        let idx: Vec<usize> = (0..a.len()).filter(|&i| a.items[i].label == c).collect();
        let acc_a = idx.iter().map(|&i| ca[i]).sum::<f64>() / idx.len() as f64;
        let acc_b = idx.iter().map(|&i| cb[i]).sum::<f64>() / idx.len() as f64;
        let hi = acc_a.max(acc_b);
        let acd = if hi == 0.0 { 0.0 } else { (acc_a - acc_b).abs() / hi };
        total += acd;
    }
    Ok(1.0 - total / classes.len() as f64)
}
