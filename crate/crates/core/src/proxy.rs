//! Class concept graphs, online Sinkhorn-Knopp clustering, the proxy-anchor
//! objective over edit distances, and nearest-proxy classification.

use ndarray::{Array2, ArrayView2};

use crate::error::{contract, domain, Result, TrdError};
use crate::graph::{num_pairs, pair_index, pairs, ViewGraph, GLOBAL};
use crate::hed::{hed, CostModel};

/// Concept graph of one class. Slot 0 is the global concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyGraph {
    pub class_id: usize,
    /// `|V| x d`
    pub node_centroids: Array2<f64>,
    /// `|V|(|V|-1)/2 x d`, keyed by slot pair in edge-table order.
    pub edge_centroids: Array2<f64>,
}

impl ProxyGraph {
    pub fn new(
        class_id: usize,
        node_centroids: Array2<f64>,
        edge_centroids: Array2<f64>,
    ) -> Result<Self> {
        let v = node_centroids.nrows();
        if v == 0 {
            return Err(contract("proxy graph needs at least one slot"));
        }
        if edge_centroids.nrows() != num_pairs(v) {
            return Err(contract(format!(
                "{v} node slots need {} edge centroids, got {}",
                num_pairs(v),
                edge_centroids.nrows()
            )));
        }
        if node_centroids.iter().chain(edge_centroids.iter()).any(|x| !x.is_finite()) {
            return Err(contract("proxy centroids must be finite"));
        }
        Ok(Self {
            class_id,
            node_centroids,
            edge_centroids,
        })
    }

    /// Starts a proxy as a copy of one instance graph.
    pub fn from_instance(class_id: usize, g: &ViewGraph) -> Result<Self> {
        Self::new(
            class_id,
            g.node_features().clone(),
            g.edge_features().clone(),
        )
    }

    pub fn num_slots(&self) -> usize {
        self.node_centroids.nrows()
    }

    pub fn nodes(&self) -> ArrayView2<'_, f64> {
        self.node_centroids.view()
    }

    pub fn to_view_graph(&self) -> ViewGraph {
        ViewGraph::new(
            self.node_centroids.clone(),
            self.edge_centroids.clone(),
            Some(self.class_id),
        )
        .expect("proxy invariants match view graph invariants")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularizer ε.
    pub epsilon: f64,
    pub max_iters: usize,
    pub marginal_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 1000,
            marginal_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub plan: Array2<f64>,
    /// `false` means `max_iters` ran out; `residual` says by how much.
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute row or column marginal violation.
    pub residual: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport by alternating row and column scalings of
/// `exp(-cost/ε)`. `+∞` costs forbid a cell. Rows with zero mass receive no
/// plan mass and are left out of the scaling.
///
/// The scalings run on a kernel that is rescaled by log-domain potentials;
/// whenever a scaling vector leaves a safe range it is absorbed into the
/// potentials and the kernel is rebuilt, so small ε does not underflow.
pub fn sinkhorn(
    cost: &Array2<f64>,
    row_marginals: &[f64],
    col_marginals: &[f64],
    cfg: &SinkhornConfig,
) -> Result<SinkhornOutcome> {
    let (m, c) = cost.dim();
    if row_marginals.len() != m || col_marginals.len() != c {
        return Err(contract("marginal lengths differ from the cost matrix shape"));
    }
    if !(cfg.epsilon > 0.0) || !(cfg.marginal_tol > 0.0) {
        return Err(contract("sinkhorn needs positive ε and tolerance"));
    }
    if row_marginals.iter().chain(col_marginals).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(contract("marginals must be finite and non-negative"));
    }
    let rs: f64 = row_marginals.iter().sum();
    let cs: f64 = col_marginals.iter().sum();
    if (rs - cs).abs() > 1e-9 * rs.max(cs).max(1.0) {
        return Err(contract(format!("marginal masses differ: {rs} vs {cs}")));
    }
    if cost.iter().any(|&x| x.is_nan() || x == f64::NEG_INFINITY) {
        return Err(contract("costs must be finite or +∞"));
    }

    let log_k = cost.mapv(|x| -x / cfg.epsilon);
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; c];
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; c];
    let mut kernel = Array2::zeros((m, c));
    let mut row_sum = vec![0.0; m];
    let mut col_sum = vec![0.0; c];

    log_domain_step(&log_k, row_marginals, col_marginals, &mut f, &mut g)?;
    rebuild_kernel(&log_k, &f, &g, &mut kernel);
    let mut iterations = 1;
    let converged = loop {
        let mut residual: f64 = 0.0;
        for i in 0..m {
            row_sum[i] = kernel.row(i).iter().zip(&v).map(|(k, v)| k * v).sum();
            if row_marginals[i] > 0.0 {
                residual = residual.max((u[i] * row_sum[i] - row_marginals[i]).abs());
            }
        }
        if residual <= cfg.marginal_tol {
            break true;
        }
        if iterations == cfg.max_iters {
            break false;
        }
        iterations += 1;

        let mut healthy = true;
        for i in 0..m {
            if row_marginals[i] == 0.0 {
                u[i] = 0.0;
            } else if row_sum[i] > 0.0 {
                u[i] = row_marginals[i] / row_sum[i];
            } else {
                healthy = false;
            }
        }
        if healthy {
            col_sum.fill(0.0);
            for i in 0..m {
                if u[i] != 0.0 {
                    for (s, k) in col_sum.iter_mut().zip(kernel.row(i)) {
                        *s += k * u[i];
                    }
                }
            }
            for j in 0..c {
                if col_marginals[j] == 0.0 {
                    v[j] = 0.0;
                } else if col_sum[j] > 0.0 {
                    v[j] = col_marginals[j] / col_sum[j];
                } else {
                    healthy = false;
                }
            }
        }
        let safe = |x: &f64| *x == 0.0 || (1e-50..1e50).contains(x);
        if !healthy || !u.iter().all(safe) || !v.iter().all(safe) {
            // absorb whatever is usable and redo the step in the log domain
            for (fi, ui) in f.iter_mut().zip(&u) {
                if ui.is_finite() && *ui > 0.0 {
                    *fi += ui.ln();
                }
            }
            for (gj, vj) in g.iter_mut().zip(&v) {
                if vj.is_finite() && *vj > 0.0 {
                    *gj += vj.ln();
                }
            }
            log_domain_step(&log_k, row_marginals, col_marginals, &mut f, &mut g)?;
            rebuild_kernel(&log_k, &f, &g, &mut kernel);
            u.fill(1.0);
            v.fill(1.0);
        }
    };
    let plan = Array2::from_shape_fn((m, c), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    let residual = marginal_residual(&plan, row_marginals, col_marginals);
    Ok(SinkhornOutcome {
        plan,
        converged,
        iterations,
        residual,
    })
}

/// One exact row update followed by one exact column update on log potentials.
fn log_domain_step(
    log_k: &Array2<f64>,
    rows: &[f64],
    cols: &[f64],
    f: &mut [f64],
    g: &mut [f64],
) -> Result<()> {
    let (m, c) = log_k.dim();
    for i in 0..m {
        f[i] = if rows[i] == 0.0 {
            f64::NEG_INFINITY
        } else {
            let lse = log_sum_exp((0..c).map(|j| g[j] + log_k[[i, j]]));
            if lse == f64::NEG_INFINITY {
                return Err(domain(format!("row {i} has mass but no admissible column")));
            }
            rows[i].ln() - lse
        };
    }
    for j in 0..c {
        g[j] = if cols[j] == 0.0 {
            f64::NEG_INFINITY
        } else {
            let lse = log_sum_exp((0..m).map(|i| f[i] + log_k[[i, j]]));
            if lse == f64::NEG_INFINITY {
                return Err(domain(format!("column {j} has mass but no admissible row")));
            }
            cols[j].ln() - lse
        };
    }
    Ok(())
}

fn rebuild_kernel(log_k: &Array2<f64>, f: &[f64], g: &[f64], kernel: &mut Array2<f64>) {
    for ((i, j), k) in kernel.indexed_iter_mut() {
        let x = f[i] + g[j] + log_k[[i, j]];
        *k = if x == f64::NEG_INFINITY || x.is_nan() { 0.0 } else { x.exp() };
    }
}

/// Largest absolute violation of either marginal.
pub fn marginal_residual(plan: &Array2<f64>, rows: &[f64], cols: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, r) in rows.iter().enumerate() {
        worst = worst.max((plan.row(i).sum() - r).abs());
    }
    for (j, c) in cols.iter().enumerate() {
        worst = worst.max((plan.column(j).sum() - c).abs());
    }
    worst
}

fn check_batch(proxy: &ProxyGraph, batch: &[&ViewGraph]) -> Result<()> {
    if batch.is_empty() {
        return Err(contract("proxy update needs a non-empty batch"));
    }
    let v = proxy.num_slots();
    let d = proxy.node_centroids.ncols();
    for g in batch {
        if g.num_views() != v || g.feature_dim() != d {
            return Err(contract(format!(
                "batch graph has {} nodes of dim {}, proxy has {v} slots of dim {d}",
                g.num_views(),
                g.feature_dim()
            )));
        }
        if let Some(label) = g.label() {
            if label != proxy.class_id {
                return Err(contract(format!(
                    "graph of class {label} in a batch for class {}",
                    proxy.class_id
                )));
            }
        }
    }
    Ok(())
}

/// Transport plan from all batch nodes (rows, instance by instance) to proxy
/// node slots. Costs are squared distances divided by the feature dimension;
/// global views are pinned to slot 0 and local views are kept out of it.
pub fn node_plan(
    proxy: &ProxyGraph,
    batch: &[&ViewGraph],
    cfg: &SinkhornConfig,
) -> Result<SinkhornOutcome> {
    check_batch(proxy, batch)?;
    let v = proxy.num_slots();
    let d = proxy.node_centroids.ncols() as f64;
    let rows = batch.len() * v;
    let mut cost = Array2::zeros((rows, v));
    for (b, g) in batch.iter().enumerate() {
        for i in 0..v {
            let r = b * v + i;
            for s in 0..v {
                cost[[r, s]] = if (i == GLOBAL) != (s == GLOBAL) {
                    f64::INFINITY
                } else if i == GLOBAL {
                    0.0
                } else {
                    let diff = &g.node(i) - &proxy.node_centroids.row(s);
                    diff.dot(&diff) / d
                };
            }
        }
    }
    let row_m = vec![1.0 / rows as f64; rows];
    let col_m = vec![1.0 / v as f64; v];
    sinkhorn(&cost, &row_m, &col_m, cfg)
}

/// One online clustering step for a class proxy.
///
/// Nodes: plan-weighted means of the batch nodes per slot, blended into the
/// old centroids as `m·old + (1-m)·new`. Edges: each instance edge is keyed by
/// the argmax slots of its two endpoints; keys whose endpoints share a slot are
/// skipped, and edge centroids without any contribution keep their value.
pub fn update_proxies(
    proxy: &ProxyGraph,
    batch: &[&ViewGraph],
    cfg: &SinkhornConfig,
    momentum: f64,
) -> Result<ProxyGraph> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(contract("momentum must lie in [0, 1]"));
    }
    let outcome = node_plan(proxy, batch, cfg)?;
    let plan = &outcome.plan;
    let v = proxy.num_slots();
    let d = proxy.node_centroids.ncols();

    let mut nodes = proxy.node_centroids.clone();
    for s in 0..v {
        let mut mean = ndarray::Array1::<f64>::zeros(d);
        let mut mass = 0.0;
        for (b, g) in batch.iter().enumerate() {
            for i in 0..v {
                let w = plan[[b * v + i, s]];
                if w > 0.0 {
                    mean.scaled_add(w, &g.node(i));
                    mass += w;
                }
            }
        }
        if mass > 0.0 {
            mean /= mass;
            let mut row = nodes.row_mut(s);
            row *= momentum;
            row.scaled_add(1.0 - momentum, &mean);
        }
    }

    let edge_dim = proxy.edge_centroids.ncols();
    let mut sums = Array2::<f64>::zeros((num_pairs(v), edge_dim));
    let mut counts = vec![0usize; num_pairs(v)];
    for (b, g) in batch.iter().enumerate() {
        let slot: Vec<usize> = (0..v)
            .map(|i| {
                let row = plan.row(b * v + i);
                let mut best = 0;
                for s in 1..v {
                    if row[s] > row[best] {
                        best = s;
                    }
                }
                best
            })
            .collect();
        for (p, (i, j)) in pairs(v).enumerate() {
            if slot[i] == slot[j] {
                continue;
            }
            let key = pair_index(v, slot[i], slot[j]);
            let mut acc = sums.row_mut(key);
            acc += &g.edge_features().row(p);
            counts[key] += 1;
        }
    }
    let mut edges = proxy.edge_centroids.clone();
    for (key, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = &sums.row(key) / count as f64;
            let mut row = edges.row_mut(key);
            row *= momentum;
            row.scaled_add(1.0 - momentum, &mean);
        }
    }
    ProxyGraph::new(proxy.class_id, nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyAnchorConfig {
    /// Margin δ.
    pub margin: f64,
    /// Scale (inverse temperature) `s`.
    pub scale: f64,
}

impl Default for ProxyAnchorConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            scale: 32.0,
        }
    }
}

/// `log(1 + Σ exp(a_x))` and its softmax weights over `a`.
fn log1p_sum_exp(a: &[f64]) -> (f64, Vec<f64>) {
    let max = a.iter().copied().fold(0.0f64, f64::max);
    let denom = (-max).exp() + a.iter().map(|x| (x - max).exp()).sum::<f64>();
    let value = max + denom.ln();
    let weights = a.iter().map(|x| (x - max).exp() / denom).collect();
    (value, weights)
}

/// Proxy-anchor loss with similarity `s(x, p) = -h(x, p)`.
///
/// `distances[[x, p]]` is the edit distance between instance `x` and the proxy
/// of class `p`. Returns the loss and `∂loss/∂distances`.
pub fn proxy_anchor_loss(
    distances: &Array2<f64>,
    labels: &[usize],
    cfg: &ProxyAnchorConfig,
) -> Result<(f64, Array2<f64>)> {
    let (n, classes) = distances.dim();
    if labels.len() != n {
        return Err(contract("one label per distance row is required"));
    }
    if !(cfg.scale > 0.0) {
        return Err(contract("proxy-anchor scale must be positive"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(contract(format!("label {bad} has no proxy column")));
    }
    if n == 0 {
        return Err(domain("proxy-anchor loss of a batch without positives"));
    }
    let positive_classes: Vec<usize> = (0..classes).filter(|p| labels.contains(p)).collect();
    let s = cfg.scale;
    let delta = cfg.margin;
    let mut grad = Array2::zeros((n, classes));
    let mut pos_total = 0.0;
    let pos_norm = 1.0 / positive_classes.len() as f64;
    for &p in &positive_classes {
        let members: Vec<usize> = (0..n).filter(|&x| labels[x] == p).collect();
        let a: Vec<f64> = members.iter().map(|&x| s * (distances[[x, p]] + delta)).collect();
        let (v, w) = log1p_sum_exp(&a);
        pos_total += v;
        for (k, &x) in members.iter().enumerate() {
            grad[[x, p]] += pos_norm * s * w[k];
        }
    }
    let mut neg_total = 0.0;
    let neg_norm = 1.0 / classes as f64;
    for p in 0..classes {
        let members: Vec<usize> = (0..n).filter(|&x| labels[x] != p).collect();
        if members.is_empty() {
            continue;
        }
        let a: Vec<f64> = members.iter().map(|&x| s * (delta - distances[[x, p]])).collect();
        let (v, w) = log1p_sum_exp(&a);
        neg_total += v;
        for (k, &x) in members.iter().enumerate() {
            grad[[x, p]] -= neg_norm * s * w[k];
        }
    }
    let loss = pos_norm * pos_total + neg_norm * neg_total;
    if !loss.is_finite() {
        return Err(TrdError::Numeric {
            layer: 0,
            what: "proxy-anchor loss".into(),
        });
    }
    Ok((loss, grad))
}

/// Index of the nearest proxy in `values` (ties to the lowest class id).
pub fn argmin_class(values: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(class, v) in values {
        match best {
            Some((bc, bv)) if v > bv || (v == bv && class > bc) => {}
            _ => best = Some((class, v)),
        }
    }
    best.map(|(c, _)| c)
}

/// Class of the proxy with the smallest edit distance to `instance`.
pub fn classify<C: CostModel + ?Sized>(
    instance: &ViewGraph,
    proxies: &[ProxyGraph],
    psi: &C,
) -> Result<usize> {
    if proxies.is_empty() {
        return Err(domain("classification needs at least one proxy"));
    }
    let mut values = Vec::with_capacity(proxies.len());
    for p in proxies {
        let r = hed(instance.node_features().view(), p.nodes(), psi)?;
        values.push((p.class_id, r.value));
    }
    Ok(argmin_class(&values).expect("non-empty"))
}
