//! Learnable Hausdorff edit distance between node sets, its subgradient, and
//! an exhaustive graph edit distance oracle for small graphs.
//!
//! Node costs:
//!
//! | edit                   | cost            |
//! |------------------------|-----------------|
//! | deletion `u -> ε`      | `ψ(u)`          |
//! | insertion `ε -> v`     | `ψ(v)`          |
//! | substitution `u -> v`  | `‖u - v‖ / 2`   |
//!
//! Every node of either graph pays the cheapest edit available to it, and the
//! total is scaled by `α = 1 / (2|V|)` with `|V|` the node count of the first
//! (instance) graph. Edges enter only through the encoder's node embeddings.
//!
//! Deletion and insertion compete inside the same per-node minimum as
//! substitution; substitution wins ties.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{sigmoid, softplus};
use crate::error::{contract, domain, Result};
use crate::params::Parameters;

/// Node insertion/deletion cost `ψ`. Implementations must return values `>= 0`.
pub trait CostModel: Sync {
    type Grad: Send;

    fn cost(&self, u: ArrayView1<f64>) -> f64;

    /// Adds `upstream · ∂ψ/∂u` into `d_u` and the parameter part into `d_params`.
    fn backward(
        &self,
        u: ArrayView1<f64>,
        upstream: f64,
        d_u: ArrayViewMut1<f64>,
        d_params: &mut Self::Grad,
    );

    fn zero_grad(&self) -> Self::Grad;
}

/// `ψ(u) = c` for every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantCost(pub f64);

impl CostModel for ConstantCost {
    type Grad = ();

    fn cost(&self, _u: ArrayView1<f64>) -> f64 {
        self.0
    }

    fn backward(&self, _: ArrayView1<f64>, _: f64, _: ArrayViewMut1<f64>, _: &mut ()) {}

    fn zero_grad(&self) {}
}

/// `ψ(u) = |w · u|`; positively homogeneous, used for scale checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCost(pub Array1<f64>);

impl CostModel for LinearCost {
    type Grad = Array1<f64>;

    fn cost(&self, u: ArrayView1<f64>) -> f64 {
        self.0.dot(&u).abs()
    }

    fn backward(
        &self,
        u: ArrayView1<f64>,
        upstream: f64,
        mut d_u: ArrayViewMut1<f64>,
        d_params: &mut Array1<f64>,
    ) {
        let sign = self.0.dot(&u).signum();
        if sign == 0.0 {
            return;
        }
        d_u.scaled_add(upstream * sign, &self.0);
        d_params.scaled_add(upstream * sign, &u);
    }

    fn zero_grad(&self) -> Array1<f64> {
        Array1::zeros(self.0.len())
    }
}

/// One-hidden-layer MLP cost head: `ψ(u) = softplus(w2 · tanh(W1ᵀ u + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostHeadWeights {
    /// `dim x width`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
}

impl CostHeadWeights {
    pub fn init(dim: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / (dim as f64).sqrt();
        let b2 = 1.0 / (width as f64).sqrt();
        Self {
            w1: Array2::from_shape_fn((dim, width), |_| rng.random_range(-b1..b1)),
            b1: Array1::zeros(width),
            w2: Array1::from_shape_fn(width, |_| rng.random_range(-b2..b2)),
            b2: Array1::zeros(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }
}

impl Parameters for CostHeadWeights {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("cost.w1".into(), self.w1.as_slice().unwrap()),
            ("cost.b1".into(), self.b1.as_slice().unwrap()),
            ("cost.w2".into(), self.w2.as_slice().unwrap()),
            ("cost.b2".into(), self.b2.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("cost.w1".into(), self.w1.as_slice_mut().unwrap()),
            ("cost.b1".into(), self.b1.as_slice_mut().unwrap()),
            ("cost.w2".into(), self.w2.as_slice_mut().unwrap()),
            ("cost.b2".into(), self.b2.as_slice_mut().unwrap()),
        ]
    }
}

impl CostModel for CostHeadWeights {
    type Grad = CostHeadWeights;

    fn cost(&self, u: ArrayView1<f64>) -> f64 {
        let hidden = (self.w1.t().dot(&u) + &self.b1).mapv(f64::tanh);
        softplus(self.w2.dot(&hidden) + self.b2[0])
    }

    fn backward(
        &self,
        u: ArrayView1<f64>,
        upstream: f64,
        mut d_u: ArrayViewMut1<f64>,
        g: &mut CostHeadWeights,
    ) {
        let hidden = (self.w1.t().dot(&u) + &self.b1).mapv(f64::tanh);
        let out = self.w2.dot(&hidden) + self.b2[0];
        let d_out = upstream * sigmoid(out);
        g.b2[0] += d_out;
        g.w2.scaled_add(d_out, &hidden);
        let d_pre = (&self.w2 * d_out) * hidden.mapv(|h| 1.0 - h * h);
        g.b1 += &d_pre;
        for (i, mut row) in g.w1.rows_mut().into_iter().enumerate() {
            row.scaled_add(u[i], &d_pre);
        }
        d_u += &self.w1.dot(&d_pre);
    }

    fn zero_grad(&self) -> CostHeadWeights {
        self.zeros_like()
    }
}

/// Cost head parameters with their gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct CostHead {
    pub weights: CostHeadWeights,
    pub grads: CostHeadWeights,
}

impl CostHead {
    pub fn init(dim: usize, width: usize, seed: u64) -> Self {
        let weights = CostHeadWeights::init(dim, width, seed);
        let grads = weights.zeros_like();
        Self { weights, grads }
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }
}

/// Where a node's cheapest edit sends it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Match {
    /// Substitution with this node of the other graph.
    Node(usize),
    /// Deletion (for the instance graph) or insertion (for the proxy graph).
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedResult {
    pub value: f64,
    /// `α = 1/(2|V|)`.
    pub alpha: f64,
    /// One entry per node of the instance graph.
    pub forward_assignment: Vec<Match>,
    /// One entry per node of the proxy graph.
    pub backward_assignment: Vec<Match>,
    /// Per-node minimum costs in the same order as the assignments.
    pub forward_costs: Vec<f64>,
    pub backward_costs: Vec<f64>,
    fingerprint: u64,
}

impl HedResult {
    /// Recomputes the value from the stored per-node minima.
    pub fn recomputed_value(&self) -> f64 {
        self.alpha
            * (self.forward_costs.iter().sum::<f64>() + self.backward_costs.iter().sum::<f64>())
    }
}

fn fingerprint(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    a.dim().hash(&mut h);
    b.dim().hash(&mut h);
    for x in a.iter().chain(b.iter()) {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_inputs(gs: &ArrayView2<f64>, gp: &ArrayView2<f64>) -> Result<()> {
    if gs.nrows() == 0 || gp.nrows() == 0 {
        return Err(domain("hausdorff edit distance of an empty graph"));
    }
    if gs.ncols() != gp.ncols() {
        return Err(contract(format!(
            "node dimensions differ: {} vs {}",
            gs.ncols(),
            gp.ncols()
        )));
    }
    Ok(())
}

/// Hausdorff edit distance between the node sets `gs` (instance) and `gp` (proxy).
pub fn hed<C: CostModel + ?Sized>(
    gs: ArrayView2<f64>,
    gp: ArrayView2<f64>,
    psi: &C,
) -> Result<HedResult> {
    check_inputs(&gs, &gp)?;
    let (ns, np) = (gs.nrows(), gp.nrows());
    let mut half = Array2::zeros((ns, np));
    for i in 0..ns {
        for j in 0..np {
            half[[i, j]] = distance(gs.row(i), gp.row(j)) / 2.0;
        }
    }
    let pick = |costs: &mut dyn Iterator<Item = f64>, edit: f64| {
        let mut best = (f64::INFINITY, Match::Empty);
        for (j, c) in costs.enumerate() {
            if c < best.0 {
                best = (c, Match::Node(j));
            }
        }
        if edit < best.0 {
            (edit, Match::Empty)
        } else {
            best
        }
    };
    let mut forward_assignment = Vec::with_capacity(ns);
    let mut forward_costs = Vec::with_capacity(ns);
    for i in 0..ns {
        let (c, m) = pick(&mut half.row(i).iter().copied(), psi.cost(gs.row(i)));
        forward_costs.push(c);
        forward_assignment.push(m);
    }
    let mut backward_assignment = Vec::with_capacity(np);
    let mut backward_costs = Vec::with_capacity(np);
    for j in 0..np {
        let (c, m) = pick(&mut half.column(j).iter().copied(), psi.cost(gp.row(j)));
        backward_costs.push(c);
        backward_assignment.push(m);
    }
    let alpha = 1.0 / (2.0 * ns as f64);
    let value =
        alpha * (forward_costs.iter().sum::<f64>() + backward_costs.iter().sum::<f64>());
    Ok(HedResult {
        value,
        alpha,
        forward_assignment,
        backward_assignment,
        forward_costs,
        backward_costs,
        fingerprint: fingerprint(&gs, &gp),
    })
}

pub struct HedGradients<G> {
    pub d_instance: Array2<f64>,
    pub d_proxy: Array2<f64>,
    pub d_cost: G,
}

/// Subgradient of `upstream · hed(gs, gp)` along the recorded argmin branches.
/// The norm at zero contributes the zero subgradient.
pub fn hed_backward<C: CostModel + ?Sized>(
    result: &HedResult,
    gs: ArrayView2<f64>,
    gp: ArrayView2<f64>,
    psi: &C,
    upstream: f64,
) -> Result<HedGradients<C::Grad>> {
    let mut d_cost = psi.zero_grad();
    let (d_instance, d_proxy) = hed_backward_into(result, gs, gp, psi, upstream, &mut d_cost)?;
    Ok(HedGradients {
        d_instance,
        d_proxy,
        d_cost,
    })
}

/// Like [`hed_backward`] but accumulates the cost-head part into `d_cost`.
pub fn hed_backward_into<C: CostModel + ?Sized>(
    result: &HedResult,
    gs: ArrayView2<f64>,
    gp: ArrayView2<f64>,
    psi: &C,
    upstream: f64,
    d_cost: &mut C::Grad,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if result.forward_assignment.len() != gs.nrows()
        || result.backward_assignment.len() != gp.nrows()
        || fingerprint(&gs, &gp) != result.fingerprint
    {
        return Err(contract("hed result does not belong to these inputs"));
    }
    let scale = upstream * result.alpha;
    let mut d_gs = Array2::zeros(gs.dim());
    let mut d_gp = Array2::zeros(gp.dim());
    let sub = |i: usize, j: usize, d_gs: &mut Array2<f64>, d_gp: &mut Array2<f64>| {
        let diff = &gs.row(i) - &gp.row(j);
        let norm = diff.dot(&diff).sqrt();
        if norm > 0.0 {
            let g = diff * (scale / (2.0 * norm));
            let mut a = d_gs.row_mut(i);
            a += &g;
            let mut b = d_gp.row_mut(j);
            b -= &g;
        }
    };
    for (i, m) in result.forward_assignment.iter().enumerate() {
        match *m {
            Match::Node(j) => sub(i, j, &mut d_gs, &mut d_gp),
            Match::Empty => psi.backward(gs.row(i), scale, d_gs.row_mut(i), d_cost),
        }
    }
    for (j, m) in result.backward_assignment.iter().enumerate() {
        match *m {
            Match::Node(i) => sub(i, j, &mut d_gs, &mut d_gp),
            Match::Empty => psi.backward(gp.row(j), scale, d_gp.row_mut(j), d_cost),
        }
    }
    Ok((d_gs, d_gp))
}

/// Largest graph the exhaustive oracle accepts.
pub const EXACT_GED_MAX_NODES: usize = 8;

/// Exact edit distance over node edits only, by exhaustive search over partial
/// injective maps from `gs` into `gp`. Substitutions cost `‖u - v‖`, deletions
/// `ψ(u)`, insertions `ψ(v)`; the total carries the same `α = 1/(2|gs|)` as
/// [`hed`], so `hed <= exact_ged` holds for any cost model.
pub fn exact_ged<C: CostModel + ?Sized>(
    gs: ArrayView2<f64>,
    gp: ArrayView2<f64>,
    psi: &C,
) -> Result<f64> {
    if gs.nrows() > EXACT_GED_MAX_NODES || gp.nrows() > EXACT_GED_MAX_NODES {
        return Err(domain(format!(
            "exact edit distance is limited to {EXACT_GED_MAX_NODES} nodes per graph"
        )));
    }
    if gs.nrows() == 0 {
        return Err(domain("exact edit distance needs a non-empty instance graph"));
    }
    if gp.nrows() > 0 && gs.ncols() != gp.ncols() {
        return Err(contract("node dimensions differ"));
    }
    let (ns, np) = (gs.nrows(), gp.nrows());
    let sub: Vec<Vec<f64>> = (0..ns)
        .map(|i| (0..np).map(|j| distance(gs.row(i), gp.row(j))).collect())
        .collect();
    let del: Vec<f64> = (0..ns).map(|i| psi.cost(gs.row(i))).collect();
    let ins: Vec<f64> = (0..np).map(|j| psi.cost(gp.row(j))).collect();

    struct Search<'a> {
        sub: &'a [Vec<f64>],
        del: &'a [f64],
        ins: &'a [f64],
        best: f64,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, used: u32, acc: f64) {
            if acc >= self.best {
                return;
            }
            if i == self.del.len() {
                let rest: f64 = (0..self.ins.len())
                    .filter(|j| used & (1 << j) == 0)
                    .map(|j| self.ins[j])
                    .sum();
                self.best = self.best.min(acc + rest);
                return;
            }
            for j in 0..self.ins.len() {
                if used & (1 << j) == 0 {
                    self.go(i + 1, used | (1 << j), acc + self.sub[i][j]);
                }
            }
            self.go(i + 1, used, acc + self.del[i]);
        }
    }

    let mut s = Search {
        sub: &sub,
        del: &del,
        ins: &ins,
        best: f64::INFINITY,
    };
    s.go(0, 0, 0.0);
    Ok(s.best / (2.0 * ns as f64))
}
