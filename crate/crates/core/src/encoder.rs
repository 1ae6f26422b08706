//! Multi-head graph attention encoder with GraphNorm and learnable edge
//! embeddings, plus its exact reverse pass.
//!
//! One layer, per head `h`:
//!
//! ```text
//! z_i      = W_h x_i
//! e_ij     = LeakyReLU(a_src·z_i + a_dst·z_j + a_edge·(P_h f_ij))      j ≠ i
//! α_ij     = softmax_j e_ij
//! o_i      = Σ_j α_ij z_j
//! ```
//!
//! Heads are concatenated on hidden layers and averaged on the last one, then
//! GraphNorm is applied; hidden layers follow it with an ELU. Edge embeddings
//! are refreshed after every layer when `edge_update` is set, and always after
//! the last one:
//!
//! ```text
//! f_ij' = softplus(½ (U [h_i ‖ h_j ‖ f_ij] + U [h_j ‖ h_i ‖ f_ij]) + b)
//! ```
//!
//! The symmetrized form keeps edge embeddings undirected.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, domain, Result, TrdError};
use crate::graph::{num_pairs, pairs, ViewGraph};
use crate::params::Parameters;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    /// Refresh edge embeddings after every layer instead of only the last.
    pub edge_update: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            heads: 4,
            hidden_dim: 32,
            leaky_slope: 0.2,
            edge_update: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| TrdError::Config {
            key: key.into(),
            msg: msg.into(),
        };
        if self.num_layers == 0 {
            return Err(bad("encoder.layers", "must be at least 1"));
        }
        if self.heads == 0 {
            return Err(bad("encoder.heads", "must be at least 1"));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.heads != 0 {
            return Err(bad(
                "encoder.hidden",
                "must be positive and divisible by the head count",
            ));
        }
        if !self.leaky_slope.is_finite() {
            return Err(bad("encoder.leaky_slope", "must be finite"));
        }
        Ok(())
    }

    fn is_last(&self, layer: usize) -> bool {
        layer + 1 == self.num_layers
    }

    fn updates_edges(&self, layer: usize) -> bool {
        self.edge_update || self.is_last(layer)
    }

    fn head_dim(&self, layer: usize) -> usize {
        if self.is_last(layer) {
            self.hidden_dim
        } else {
            self.hidden_dim / self.heads
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d_in x d_head`
    pub w: Array2<f64>,
    /// `[a_src ‖ a_dst ‖ a_edge]`, length `2·d_head + e_in`.
    pub attn: Array1<f64>,
    /// Edge projection `P`, `e_in x e_in`.
    pub edge_proj: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNormParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub mean_scale: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeUpdateParams {
    /// `(2·d + e_in) x d`
    pub u: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<HeadParams>,
    pub norm: GraphNormParams,
    pub edge: Option<EdgeUpdateParams>,
}

/// Encoder weights, or a gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GatWeights {
    pub layers: Vec<GatLayer>,
}

impl GatWeights {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }
}

fn slice_of(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

fn slice_of_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

impl Parameters for GatWeights {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{h}.w"), slice_of(&head.w)));
                out.push((format!("layer{l}.head{h}.attn"), head.attn.as_slice().unwrap()));
                out.push((format!("layer{l}.head{h}.edge_proj"), slice_of(&head.edge_proj)));
            }
            out.push((format!("layer{l}.norm.scale"), layer.norm.scale.as_slice().unwrap()));
            out.push((format!("layer{l}.norm.shift"), layer.norm.shift.as_slice().unwrap()));
            out.push((
                format!("layer{l}.norm.mean_scale"),
                layer.norm.mean_scale.as_slice().unwrap(),
            ));
            if let Some(e) = &layer.edge {
                out.push((format!("layer{l}.edge.u"), slice_of(&e.u)));
                out.push((format!("layer{l}.edge.bias"), e.bias.as_slice().unwrap()));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("layer{l}.head{h}.w"), slice_of_mut(&mut head.w)));
                out.push((
                    format!("layer{l}.head{h}.attn"),
                    head.attn.as_slice_mut().unwrap(),
                ));
                out.push((
                    format!("layer{l}.head{h}.edge_proj"),
                    slice_of_mut(&mut head.edge_proj),
                ));
            }
            let norm = &mut layer.norm;
            out.push((format!("layer{l}.norm.scale"), norm.scale.as_slice_mut().unwrap()));
            out.push((format!("layer{l}.norm.shift"), norm.shift.as_slice_mut().unwrap()));
            out.push((
                format!("layer{l}.norm.mean_scale"),
                norm.mean_scale.as_slice_mut().unwrap(),
            ));
            if let Some(e) = &mut layer.edge {
                out.push((format!("layer{l}.edge.u"), slice_of_mut(&mut e.u)));
                out.push((format!("layer{l}.edge.bias"), e.bias.as_slice_mut().unwrap()));
            }
        }
        out
    }
}

/// Encoder parameters with their gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub weights: GatWeights,
    pub grads: GatWeights,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..bound))
}

impl GatParams {
    /// Seeded initialization: every matrix and attention vector is drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; GraphNorm starts at the identity
    /// scale with zero shift and full mean subtraction.
    pub fn init(config: EncoderConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(contract("encoder input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut node_dim = input_dim;
        let mut edge_dim = input_dim;
        for l in 0..config.num_layers {
            let dh = config.head_dim(l);
            let heads = (0..config.heads)
                .map(|_| HeadParams {
                    w: uniform(&mut rng, (node_dim, dh), node_dim),
                    attn: uniform_vec(&mut rng, 2 * dh + edge_dim, 2 * dh + edge_dim),
                    edge_proj: uniform(&mut rng, (edge_dim, edge_dim), edge_dim),
                })
                .collect();
            let d = config.hidden_dim;
            let norm = GraphNormParams {
                scale: Array1::ones(d),
                shift: Array1::zeros(d),
                mean_scale: Array1::ones(d),
            };
            let edge = config.updates_edges(l).then(|| EdgeUpdateParams {
                u: uniform(&mut rng, (2 * d + edge_dim, d), 2 * d + edge_dim),
                bias: Array1::zeros(d),
            });
            if edge.is_some() {
                edge_dim = d;
            }
            layers.push(GatLayer { heads, norm, edge });
            node_dim = d;
        }
        let weights = GatWeights { layers };
        let grads = weights.zeros_like();
        Ok(Self {
            config,
            input_dim,
            weights,
            grads,
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    pub fn output_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Runs the encoder and returns the semantic relevance graph and the tape
    /// needed by [`GatParams::backward`].
    pub fn forward(&self, g: &ViewGraph) -> Result<(ViewGraph, Tape)> {
        if g.feature_dim() != self.input_dim {
            return Err(contract(format!(
                "graph feature dimension {} differs from encoder input {}",
                g.feature_dim(),
                self.input_dim
            )));
        }
        check_finite(g.node_features(), 0, "input node features")?;
        check_finite(g.edge_features(), 0, "input edge features")?;

        let n = g.num_views();
        let mut h = g.node_features().clone();
        let mut f = if g.num_edges() == 0 {
            Array2::zeros((0, self.input_dim))
        } else {
            g.edge_features().clone()
        };
        let mut tapes = Vec::with_capacity(self.config.num_layers);
        for (l, layer) in self.weights.layers.iter().enumerate() {
            let t = self.layer_forward(l, layer, h, f, n);
            check_finite(&t.h_out, l + 1, "node embeddings")?;
            check_finite(&t.f_out, l + 1, "edge embeddings")?;
            h = t.h_out.clone();
            f = t.f_out.clone();
            tapes.push(t);
        }
        let out = ViewGraph::new(h, f, g.label())?;
        Ok((
            out,
            Tape {
                layers: tapes,
                num_nodes: n,
                input_dim: self.input_dim,
            },
        ))
    }

    fn layer_forward(
        &self,
        l: usize,
        layer: &GatLayer,
        h_in: Array2<f64>,
        f_in: Array2<f64>,
        n: usize,
    ) -> LayerTape {
        let last = self.config.is_last(l);
        let dh = self.config.head_dim(l);
        let d = self.config.hidden_dim;
        let slope = self.config.leaky_slope;

        let mut heads = Vec::with_capacity(layer.heads.len());
        let mut x = Array2::zeros((n, d));
        for (hi, hp) in layer.heads.iter().enumerate() {
            let z = h_in.dot(&hp.w);
            let a_src = hp.attn.slice(s![..dh]);
            let a_dst = hp.attn.slice(s![dh..2 * dh]);
            let a_edge = hp.attn.slice(s![2 * dh..]);
            let q = hp.edge_proj.t().dot(&a_edge);
            let src = z.dot(&a_src);
            let dst = z.dot(&a_dst);
            let rel = f_in.dot(&q);

            let mut raw = Array2::zeros((n, n));
            for (p, (i, j)) in pairs(n).enumerate() {
                raw[[i, j]] = src[i] + dst[j] + rel[p];
                raw[[j, i]] = src[j] + dst[i] + rel[p];
            }
            let alpha = attention_softmax(&raw, slope);
            let o = alpha.dot(&z);
            if last {
                x.scaled_add(1.0 / layer.heads.len() as f64, &o);
            } else {
                x.slice_mut(s![.., hi * dh..(hi + 1) * dh]).assign(&o);
            }
            heads.push(HeadTape { z, raw, alpha, q });
        }

        let norm = graph_norm_forward(&x, &layer.norm);
        let g = norm.y.clone();
        let h_out = if last { g.clone() } else { g.mapv(elu) };

        let (edge, f_out) = match &layer.edge {
            Some(ep) => {
                let hs = pair_sums(&h_out, n);
                let u_sym = symmetric_u(&ep.u, d);
                let u_edge = ep.u.slice(s![2 * d.., ..]);
                let mut pre = hs.dot(&u_sym) + f_in.dot(&u_edge);
                pre += &ep.bias;
                let f_out = pre.mapv(softplus);
                (Some(EdgeTape { hs, pre }), f_out)
            }
            None => (None, f_in.clone()),
        };

        LayerTape {
            h_in,
            f_in,
            heads,
            norm,
            g,
            h_out,
            edge,
            f_out,
        }
    }

    /// Reverse pass; accumulates parameter gradients into `self.grads`.
    pub fn backward(
        &mut self,
        tape: &Tape,
        d_nodes: &Array2<f64>,
        d_edges: &Array2<f64>,
    ) -> Result<()> {
        let mut grads = std::mem::replace(&mut self.grads, GatWeights { layers: Vec::new() });
        let res = self.backward_into(tape, d_nodes, d_edges, &mut grads);
        self.grads = grads;
        res
    }

    /// Reverse pass into an external gradient buffer, so several instances can
    /// run in parallel against shared weights and be summed afterwards.
    pub fn backward_into(
        &self,
        tape: &Tape,
        d_nodes: &Array2<f64>,
        d_edges: &Array2<f64>,
        grads: &mut GatWeights,
    ) -> Result<()> {
        let n = tape.num_nodes;
        if tape.layers.len() != self.config.num_layers || tape.input_dim != self.input_dim {
            return Err(contract("tape was not produced by these parameters"));
        }
        if grads.layers.len() != self.weights.layers.len() {
            return Err(contract("gradient buffer shape differs from parameters"));
        }
        if d_nodes.dim() != (n, self.config.hidden_dim)
            || d_edges.dim() != (num_pairs(n), self.config.hidden_dim)
        {
            return Err(contract("upstream gradient shape differs from encoder output"));
        }
        let mut dh = d_nodes.clone();
        let mut df = d_edges.clone();
        for l in (0..self.config.num_layers).rev() {
            let (dh_in, df_in) = self.layer_backward(
                l,
                &self.weights.layers[l],
                &tape.layers[l],
                dh,
                df,
                &mut grads.layers[l],
                n,
            )?;
            dh = dh_in;
            df = df_in;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        l: usize,
        layer: &GatLayer,
        t: &LayerTape,
        mut dh_out: Array2<f64>,
        df_out: Array2<f64>,
        g: &mut GatLayer,
        n: usize,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let last = self.config.is_last(l);
        let dh = self.config.head_dim(l);
        let d = self.config.hidden_dim;
        let slope = self.config.leaky_slope;

        // edge update
        let mut df_in = match (&layer.edge, &t.edge) {
            (Some(ep), Some(et)) => {
                let ge = g.edge.as_mut().ok_or_else(|| contract("missing edge gradient"))?;
                let mut dpre = df_out;
                Zip::from(&mut dpre).and(&et.pre).for_each(|dp, &p| *dp *= sigmoid(p));
                let d_usym = et.hs.t().dot(&dpre);
                {
                    let mut gu = ge.u.slice_mut(s![..d, ..]);
                    gu.scaled_add(0.5, &d_usym);
                }
                {
                    let mut gu = ge.u.slice_mut(s![d..2 * d, ..]);
                    gu.scaled_add(0.5, &d_usym);
                }
                {
                    let mut gu = ge.u.slice_mut(s![2 * d.., ..]);
                    gu += &t.f_in.t().dot(&dpre);
                }
                ge.bias += &dpre.sum_axis(Axis(0));
                let u_sym = symmetric_u(&ep.u, d);
                let dhs = dpre.dot(&u_sym.t());
                for (p, (i, j)) in pairs(n).enumerate() {
                    let row = dhs.row(p);
                    let mut a = dh_out.row_mut(i);
                    a += &row;
                    let mut b = dh_out.row_mut(j);
                    b += &row;
                }
                dpre.dot(&ep.u.slice(s![2 * d.., ..]).t())
            }
            (None, None) => df_out,
            _ => return Err(contract("tape and parameters disagree on edge updates")),
        };

        // activation
        let dg = if last {
            dh_out
        } else {
            let mut dg = dh_out;
            Zip::from(&mut dg).and(&t.g).for_each(|dv, &gv| *dv *= elu_grad(gv));
            dg
        };

        let dx = graph_norm_backward(&dg, &t.norm, &layer.norm, &mut g.norm);

        let mut dh_in = Array2::zeros(t.h_in.dim());
        let n_heads = layer.heads.len() as f64;
        for (hi, (hp, ht)) in layer.heads.iter().zip(&t.heads).enumerate() {
            let gh = &mut g.heads[hi];
            let d_o = if last {
                &dx / n_heads
            } else {
                dx.slice(s![.., hi * dh..(hi + 1) * dh]).to_owned()
            };
            let d_alpha = d_o.dot(&ht.z.t());
            let mut dz = ht.alpha.t().dot(&d_o);

            let mut draw = Array2::zeros((n, n));
            for i in 0..n {
                let arow = ht.alpha.row(i);
                let drow = d_alpha.row(i);
                let inner: f64 = (0..n).filter(|&j| j != i).map(|j| arow[j] * drow[j]).sum();
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let de = arow[j] * (drow[j] - inner);
                    let r = ht.raw[[i, j]];
                    draw[[i, j]] = if r > 0.0 { de } else { slope * de };
                }
            }
            let d_src = draw.sum_axis(Axis(1));
            let d_dst = draw.sum_axis(Axis(0));
            let mut d_rel = Array1::zeros(num_pairs(n));
            for (p, (i, j)) in pairs(n).enumerate() {
                d_rel[p] = draw[[i, j]] + draw[[j, i]];
            }
            let dq = t.f_in.t().dot(&d_rel);
            for (p, mut row) in df_in.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(d_rel[p], &ht.q);
            }

            let a_src = hp.attn.slice(s![..dh]);
            let a_dst = hp.attn.slice(s![dh..2 * dh]);
            let a_edge = hp.attn.slice(s![2 * dh..]);
            {
                let mut ga = gh.attn.slice_mut(s![..dh]);
                ga += &ht.z.t().dot(&d_src);
            }
            {
                let mut ga = gh.attn.slice_mut(s![dh..2 * dh]);
                ga += &ht.z.t().dot(&d_dst);
            }
            {
                let mut ga = gh.attn.slice_mut(s![2 * dh..]);
                ga += &hp.edge_proj.dot(&dq);
            }
            add_outer(&mut dz, &d_src, &a_src);
            add_outer(&mut dz, &d_dst, &a_dst);
            add_outer(&mut gh.edge_proj, &a_edge.to_owned(), &dq.view());

            gh.w += &t.h_in.t().dot(&dz);
            dh_in += &dz.dot(&hp.w.t());
        }
        Ok((dh_in, df_in))
    }
}

/// Everything the reverse pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<LayerTape>,
    num_nodes: usize,
    input_dim: usize,
}

impl Tape {
    /// Attention coefficients of `layer`/`head` as an `N x N` matrix (zero diagonal).
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].heads[head].alpha
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    h_in: Array2<f64>,
    f_in: Array2<f64>,
    heads: Vec<HeadTape>,
    norm: NormTape,
    g: Array2<f64>,
    h_out: Array2<f64>,
    edge: Option<EdgeTape>,
    f_out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct HeadTape {
    z: Array2<f64>,
    raw: Array2<f64>,
    alpha: Array2<f64>,
    q: Array1<f64>,
}

#[derive(Debug, Clone)]
struct EdgeTape {
    hs: Array2<f64>,
    pre: Array2<f64>,
}

#[derive(Debug, Clone)]
struct NormTape {
    mean: Array1<f64>,
    centered: Array2<f64>,
    std: Array1<f64>,
    normalized: Array2<f64>,
    y: Array2<f64>,
}

fn check_finite(a: &Array2<f64>, layer: usize, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TrdError::Numeric {
            layer,
            what: what.to_string(),
        })
    }
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of LeakyReLU(raw) over off-diagonal entries.
fn attention_softmax(raw: &Array2<f64>, slope: f64) -> Array2<f64> {
    let n = raw.nrows();
    let mut alpha = Array2::zeros((n, n));
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                max = max.max(leaky_relu(raw[[i, j]], slope));
            }
        }
        let mut total = 0.0;
        for j in 0..n {
            if j != i {
                let e = (leaky_relu(raw[[i, j]], slope) - max).exp();
                alpha[[i, j]] = e;
                total += e;
            }
        }
        if total > 0.0 {
            for j in 0..n {
                alpha[[i, j]] /= total;
            }
        }
    }
    alpha
}

fn pair_sums(h: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut hs = Array2::zeros((num_pairs(n), h.ncols()));
    for (p, (i, j)) in pairs(n).enumerate() {
        let mut row = hs.row_mut(p);
        row.assign(&h.row(i));
        row += &h.row(j);
    }
    hs
}

fn symmetric_u(u: &Array2<f64>, d: usize) -> Array2<f64> {
    (&u.slice(s![..d, ..]) + &u.slice(s![d..2 * d, ..])) * 0.5
}

fn add_outer(target: &mut Array2<f64>, col: &Array1<f64>, row: &ArrayView1<f64>) {
    for (i, mut r) in target.axis_iter_mut(Axis(0)).enumerate() {
        r.scaled_add(col[i], row);
    }
}

fn graph_norm_forward(x: &Array2<f64>, p: &GraphNormParams) -> NormTape {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let centered = x - &(&mean * &p.mean_scale);
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let std = var.mapv(|v| (v + NORM_EPS).sqrt());
    let normalized = &centered / &std;
    let y = &normalized * &p.scale + &p.shift;
    NormTape {
        mean,
        centered,
        std,
        normalized,
        y,
    }
}

fn graph_norm_backward(
    dy: &Array2<f64>,
    t: &NormTape,
    p: &GraphNormParams,
    g: &mut GraphNormParams,
) -> Array2<f64> {
    let n = dy.nrows() as f64;
    g.scale += &(dy * &t.normalized).sum_axis(Axis(0));
    g.shift += &dy.sum_axis(Axis(0));
    let dxn = dy * &p.scale;
    // d var through std = sqrt(var + eps)
    let dvar = (&dxn * &t.centered).sum_axis(Axis(0)) * t.std.mapv(|s| -0.5 / (s * s * s));
    let dcentered = &dxn / &t.std + &(&t.centered * &(dvar * (2.0 / n)));
    let dc_sum = dcentered.sum_axis(Axis(0));
    g.mean_scale -= &(&dc_sum * &t.mean);
    let dmean = -(&dc_sum * &p.mean_scale);
    dcentered + &(dmean / n)
}

/// Mean L2 distance over all unordered pairs of rows.
pub fn distinguishability(embeddings: &Array2<f64>) -> Result<f64> {
    let m = embeddings.nrows();
    if m < 2 {
        return Err(domain("distinguishability needs at least two embeddings"));
    }
    let mut total = 0.0;
    for (i, j) in pairs(m) {
        let diff = &embeddings.row(i) - &embeddings.row(j);
        total += diff.dot(&diff).sqrt();
    }
    Ok(total / num_pairs(m) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complementarity::{build, ComplementarityConfig};
    use crate::graph::{pair_index, tests::random_graph};
    use crate::testutil::finite_difference_check;

    fn small_config(layers: usize, edge_update: bool) -> EncoderConfig {
        EncoderConfig {
            num_layers: layers,
            heads: 2,
            hidden_dim: 6,
            leaky_slope: 0.2,
            edge_update,
        }
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig {
            hidden_dim: 7,
            ..small_config(2, false)
        }
        .validate()
        .is_err());
        assert!(EncoderConfig {
            num_layers: 0,
            ..small_config(2, false)
        }
        .validate()
        .is_err());
        assert!(small_config(3, true).validate().is_ok());
    }

    #[test]
    fn zero_attention_gives_uniform_coefficients() {
        let cfg = EncoderConfig {
            num_layers: 1,
            heads: 1,
            hidden_dim: 4,
            leaky_slope: 0.2,
            edge_update: false,
        };
        let mut p = GatParams::init(cfg, 4, 1).unwrap();
        let head = &mut p.weights.layers[0].heads[0];
        head.w = Array2::eye(4);
        head.attn.fill(0.0);
        let g = random_graph(5, 4, 2);
        let (_, tape) = p.forward(&g).unwrap();
        let alpha = tape.attention(0, 0);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 0.0 } else { 0.25 };
                assert_eq!(alpha[[i, j]], expect);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = EncoderConfig {
            num_layers: 3,
            heads: 2,
            hidden_dim: 8,
            leaky_slope: 0.2,
            edge_update: true,
        };
        let p = GatParams::init(cfg, 8, 5).unwrap();
        let g = random_graph(5, 8, 11);
        let (_, tape) = p.forward(&g).unwrap();
        for l in 0..3 {
            for h in 0..2 {
                let alpha = tape.attention(l, h);
                for i in 0..5 {
                    let direct: f64 = (0..5).map(|j| alpha[[i, j]]).sum();
                    assert!((direct - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    fn swap_locals(g: &ViewGraph, a: usize, b: usize) -> ViewGraph {
        let n = g.num_views();
        let perm = |i: usize| {
            if i == a {
                b
            } else if i == b {
                a
            } else {
                i
            }
        };
        let mut nf = g.node_features().clone();
        for i in 0..n {
            nf.row_mut(i).assign(&g.node(perm(i)));
        }
        let mut ef = g.edge_features().clone();
        for (row, (i, j)) in pairs(n).enumerate() {
            ef.row_mut(row)
                .assign(&g.edge_features().row(pair_index(n, perm(i), perm(j))));
        }
        ViewGraph::new(nf, ef, g.label()).unwrap()
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = EncoderConfig {
            num_layers: 2,
            heads: 2,
            hidden_dim: 8,
            leaky_slope: 0.2,
            edge_update: true,
        };
        let p = GatParams::init(cfg, 6, 3).unwrap();
        let g = random_graph(6, 6, 4);
        let (out, _) = p.forward(&g).unwrap();
        let (out_perm, _) = p.forward(&swap_locals(&g, 1, 2)).unwrap();
        let expected = swap_locals(&out, 1, 2);
        for (a, b) in out_perm.node_features().iter().zip(expected.node_features()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in out_perm.edge_features().iter().zip(expected.edge_features()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let p = GatParams::init(small_config(2, false), 3, 0).unwrap();
        let mut nf = Array2::zeros((3, 3));
        nf[[1, 1]] = f64::NAN;
        let g = ViewGraph::new(nf, Array2::ones((3, 3)), None).unwrap();
        assert!(matches!(p.forward(&g), Err(TrdError::Numeric { layer: 0, .. })));
        let g = random_graph(3, 4, 0);
        assert!(matches!(p.forward(&g), Err(TrdError::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut p = GatParams::init(small_config(2, true), 4, 9).unwrap();
        let g = random_graph(4, 4, 9);
        let (out, tape) = p.forward(&g).unwrap();
        p.backward(
            &tape,
            &Array2::zeros(out.node_features().dim()),
            &Array2::zeros(out.edge_features().dim()),
        )
        .unwrap();
        assert!(p.grads.tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
    }

    /// With zero attention vectors and full mean subtraction, the per-column
    /// sum of the normalized output is identically zero, so the sum of all node
    /// outputs equals `N · shift`. Its gradient is therefore exactly `N` on the
    /// shift and zero everywhere else in the attention path.
    #[test]
    fn sum_of_outputs_closed_form() {
        let cfg = EncoderConfig {
            num_layers: 1,
            heads: 1,
            hidden_dim: 3,
            leaky_slope: 0.2,
            edge_update: false,
        };
        let mut p = GatParams::init(cfg, 3, 2).unwrap();
        p.weights.layers[0].heads[0].attn.fill(0.0);
        let g = random_graph(5, 3, 6);
        let (out, tape) = p.forward(&g).unwrap();
        p.backward(
            &tape,
            &Array2::ones(out.node_features().dim()),
            &Array2::zeros(out.edge_features().dim()),
        )
        .unwrap();
        let layer = &p.grads.layers[0];
        assert!(layer.norm.shift.iter().all(|&x| x == 5.0));
        for x in layer.heads[0].w.iter().chain(layer.heads[0].attn.iter()) {
            assert!(x.abs() < 1e-10, "{x}");
        }
        for x in layer.norm.scale.iter() {
            assert!(x.abs() < 1e-10);
        }
    }

    fn weighted_output_loss(p: &GatParams, g: &ViewGraph, wn: &Array2<f64>, we: &Array2<f64>) -> f64 {
        let (out, _) = p.forward(g).unwrap();
        (out.node_features() * wn).sum() + (out.edge_features() * we).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (layers, edge_update, seed) in [(1, false, 1), (2, false, 2), (3, true, 3)] {
            let mut p = GatParams::init(small_config(layers, edge_update), 5, seed).unwrap();
            // move GraphNorm away from its identity init so every path is exercised
            for layer in &mut p.weights.layers {
                layer.norm.scale.mapv_inplace(|v| v * 1.3);
                layer.norm.shift.fill(0.1);
                layer.norm.mean_scale.fill(0.7);
            }
            let g = {
                let base = random_graph(5, 5, seed + 10);
                build(base.node_features(), 0, None, &ComplementarityConfig {
                    weight_cap: 5.0,
                    ..Default::default()
                })
                .unwrap()
            };
            let (out, tape) = p.forward(&g).unwrap();
            let wn = random_graph(5, 6, seed + 20).node_features().clone();
            let we = random_graph(5, 6, seed + 30).edge_features().clone();
            p.zero_grad();
            p.backward(&tape, &wn, &we).unwrap();
            assert_eq!(out.node_features().dim(), wn.dim());
            let analytic = p.grads.clone();
            let mut probe = p.clone();
            finite_difference_check(
                &mut probe.weights,
                &analytic,
                |w| {
                    let mut q = p.clone();
                    q.weights = w.clone();
                    weighted_output_loss(&q, &g, &wn, &we)
                },
                1e-5,
                1e-4,
                seed,
            );
        }
    }

    #[test]
    fn tape_mismatch_is_rejected() {
        let p1 = GatParams::init(small_config(2, false), 4, 0).unwrap();
        let mut p2 = GatParams::init(small_config(3, false), 4, 0).unwrap();
        let g = random_graph(4, 4, 0);
        let (out, tape) = p1.forward(&g).unwrap();
        let dn = Array2::zeros(out.node_features().dim());
        let de = Array2::zeros(out.edge_features().dim());
        assert!(matches!(p2.backward(&tape, &dn, &de), Err(TrdError::Contract(_))));
    }

    #[test]
    fn distinguishability_examples() {
        assert_eq!(distinguishability(&Array2::ones((4, 3))).unwrap(), 0.0);
        let two = ndarray::array![[0.0, 0.0], [0.0, 2.0]];
        assert_eq!(distinguishability(&two).unwrap(), 2.0);
        assert!(distinguishability(&Array2::ones((1, 3))).is_err());
    }

    #[test]
    fn parameter_visit_order_is_stable() {
        let p = GatParams::init(small_config(2, true), 4, 0).unwrap();
        let names: Vec<String> = p.weights.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "layer0.head0.w");
        assert!(names.contains(&"layer1.edge.u".to_string()));
        assert_eq!(
            names,
            p.grads.tensors().into_iter().map(|(n, _)| n).collect::<Vec<_>>()
        );
    }
}
