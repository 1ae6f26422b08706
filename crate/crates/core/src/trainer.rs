//! End-to-end training and evaluation: complementarity graphs, the encoder,
//! distances to class proxies, the proxy-anchor objective, Adam, and online
//! proxy updates. Also the noise and depth sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::complementarity::{build_dataset, ComplementarityConfig};
use crate::encoder::{distinguishability, EncoderConfig, GatParams, GatWeights, Tape};
use crate::error::{contract, Result, TrdError};
use crate::graph::ViewGraph;
use crate::hed::{hed, hed_backward_into, CostHeadWeights, HedResult};
use crate::params::{Adam, Parameters};
use crate::proxy::{
    argmin_class, proxy_anchor_loss, update_proxies, ProxyAnchorConfig, ProxyGraph,
    SinkhornConfig,
};
use crate::synth::{generate, NoiseModel, SynthConfig, SynthDataset};

/// Component switches. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablations {
    /// Complementarity-weighted input edges (CG). Off: all-ones edges.
    pub complementarity_graph: bool,
    /// Proxies as graphs (PD). Off: one mean vector per class, Euclidean distance.
    pub proxy_as_graph: bool,
    /// Edit-distance matching (TR). Off: Euclidean distance between the
    /// mean-pooled instance nodes and the mean of the proxy node centroids.
    pub transitivity_recovery: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            complementarity_graph: true,
            proxy_as_graph: true,
            transitivity_recovery: true,
        }
    }
}

/// How instances are compared with class proxies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    EditDistance,
    /// PD off.
    ProxyVector,
    /// TR off.
    AbstractMean,
}

impl Ablations {
    pub fn matching(&self) -> Matching {
        if !self.proxy_as_graph {
            Matching::ProxyVector
        } else if !self.transitivity_recovery {
            Matching::AbstractMean
        } else {
            Matching::EditDistance
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub complementarity: ComplementarityConfig,
    pub sinkhorn: SinkhornConfig,
    pub anchor: ProxyAnchorConfig,
    /// Hidden width of the cost head ψ.
    pub cost_head_width: usize,
    /// Value of ψ at initialization (set through the output bias).
    pub cost_init: f64,
    /// EMA momentum of the proxy updates.
    pub proxy_momentum: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            complementarity: ComplementarityConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            anchor: ProxyAnchorConfig::default(),
            cost_head_width: 16,
            cost_init: 8.0,
            proxy_momentum: 0.9,
            epochs: 200,
            learning_rate: 0.005,
            lr_decay: 0.1,
            lr_decay_every: 100,
            weight_decay: 5e-4,
            batch_size: 8,
            train_fraction: 0.8,
            seed: 0,
            ablations: Ablations::default(),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> TrdError {
    TrdError::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.epochs == 0 {
            return Err(bad("train.epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("train.lr", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(bad("train.lr_decay", "must lie in (0, 1]"));
        }
        if self.lr_decay_every == 0 {
            return Err(bad("train.lr_decay_every", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("train.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(bad("train.batch", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(bad("train.train_fraction", "must lie in (0, 1]"));
        }
        if self.cost_head_width == 0 {
            return Err(bad("hed.cost_width", "must be at least 1"));
        }
        if !(self.cost_init > 0.0 && self.cost_init.is_finite()) {
            return Err(bad("hed.cost_init", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.proxy_momentum) {
            return Err(bad("proxy.momentum", "must lie in [0, 1]"));
        }
        if !(self.anchor.scale > 0.0 && self.anchor.scale.is_finite()) {
            return Err(bad("proxy.scale", "must be positive"));
        }
        if !self.anchor.margin.is_finite() {
            return Err(bad("proxy.margin", "must be finite"));
        }
        if !(self.sinkhorn.epsilon > 0.0) {
            return Err(bad("sinkhorn.epsilon", "must be positive"));
        }
        if !(self.sinkhorn.marginal_tol > 0.0) {
            return Err(bad("sinkhorn.tol", "must be positive"));
        }
        if self.sinkhorn.max_iters == 0 {
            return Err(bad("sinkhorn.max_iters", "must be at least 1"));
        }
        if !(self.complementarity.weight_cap > 0.0) {
            return Err(bad("complementarity.weight_cap", "must be positive"));
        }
        Ok(())
    }

    /// `lr · decay^⌊epoch / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Complementarity settings with the CG switch applied.
    pub fn graph_config(&self) -> ComplementarityConfig {
        ComplementarityConfig {
            use_complementarity: self.ablations.complementarity_graph,
            ..self.complementarity
        }
    }
}

/// A trained (or freshly initialized) model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub encoder: GatParams,
    pub cost_head: CostHeadWeights,
    /// One per class, ordered by class id.
    pub proxies: Vec<ProxyGraph>,
}

/// Everything a backward pass needs from one instance's forward pass.
struct Pass {
    relevance: ViewGraph,
    tape: Tape,
    distances: Vec<f64>,
    hed: Vec<HedResult>,
}

fn mean_rows(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("graphs have at least one node")
}

impl Model {
    pub fn init(config: TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let encoder = GatParams::init(config.encoder, input_dim, config.seed)?;
        let mut cost_head = CostHeadWeights::init(
            encoder.output_dim(),
            config.cost_head_width,
            config.seed.wrapping_add(0x9e37_79b9),
        );
        // inverse softplus
        cost_head.b2[0] = config.cost_init + (-(-config.cost_init).exp_m1()).ln();
        Ok(Self {
            config,
            encoder,
            cost_head,
            proxies: Vec::new(),
        })
    }

    pub fn matching(&self) -> Matching {
        self.config.ablations.matching()
    }

    pub fn num_classes(&self) -> usize {
        self.proxies.len()
    }

    /// Semantic relevance graph of a complementarity graph.
    pub fn relevance_graph(&self, g: &ViewGraph) -> Result<ViewGraph> {
        let (mut out, _) = self.encoder.forward(g)?;
        out.set_label(g.label());
        Ok(out)
    }

    fn distance_to(&self, relevance: &ViewGraph, proxy: &ProxyGraph) -> Result<(f64, Option<HedResult>)> {
        match self.matching() {
            Matching::EditDistance => {
                let r = hed(relevance.node_features().view(), proxy.nodes(), &self.cost_head)?;
                Ok((r.value, Some(r)))
            }
            Matching::ProxyVector | Matching::AbstractMean => {
                let a = mean_rows(relevance.node_features());
                let b = mean_rows(&proxy.node_centroids);
                let diff = a - b;
                Ok((diff.dot(&diff).sqrt(), None))
            }
        }
    }

    /// Distance from a relevance graph to every class proxy.
    pub fn distances(&self, relevance: &ViewGraph) -> Result<Vec<f64>> {
        self.proxies
            .iter()
            .map(|p| Ok(self.distance_to(relevance, p)?.0))
            .collect()
    }

    /// Predicted class of a complementarity graph.
    pub fn predict(&self, g: &ViewGraph) -> Result<usize> {
        if self.proxies.is_empty() {
            return Err(contract("model has no proxies yet"));
        }
        let d = self.distances(&self.relevance_graph(g)?)?;
        let pairs: Vec<(usize, f64)> = self.proxies.iter().map(|p| p.class_id).zip(d).collect();
        Ok(argmin_class(&pairs).expect("non-empty"))
    }

    fn pass(&self, g: &ViewGraph) -> Result<Pass> {
        let (mut relevance, tape) = self.encoder.forward(g)?;
        relevance.set_label(g.label());
        let mut distances = Vec::with_capacity(self.proxies.len());
        let mut results = Vec::new();
        for p in &self.proxies {
            let (d, r) = self.distance_to(&relevance, p)?;
            distances.push(d);
            results.extend(r);
        }
        Ok(Pass {
            relevance,
            tape,
            distances,
            hed: results,
        })
    }

    /// Parameter gradients of `Σ_c upstream[c] · distance_c` for one instance.
    fn backward(&self, pass: &Pass, upstream: &[f64]) -> Result<(GatWeights, CostHeadWeights)> {
        let nodes = pass.relevance.node_features();
        let mut d_nodes = Array2::zeros(nodes.dim());
        let mut d_cost = self.cost_head.zeros_like();
        match self.matching() {
            Matching::EditDistance => {
                for ((p, r), &u) in self.proxies.iter().zip(&pass.hed).zip(upstream) {
                    if u == 0.0 {
                        continue;
                    }
                    let (d_gs, _) = hed_backward_into(
                        r,
                        nodes.view(),
                        p.nodes(),
                        &self.cost_head,
                        u,
                        &mut d_cost,
                    )?;
                    d_nodes += &d_gs;
                }
            }
            Matching::ProxyVector | Matching::AbstractMean => {
                let a = mean_rows(nodes);
                let n = nodes.nrows() as f64;
                for ((p, &d), &u) in self.proxies.iter().zip(&pass.distances).zip(upstream) {
                    if u == 0.0 || d == 0.0 {
                        continue;
                    }
                    let diff = &a - &mean_rows(&p.node_centroids);
                    let row = diff * (u / (d * n));
                    for mut r in d_nodes.rows_mut() {
                        r += &row;
                    }
                }
            }
        }
        let d_edges = Array2::zeros(pass.relevance.edge_features().dim());
        let mut grads = self.encoder.weights.zeros_like();
        self.encoder
            .backward_into(&pass.tape, &d_nodes, &d_edges, &mut grads)?;
        Ok((grads, d_cost))
    }

    /// Proxy after clustering a batch of relevance graphs of its class.
    fn updated_proxy(&self, proxy: &ProxyGraph, batch: &[&ViewGraph], momentum: f64) -> Result<ProxyGraph> {
        match self.matching() {
            Matching::ProxyVector => {
                let d = proxy.node_centroids.ncols();
                let mut mean = Array1::zeros(d);
                for g in batch {
                    mean += &mean_rows(g.node_features());
                }
                mean /= batch.len() as f64;
                let blended = &proxy.node_centroids.row(0) * momentum + mean * (1.0 - momentum);
                ProxyGraph::new(
                    proxy.class_id,
                    blended.insert_axis(Axis(0)),
                    Array2::zeros((0, d)),
                )
            }
            _ => update_proxies(proxy, batch, &self.config.sinkhorn, momentum),
        }
    }

    /// Starts a class proxy from one batch: the first graph seeds the slots,
    /// then one full-weight clustering step over the batch.
    fn initial_proxy(&self, class: usize, batch: &[&ViewGraph]) -> Result<ProxyGraph> {
        let seed = match self.matching() {
            Matching::ProxyVector => {
                let d = batch[0].feature_dim();
                ProxyGraph::new(
                    class,
                    mean_rows(batch[0].node_features()).insert_axis(Axis(0)),
                    Array2::zeros((0, d)),
                )?
            }
            _ => ProxyGraph::from_instance(class, batch[0])?,
        };
        self.updated_proxy(&seed, batch, 0.0)
    }
}

/// Per-run record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// `epoch,loss` rows followed by the two accuracies. Wall-clock time is
    /// left out so that reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            let _ = writeln!(s, "{e},{l:.9e}");
        }
        let _ = writeln!(s, "train_accuracy,{:.6}", self.train_accuracy);
        let _ = writeln!(s, "test_accuracy,{:.6}", self.test_accuracy);
        s
    }
}

fn sum_grads(parts: Vec<(GatWeights, CostHeadWeights)>) -> Option<(GatWeights, CostHeadWeights)> {
    let mut iter = parts.into_iter();
    let (mut enc, mut cost) = iter.next()?;
    for (e, c) in iter {
        enc.accumulate(&e);
        cost.accumulate(&c);
    }
    Some((enc, cost))
}

/// Trains on the dataset's train split and reports accuracies on both splits.
/// Instance work inside a batch fans out over the current rayon pool; results
/// are reduced in batch order, so the run is identical for any pool size.
pub fn train(ds: &SynthDataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    ds.config.validate()?;
    let classes = ds.config.num_classes;
    if classes < 2 {
        return Err(bad("synth.classes", "training needs at least two classes"));
    }
    let start = Instant::now();
    let graphs = build_dataset(ds, &cfg.graph_config())?;
    let (train_idx, test_idx) = ds.split(cfg.train_fraction);
    let mut model = Model::init(cfg.clone(), ds.config.feature_dim)?;

    // proxies from the first batch of each class, in dataset order
    for c in 0..classes {
        let members: Vec<usize> = train_idx
            .iter()
            .copied()
            .filter(|&i| ds.instances[i].label == c)
            .take(cfg.batch_size)
            .collect();
        if members.is_empty() {
            return Err(contract(format!("class {c} has no training instances")));
        }
        let relevance: Vec<ViewGraph> = members
            .par_iter()
            .map(|&i| model.relevance_graph(&graphs[i]))
            .collect::<Result<_>>()?;
        let refs: Vec<&ViewGraph> = relevance.iter().collect();
        let proxy = model.initial_proxy(c, &refs)?;
        model.proxies.push(proxy);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(cfg.weight_decay);
    // The objective never reaches the final edge map, so weight decay alone
    // would flatten every output edge to the same value.
    let last = cfg.encoder.num_layers - 1;
    opt.frozen.insert(format!("layer{last}.edge.u"));
    opt.frozen.insert(format!("layer{last}.edge.bias"));
    let mut order = train_idx.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let passes: Vec<Pass> = batch
                .par_iter()
                .map(|&i| model.pass(&graphs[i]))
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| ds.instances[i].label).collect();
            let mut dist = Array2::zeros((batch.len(), classes));
            for (x, p) in passes.iter().enumerate() {
                for (c, &d) in p.distances.iter().enumerate() {
                    dist[[x, c]] = d;
                }
            }
            let (loss, d_dist) = match proxy_anchor_loss(&dist, &labels, &cfg.anchor) {
                Ok(v) => v,
                Err(TrdError::Numeric { .. }) => return Err(TrdError::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            let parts: Vec<(GatWeights, CostHeadWeights)> = passes
                .par_iter()
                .enumerate()
                .map(|(x, p)| model.backward(p, d_dist.row(x).as_slice().expect("standard layout")))
                .collect::<Result<_>>()?;
            let (enc_grad, cost_grad) = sum_grads(parts).expect("batches are non-empty");
            if !enc_grad.all_finite() || !cost_grad.all_finite() {
                return Err(TrdError::Diverged { epoch });
            }
            if model.matching() == Matching::EditDistance {
                let mut params: [&mut dyn Parameters; 2] =
                    [&mut model.encoder.weights, &mut model.cost_head];
                let grads: [&dyn Parameters; 2] = [&enc_grad, &cost_grad];
                opt.step_many(&mut params, &grads, lr)?;
            } else {
                opt.step(&mut model.encoder.weights, &enc_grad, lr)?;
            }

            for c in 0..classes {
                let members: Vec<&ViewGraph> = passes
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &y)| y == c)
                    .map(|(p, _)| &p.relevance)
                    .collect();
                if !members.is_empty() {
                    model.proxies[c] =
                        model.updated_proxy(&model.proxies[c], &members, cfg.proxy_momentum)?;
                }
            }
            loss_sum += loss;
            batches += 1;
        }
        let mean = loss_sum / batches as f64;
        if !mean.is_finite() {
            return Err(TrdError::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }

    let train_accuracy = accuracy(&model, &train_idx.iter().map(|&i| &graphs[i]).collect::<Vec<_>>())?;
    let test_accuracy = if test_idx.is_empty() {
        train_accuracy
    } else {
        accuracy(&model, &test_idx.iter().map(|&i| &graphs[i]).collect::<Vec<_>>())?
    };
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            test_accuracy,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Fraction of labelled complementarity graphs the model classifies correctly.
pub fn accuracy(model: &Model, graphs: &[&ViewGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(contract("accuracy of an empty set"));
    }
    let hits: Vec<bool> = graphs
        .par_iter()
        .map(|g| {
            let label = g.label().ok_or_else(|| contract("evaluation graphs need labels"))?;
            Ok(model.predict(g)? == label)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Test-split complementarity graphs of a dataset under the model's settings.
pub fn test_graphs(model: &Model, ds: &SynthDataset) -> Result<Vec<ViewGraph>> {
    let graphs = build_dataset(ds, &model.config.graph_config())?;
    let (_, test) = ds.split(model.config.train_fraction);
    let mut keep = vec![false; graphs.len()];
    for i in test {
        keep[i] = true;
    }
    Ok(graphs
        .into_iter()
        .zip(keep)
        .filter_map(|(g, k)| k.then_some(g))
        .collect())
}

/// Test-split accuracy of a model on a dataset.
pub fn evaluate(model: &Model, ds: &SynthDataset) -> Result<f64> {
    let graphs = test_graphs(model, ds)?;
    accuracy(model, &graphs.iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub eta: f64,
    pub model: NoiseModel,
    pub tr_on_accuracy: f64,
    pub tr_off_accuracy: f64,
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("eta,noise_model,tr_on_accuracy,tr_off_accuracy\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.6},{},{:.6},{:.6}",
            r.eta, r.model, r.tr_on_accuracy, r.tr_off_accuracy
        );
    }
    s
}

/// Trains the full model and the TR-off baseline for every (η, noise model).
pub fn sweep_noise(
    synth: &SynthConfig,
    base: &TrainConfig,
    etas: &[f64],
    models: &[NoiseModel],
) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::with_capacity(etas.len() * models.len());
    for &eta in etas {
        for &noise_model in models {
            let ds = generate(&SynthConfig {
                noise_rate: eta,
                noise_model,
                ..synth.clone()
            })?;
            let on = train(&ds, base)?.1.test_accuracy;
            let off_cfg = TrainConfig {
                ablations: Ablations {
                    transitivity_recovery: false,
                    ..base.ablations
                },
                ..base.clone()
            };
            let off = train(&ds, &off_cfg)?.1.test_accuracy;
            rows.push(NoiseRow {
                eta,
                model: noise_model,
                tr_on_accuracy: on,
                tr_off_accuracy: off,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRow {
    pub depth: usize,
    pub accuracy: f64,
    pub distinguishability: f64,
}

pub fn depth_csv(rows: &[DepthRow]) -> String {
    let mut s = String::from("depth,accuracy,distinguishability\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.depth, r.accuracy, r.distinguishability);
    }
    s
}

/// Mean distinguishability of the final node embeddings over a set of graphs.
pub fn mean_distinguishability(model: &Model, graphs: &[ViewGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(contract("distinguishability of an empty set"));
    }
    let values: Vec<f64> = graphs
        .par_iter()
        .map(|g| distinguishability(model.relevance_graph(g)?.node_features()))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains one model per encoder depth on the same dataset.
pub fn sweep_depth(ds: &SynthDataset, base: &TrainConfig, depths: &[usize]) -> Result<Vec<DepthRow>> {
    depths
        .iter()
        .map(|&depth| {
            let cfg = TrainConfig {
                encoder: EncoderConfig {
                    num_layers: depth,
                    ..base.encoder
                },
                ..base.clone()
            };
            let (model, report) = train(ds, &cfg)?;
            let graphs = test_graphs(&model, ds)?;
            Ok(DepthRow {
                depth,
                accuracy: report.test_accuracy,
                distinguishability: mean_distinguishability(&model, &graphs)?,
            })
        })
        .collect()
}
