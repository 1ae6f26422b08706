//! Flat `key = value` run configuration with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! synth.eta = 0.25
//! synth.model = causal-intervention
//! encoder.layers = 2
//! train.epochs = 200
//! transitivity.gamma = quantile:0.75
//! ```
//!
//! Unknown keys are rejected. Floats are written in shortest round-trip form,
//! so `parse(to_text(c)) == c`.

use std::path::Path;

use crate::error::{Result, TrdError};
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;
use crate::transitivity::{Gamma, TransitivityConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub transitivity: TransitivityConfig,
}

fn value_err(key: &str, value: &str, what: &str) -> TrdError {
    TrdError::Config {
        key: key.into(),
        msg: format!("`{value}` is not {what}"),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| value_err(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| value_err(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(value_err(key, v, "a finite number")),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(value_err(key, v, "a boolean")),
    }
}

pub fn format_gamma(g: &Gamma) -> String {
    match g {
        Gamma::Absolute(x) => format!("{x}"),
        Gamma::Quantile(q) => format!("quantile:{q}"),
    }
}

pub fn parse_gamma(key: &str, v: &str) -> Result<Gamma> {
    let g = match v.strip_prefix("quantile:") {
        Some(q) => Gamma::Quantile(parse_f64(key, q)?),
        None => Gamma::Absolute(parse_f64(key, v)?),
    };
    g.validate().map_err(|e| TrdError::Config {
        key: key.into(),
        msg: e.to_string(),
    })?;
    Ok(g)
}

/// Training keys in canonical order with their current values.
pub fn train_entries(t: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("encoder.layers", t.encoder.num_layers.to_string()),
        ("encoder.heads", t.encoder.heads.to_string()),
        ("encoder.hidden", t.encoder.hidden_dim.to_string()),
        ("encoder.leaky_slope", t.encoder.leaky_slope.to_string()),
        ("encoder.edge_update", t.encoder.edge_update.to_string()),
        ("complementarity.weight_cap", t.complementarity.weight_cap.to_string()),
        ("complementarity.normalize", t.complementarity.normalize_embeddings.to_string()),
        ("hed.cost_width", t.cost_head_width.to_string()),
        ("hed.cost_init", t.cost_init.to_string()),
        ("sinkhorn.epsilon", t.sinkhorn.epsilon.to_string()),
        ("sinkhorn.max_iters", t.sinkhorn.max_iters.to_string()),
        ("sinkhorn.tol", t.sinkhorn.marginal_tol.to_string()),
        ("proxy.margin", t.anchor.margin.to_string()),
        ("proxy.scale", t.anchor.scale.to_string()),
        ("proxy.momentum", t.proxy_momentum.to_string()),
        ("train.epochs", t.epochs.to_string()),
        ("train.lr", t.learning_rate.to_string()),
        ("train.lr_decay", t.lr_decay.to_string()),
        ("train.lr_decay_every", t.lr_decay_every.to_string()),
        ("train.weight_decay", t.weight_decay.to_string()),
        ("train.batch", t.batch_size.to_string()),
        ("train.train_fraction", t.train_fraction.to_string()),
        ("train.seed", t.seed.to_string()),
        ("train.cg", t.ablations.complementarity_graph.to_string()),
        ("train.pd", t.ablations.proxy_as_graph.to_string()),
        ("train.tr", t.ablations.transitivity_recovery.to_string()),
    ]
}

/// Sets one training key. Returns `Ok(false)` when the key is not a training key.
pub fn set_train_key(t: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "encoder.layers" => t.encoder.num_layers = parse_usize(key, v)?,
        "encoder.heads" => t.encoder.heads = parse_usize(key, v)?,
        "encoder.hidden" => t.encoder.hidden_dim = parse_usize(key, v)?,
        "encoder.leaky_slope" => t.encoder.leaky_slope = parse_f64(key, v)?,
        "encoder.edge_update" => t.encoder.edge_update = parse_bool(key, v)?,
        "complementarity.weight_cap" => t.complementarity.weight_cap = parse_f64(key, v)?,
        "complementarity.normalize" => t.complementarity.normalize_embeddings = parse_bool(key, v)?,
        "hed.cost_width" => t.cost_head_width = parse_usize(key, v)?,
        "hed.cost_init" => t.cost_init = parse_f64(key, v)?,
        "sinkhorn.epsilon" => t.sinkhorn.epsilon = parse_f64(key, v)?,
        "sinkhorn.max_iters" => t.sinkhorn.max_iters = parse_usize(key, v)?,
        "sinkhorn.tol" => t.sinkhorn.marginal_tol = parse_f64(key, v)?,
        "proxy.margin" => t.anchor.margin = parse_f64(key, v)?,
        "proxy.scale" => t.anchor.scale = parse_f64(key, v)?,
        "proxy.momentum" => t.proxy_momentum = parse_f64(key, v)?,
        "train.epochs" => t.epochs = parse_usize(key, v)?,
        "train.lr" => t.learning_rate = parse_f64(key, v)?,
        "train.lr_decay" => t.lr_decay = parse_f64(key, v)?,
        "train.lr_decay_every" => t.lr_decay_every = parse_usize(key, v)?,
        "train.weight_decay" => t.weight_decay = parse_f64(key, v)?,
        "train.batch" => t.batch_size = parse_usize(key, v)?,
        "train.train_fraction" => t.train_fraction = parse_f64(key, v)?,
        "train.seed" => t.seed = parse_u64(key, v)?,
        "train.cg" => t.ablations.complementarity_graph = parse_bool(key, v)?,
        "train.pd" => t.ablations.proxy_as_graph = parse_bool(key, v)?,
        "train.tr" => t.ablations.transitivity_recovery = parse_bool(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(TrdError::Parse {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let mut out = vec![
            ("synth.classes", s.num_classes.to_string()),
            ("synth.instances_per_class", s.instances_per_class.to_string()),
            ("synth.views", s.views_per_instance.to_string()),
            ("synth.dim", s.feature_dim.to_string()),
            ("synth.eta", s.noise_rate.to_string()),
            ("synth.model", s.noise_model.name().to_string()),
            ("synth.concepts", s.concepts_per_class.to_string()),
            ("synth.sigma", s.noise_scale.to_string()),
            ("synth.seed", s.seed.to_string()),
        ];
        out.extend(train_entries(&self.train));
        out.push(("transitivity.gamma", format_gamma(&self.transitivity.gamma)));
        out
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "synth.classes" => s.num_classes = parse_usize(key, v)?,
            "synth.instances_per_class" => s.instances_per_class = parse_usize(key, v)?,
            "synth.views" => s.views_per_instance = parse_usize(key, v)?,
            "synth.dim" => s.feature_dim = parse_usize(key, v)?,
            "synth.eta" => s.noise_rate = parse_f64(key, v)?,
            "synth.model" => {
                s.noise_model = v.parse().map_err(|m: String| TrdError::Config {
                    key: key.into(),
                    msg: m,
                })?
            }
            "synth.concepts" => s.concepts_per_class = parse_usize(key, v)?,
            "synth.sigma" => s.noise_scale = parse_f64(key, v)?,
            "synth.seed" => s.seed = parse_u64(key, v)?,
            "transitivity.gamma" => self.transitivity.gamma = parse_gamma(key, v)?,
            _ => {
                if !set_train_key(&mut self.train, key, v)? {
                    return Err(TrdError::Config {
                        key: key.into(),
                        msg: "unknown key".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Parses and validates a configuration. Keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (_, k, v) in key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.transitivity.gamma.validate().map_err(|e| TrdError::Config {
            key: "transitivity.gamma".into(),
            msg: e.to_string(),
        })
    }

    /// Every key in canonical order.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Overrides both seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }
}
