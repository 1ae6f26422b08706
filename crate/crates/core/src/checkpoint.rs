//! Text checkpoints of a trained model.
//!
//! ```text
//! trd-checkpoint v1
//! input_dim 32
//! config encoder.layers=2
//! ...                                  (every training key, canonical order)
//! tensor layer0.head0.w 256
//! <256 values>
//! ...                                  (encoder tensors, then cost.*)
//! proxy <class> <slots> <edge_rows> <dim>
//! <slots·dim node values>
//! <edge_rows·dim edge values>
//! ```
//!
//! Values are written with 17 significant digits and read back bit for bit.
//! Tensor order is the [`Parameters`] visit order.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;

use crate::config::{set_train_key, train_entries};
use crate::error::{Result, TrdError};
use crate::params::Parameters;
use crate::proxy::ProxyGraph;
use crate::trainer::{Model, TrainConfig};

const MAGIC: &str = "trd-checkpoint v1";

fn write_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

/// Serializes a model to the checkpoint text.
pub fn to_text(model: &Model) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "input_dim {}", model.encoder.input_dim);
    for (k, v) in train_entries(&model.config) {
        let _ = writeln!(s, "config {k}={v}");
    }
    let encoder = model.encoder.weights.tensors();
    let cost = model.cost_head.tensors();
    for (name, t) in encoder.into_iter().chain(cost) {
        let _ = writeln!(s, "tensor {name} {}", t.len());
        write_values(&mut s, t);
    }
    for p in &model.proxies {
        let _ = writeln!(
            s,
            "proxy {} {} {} {}",
            p.class_id,
            p.num_slots(),
            p.edge_centroids.nrows(),
            p.node_centroids.ncols()
        );
        write_values(&mut s, p.node_centroids.as_slice().expect("standard layout"));
        write_values(&mut s, p.edge_centroids.as_slice().expect("standard layout"));
    }
    s
}

pub fn save<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(to_text(model).as_bytes())?;
    Ok(())
}

pub fn save_path(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

struct Lines<I> {
    inner: I,
    line: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Lines<I> {
    fn next(&mut self) -> Result<Option<String>> {
        self.line += 1;
        Ok(self.inner.next().transpose()?)
    }

    fn expect(&mut self, what: &str) -> Result<String> {
        self.next()?.ok_or_else(|| self.err(format!("unexpected end of file, wanted {what}")))
    }

    fn err(&self, msg: impl Into<String>) -> TrdError {
        TrdError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn values(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.expect("values")?;
        let values = line
            .split_ascii_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| self.err("bad value"))?;
        if values.len() != len {
            return Err(self.err(format!("expected {len} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(values)
    }
}

pub fn load<R: BufRead>(r: R) -> Result<Model> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    if lines.expect("header")? != MAGIC {
        return Err(lines.err("not a checkpoint file"));
    }
    let dim_line = lines.expect("input_dim")?;
    let input_dim: usize = dim_line
        .strip_prefix("input_dim ")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| lines.err("expected `input_dim <n>`"))?;

    let mut config = TrainConfig::default();
    let mut pending = lines.next()?;
    while let Some(line) = pending.as_deref() {
        let Some(kv) = line.strip_prefix("config ") else {
            break;
        };
        let (k, v) = kv.split_once('=').ok_or_else(|| lines.err("expected `config key=value`"))?;
        if !set_train_key(&mut config, k, v)? {
            return Err(TrdError::Config {
                key: k.into(),
                msg: "unknown key".into(),
            });
        }
        pending = lines.next()?;
    }
    let mut model = Model::init(config, input_dim)?;

    let mut expected: Vec<(String, usize)> = model
        .encoder
        .weights
        .tensors()
        .into_iter()
        .chain(model.cost_head.tensors())
        .map(|(n, t)| (n, t.len()))
        .collect();
    expected.reverse();
    let mut values: Vec<Vec<f64>> = Vec::new();
    while let Some((name, len)) = expected.pop() {
        let line = pending.take().ok_or_else(|| lines.err(format!("missing tensor {name}")))?;
        if line != format!("tensor {name} {len}") {
            return Err(lines.err(format!("expected `tensor {name} {len}`, got `{line}`")));
        }
        values.push(lines.values(len)?);
        pending = lines.next()?;
    }
    let mut values = values.into_iter();
    for (_, t) in model.encoder.weights.tensors_mut() {
        t.copy_from_slice(&values.next().expect("counted above"));
    }
    for (_, t) in model.cost_head.tensors_mut() {
        t.copy_from_slice(&values.next().expect("counted above"));
    }

    while let Some(line) = pending.take() {
        if line.trim().is_empty() {
            pending = lines.next()?;
            continue;
        }
        let fields: Vec<usize> = line
            .strip_prefix("proxy ")
            .map(|rest| rest.split_ascii_whitespace().filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        let [class, slots, edges, dim] = fields[..] else {
            return Err(lines.err(format!("expected `proxy <class> <slots> <edges> <dim>`, got `{line}`")));
        };
        let nodes = Array2::from_shape_vec((slots, dim), lines.values(slots * dim)?)
            .map_err(|_| lines.err("bad proxy shape"))?;
        let edge_values = Array2::from_shape_vec((edges, dim), lines.values(edges * dim)?)
            .map_err(|_| lines.err("bad proxy shape"))?;
        model.proxies.push(ProxyGraph::new(class, nodes, edge_values)?);
        pending = lines.next()?;
    }
    Ok(model)
}

pub fn load_path(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    load(std::io::BufReader::new(file))
}
