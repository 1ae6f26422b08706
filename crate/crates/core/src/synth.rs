//! Synthetic view-embedding datasets with a known emergence structure.
//!
//! Each class owns a handful of unit "concept" vectors. A clean local view is a
//! perturbed copy of one of its class's concepts; the global view points along
//! the mean of the concepts behind the clean views. Noisy views are injected
//! under one of three protocols (see [`NoiseModel`]). Embeddings are quantized
//! to 9 significant digits at generation time so that the text format
//! round-trips exactly.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result, TrdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    /// Every local view is independently replaced by noise with probability η.
    UniformWholeImage,
    /// Exactly `round(η·k)` local views are replaced by noise.
    OutsideGlobalFraction,
    /// Exactly `round(η·k)` local views are replaced by clean views of another class.
    CausalIntervention,
}

impl NoiseModel {
    pub const ALL: [NoiseModel; 3] = [
        NoiseModel::UniformWholeImage,
        NoiseModel::OutsideGlobalFraction,
        NoiseModel::CausalIntervention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseModel::UniformWholeImage => "uniform-whole-image",
            NoiseModel::OutsideGlobalFraction => "outside-global-fraction",
            NoiseModel::CausalIntervention => "causal-intervention",
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform-whole-image" | "uniform" | "1" => Ok(NoiseModel::UniformWholeImage),
            "outside-global-fraction" | "outside-global" | "2" => {
                Ok(NoiseModel::OutsideGlobalFraction)
            }
            "causal-intervention" | "causal" | "3" => Ok(NoiseModel::CausalIntervention),
            other => Err(format!("unknown noise model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub instances_per_class: usize,
    /// Local views per instance (`k`).
    pub views_per_instance: usize,
    pub feature_dim: usize,
    /// Fraction of noisy local views (η).
    pub noise_rate: f64,
    pub noise_model: NoiseModel,
    pub concepts_per_class: usize,
    /// Norm scale of the isotropic perturbation added to every view (σ).
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            instances_per_class: 50,
            views_per_instance: 16,
            feature_dim: 32,
            noise_rate: 0.0,
            noise_model: NoiseModel::OutsideGlobalFraction,
            concepts_per_class: 4,
            noise_scale: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("synth.classes", self.num_classes),
            ("synth.instances_per_class", self.instances_per_class),
            ("synth.views", self.views_per_instance),
            ("synth.dim", self.feature_dim),
            ("synth.concepts", self.concepts_per_class),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(TrdError::Config {
                    key: key.into(),
                    msg: "must be at least 1".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(TrdError::Config {
                key: "synth.eta".into(),
                msg: format!("noise rate {} outside [0, 1]", self.noise_rate),
            });
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(TrdError::Config {
                key: "synth.sigma".into(),
                msg: "noise scale must be finite and non-negative".into(),
            });
        }
        if self.concepts_per_class > self.views_per_instance {
            return Err(TrdError::Config {
                key: "synth.concepts".into(),
                msg: "cannot exceed the number of local views".into(),
            });
        }
        if self.noise_model == NoiseModel::CausalIntervention
            && self.noise_rate > 0.0
            && self.num_classes < 2
        {
            return Err(TrdError::Config {
                key: "synth.classes".into(),
                msg: "causal intervention needs at least two classes".into(),
            });
        }
        Ok(())
    }

    fn noisy_count(&self) -> usize {
        (self.noise_rate * self.views_per_instance as f64).round() as usize
    }
}

/// One instance: row 0 of `embeddings` is the global view, rows `1..=k` the locals.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub embeddings: Array2<f64>,
    pub label: usize,
    /// Per local view; `true` means the view is clean.
    pub clean_mask: Vec<bool>,
    /// Per local view: the class the view was drawn from, `None` for pure noise.
    pub source_class: Vec<Option<usize>>,
}

impl SynthInstance {
    pub fn num_locals(&self) -> usize {
        self.clean_mask.len()
    }

    pub fn global(&self) -> ArrayView1<'_, f64> {
        self.embeddings.row(0)
    }

    /// Node indices (1-based local indices) of clean views.
    pub fn clean_nodes(&self) -> Vec<usize> {
        (0..self.num_locals())
            .filter(|&i| self.clean_mask[i])
            .map(|i| i + 1)
            .collect()
    }

    pub fn noisy_nodes(&self) -> Vec<usize> {
        (0..self.num_locals())
            .filter(|&i| !self.clean_mask[i])
            .map(|i| i + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub instances: Vec<SynthInstance>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Deterministic split: within each class the first `ceil(train_fraction · count)`
    /// instances train, the rest test. Returns instance indices.
    pub fn split(&self, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.config.num_classes {
            let idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.instances[i].label == c)
                .collect();
            let cut = ((train_fraction * idx.len() as f64).ceil() as usize).min(idx.len());
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        (train, test)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            w,
            "trd-dataset v1 classes={} per_class={} k={} n={} concepts={} eta={} model={} sigma={} seed={}",
            c.num_classes,
            c.instances_per_class,
            c.views_per_instance,
            c.feature_dim,
            c.concepts_per_class,
            c.noise_rate,
            c.noise_model,
            c.noise_scale,
            c.seed
        )?;
        let mut line = String::new();
        for inst in &self.instances {
            line.clear();
            line.push_str(&inst.label.to_string());
            line.push(' ');
            line.extend(inst.clean_mask.iter().map(|&b| if b { '1' } else { '0' }));
            line.push(' ');
            let sources: Vec<String> = inst
                .source_class
                .iter()
                .map(|s| s.map_or_else(|| "-".to_string(), |c| c.to_string()))
                .collect();
            line.push_str(&sources.join(","));
            for x in inst.embeddings.iter() {
                line.push(' ');
                line.push_str(&format_sig9(*x));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
        let config = parse_header(&header)?;
        let k = config.views_per_instance;
        let n = config.feature_dim;
        let mut instances = Vec::new();
        for (no, line) in lines.enumerate() {
            let line_no = no + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let label: usize = next_field(&mut fields, line_no, "label")?
                .parse()
                .map_err(|_| parse_err(line_no, "bad label"))?;
            let mask_str = next_field(&mut fields, line_no, "clean mask")?;
            if mask_str.len() != k {
                return Err(parse_err(line_no, "clean mask length differs from k"));
            }
            let clean_mask = mask_str
                .chars()
                .map(|ch| match ch {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(parse_err(line_no, "clean mask must be 0/1")),
                })
                .collect::<Result<Vec<bool>>>()?;
            let source_class = next_field(&mut fields, line_no, "source classes")?
                .split(',')
                .map(|s| {
                    if s == "-" {
                        Ok(None)
                    } else {
                        s.parse()
                            .map(Some)
                            .map_err(|_| parse_err(line_no, "bad source class"))
                    }
                })
                .collect::<Result<Vec<Option<usize>>>>()?;
            if source_class.len() != k {
                return Err(parse_err(line_no, "source class count differs from k"));
            }
            let values = fields
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| parse_err(line_no, "bad embedding value"))?;
            let embeddings = Array2::from_shape_vec((k + 1, n), values)
                .map_err(|_| parse_err(line_no, "embedding count differs from (k+1)·n"))?;
            instances.push(SynthInstance {
                embeddings,
                label,
                clean_mask,
                source_class,
            });
        }
        Ok(Self { config, instances })
    }
}

fn parse_err(line: usize, msg: &str) -> TrdError {
    TrdError::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn next_field<'a>(
    it: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<&'a str> {
    it.next()
        .ok_or_else(|| parse_err(line, &format!("missing {what}")))
}

fn parse_header(header: &str) -> Result<SynthConfig> {
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("trd-dataset") || parts.next() != Some("v1") {
        return Err(parse_err(1, "not a trd-dataset v1 file"));
    }
    let mut cfg = SynthConfig::default();
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| parse_err(1, "header fields must be key=value"))?;
        let bad = || parse_err(1, &format!("bad value for `{key}`"));
        match key {
            "classes" => cfg.num_classes = value.parse().map_err(|_| bad())?,
            "per_class" => cfg.instances_per_class = value.parse().map_err(|_| bad())?,
            "k" => cfg.views_per_instance = value.parse().map_err(|_| bad())?,
            "n" => cfg.feature_dim = value.parse().map_err(|_| bad())?,
            "concepts" => cfg.concepts_per_class = value.parse().map_err(|_| bad())?,
            "eta" => cfg.noise_rate = value.parse().map_err(|_| bad())?,
            "model" => cfg.noise_model = value.parse().map_err(|_| bad())?,
            "sigma" => cfg.noise_scale = value.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(parse_err(1, &format!("unknown header key `{key}`"))),
        }
    }
    Ok(cfg)
}

fn format_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn quantize(x: f64) -> f64 {
    format_sig9(x).parse().expect("formatted float parses")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal))
}

fn normalized(mut v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    loop {
        let v = gaussian(rng, n);
        if v.dot(&v) > 1e-12 {
            return normalized(v);
        }
    }
}

/// Isotropic perturbation with expected norm close to `scale`.
fn perturbation(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    gaussian(rng, n) * (scale / (n as f64).sqrt())
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.feature_dim;
    let k = cfg.views_per_instance;

    let concepts: Vec<Vec<Array1<f64>>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.concepts_per_class)
                .map(|_| unit_vector(&mut rng, n))
                .collect()
        })
        .collect();

    let mut instances = Vec::with_capacity(cfg.num_classes * cfg.instances_per_class);
    for label in 0..cfg.num_classes {
        for _ in 0..cfg.instances_per_class {
            let mut views = Array2::zeros((k + 1, n));
            let mut assigned = Vec::with_capacity(k);
            for i in 0..k {
                let c = rng.random_range(0..cfg.concepts_per_class);
                assigned.push(c);
                let v = &concepts[label][c] + &perturbation(&mut rng, n, cfg.noise_scale);
                views.row_mut(i + 1).assign(&v);
            }

            let noisy: Vec<usize> = match cfg.noise_model {
                NoiseModel::UniformWholeImage => (0..k)
                    .filter(|_| rng.random_bool(cfg.noise_rate))
                    .collect(),
                NoiseModel::OutsideGlobalFraction | NoiseModel::CausalIntervention => {
                    let mut order: Vec<usize> = (0..k).collect();
                    order.shuffle(&mut rng);
                    let mut chosen = order[..cfg.noisy_count()].to_vec();
                    chosen.sort_unstable();
                    chosen
                }
            };

            let mut clean_mask = vec![true; k];
            let mut source_class = vec![Some(label); k];
            for &i in &noisy {
                clean_mask[i] = false;
                let v = match cfg.noise_model {
                    NoiseModel::CausalIntervention => {
                        let mut other = rng.random_range(0..cfg.num_classes - 1);
                        if other >= label {
                            other += 1;
                        }
                        source_class[i] = Some(other);
                        let c = rng.random_range(0..cfg.concepts_per_class);
                        &concepts[other][c] + &perturbation(&mut rng, n, cfg.noise_scale)
                    }
                    _ => {
                        source_class[i] = None;
                        unit_vector(&mut rng, n)
                    }
                };
                views.row_mut(i + 1).assign(&v);
            }

            let mut direction = Array1::zeros(n);
            let clean: Vec<usize> = (0..k).filter(|&i| clean_mask[i]).collect();
            if clean.is_empty() {
                for c in &concepts[label] {
                    direction += c;
                }
            } else {
                for &i in &clean {
                    direction += &concepts[label][assigned[i]];
                }
            }
            let global = normalized(direction) + perturbation(&mut rng, n, cfg.noise_scale);
            views.row_mut(0).assign(&global);
            views.mapv_inplace(quantize);

            instances.push(SynthInstance {
                embeddings: views,
                label,
                clean_mask,
                source_class,
            });
        }
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        instances,
    })
}

/// Emergence proxy from the generative model: cosine between the global view
/// and the mean of the chosen local views, mapped from [-1, 1] to [0, 1].
/// `subset` holds node indices of local views (`1..=k`).
pub fn ground_truth_emergence(inst: &SynthInstance, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(domain("emergence of an empty view set"));
    }
    let k = inst.num_locals();
    let mut mean = Array1::<f64>::zeros(inst.embeddings.ncols());
    for &i in subset {
        if i == 0 || i > k {
            return Err(domain(format!("node {i} is not a local view")));
        }
        mean += &inst.embeddings.row(i);
    }
    let g = inst.global();
    let denom = (g.dot(&g) * mean.dot(&mean)).sqrt();
    let cos = if denom > 0.0 { g.dot(&mean) / denom } else { 0.0 };
    Ok(((1.0 + cos.clamp(-1.0, 1.0)) / 2.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eta: f64, model: NoiseModel) -> SynthConfig {
        SynthConfig {
            num_classes: 8,
            instances_per_class: 6,
            noise_rate: eta,
            noise_model: model,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn clean_when_eta_zero() {
        for model in NoiseModel::ALL {
            let ds = generate(&cfg(0.0, model)).unwrap();
            for inst in &ds.instances {
                assert!(inst.clean_mask.iter().all(|&b| b));
                assert!(inst.source_class.iter().all(|&s| s == Some(inst.label)));
            }
        }
    }

    #[test]
    fn exact_noisy_count_for_fixed_fraction_models() {
        let ds = generate(&cfg(0.5, NoiseModel::OutsideGlobalFraction)).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.clean_mask.iter().filter(|&&b| !b).count(), 8);
        }
        let ds = generate(&cfg(0.25, NoiseModel::CausalIntervention)).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.clean_mask.iter().filter(|&&b| b).count(), 12);
        }
    }

    #[test]
    fn causal_noise_comes_from_other_classes() {
        let ds = generate(&cfg(0.25, NoiseModel::CausalIntervention)).unwrap();
        let mut scanned = 0;
        for inst in &ds.instances {
            for (i, &clean) in inst.clean_mask.iter().enumerate() {
                let src = inst.source_class[i].expect("causal views keep a source class");
                if clean {
                    assert_eq!(src, inst.label);
                } else {
                    assert_ne!(src, inst.label);
                    assert!(src < 8);
                    scanned += 1;
                }
            }
        }
        assert_eq!(scanned, ds.len() * 4);
    }

    #[test]
    fn uniform_model_has_expected_mean_clean_count() {
        let c = SynthConfig {
            num_classes: 2,
            instances_per_class: 400,
            noise_rate: 0.25,
            noise_model: NoiseModel::UniformWholeImage,
            ..SynthConfig::default()
        };
        let ds = generate(&c).unwrap();
        let total: usize = ds
            .instances
            .iter()
            .map(|i| i.clean_mask.iter().filter(|&&b| b).count())
            .sum();
        let mean = total as f64 / ds.len() as f64;
        // binomial(16, 0.75): sd of the mean over 800 draws is ~0.06
        assert!((mean - 12.0).abs() < 0.3, "mean clean count {mean}");
    }

    #[test]
    fn deterministic_and_balanced() {
        let c = cfg(0.3, NoiseModel::UniformWholeImage);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        for class in 0..8 {
            assert_eq!(a.instances.iter().filter(|i| i.label == class).count(), 6);
        }
        let other = generate(&SynthConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn validation() {
        let bad = SynthConfig {
            noise_rate: 1.5,
            ..SynthConfig::default()
        };
        match generate(&bad) {
            Err(TrdError::Config { key, .. }) => assert_eq!(key, "synth.eta"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = SynthConfig {
            concepts_per_class: 17,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            num_classes: 0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        // η = 1 is allowed; downstream decides what to do with it.
        let all_noise = SynthConfig {
            noise_rate: 1.0,
            instances_per_class: 2,
            ..SynthConfig::default()
        };
        assert!(generate(&all_noise).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let ds = generate(&cfg(0.25, NoiseModel::CausalIntervention)).unwrap();
        let mut buf = Vec::new();
        ds.save(&mut buf).unwrap();
        let back = SynthDataset::load(&buf[..]).unwrap();
        assert_eq!(back, ds);

        let ds = generate(&cfg(0.5, NoiseModel::OutsideGlobalFraction)).unwrap();
        let mut buf = Vec::new();
        ds.save(&mut buf).unwrap();
        assert_eq!(SynthDataset::load(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(SynthDataset::load(&b"hello\n"[..]).is_err());
        let text = "trd-dataset v1 classes=1 per_class=1 k=2 n=1 concepts=1 eta=0 model=uniform sigma=0 seed=1\n0 11 0,0 1 2\n";
        assert!(matches!(
            SynthDataset::load(text.as_bytes()),
            Err(TrdError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn split_is_per_class() {
        let ds = generate(&cfg(0.0, NoiseModel::UniformWholeImage)).unwrap();
        let (train, test) = ds.split(0.5);
        assert_eq!(train.len(), 24);
        assert_eq!(test.len(), 24);
        for c in 0..8 {
            assert_eq!(
                test.iter().filter(|&&i| ds.instances[i].label == c).count(),
                3
            );
        }
    }

    #[test]
    fn emergence_of_all_clean_views_is_one_without_perturbation() {
        let c = SynthConfig {
            noise_scale: 0.0,
            noise_rate: 0.25,
            noise_model: NoiseModel::OutsideGlobalFraction,
            feature_dim: 64,
            ..SynthConfig::default()
        };
        let ds = generate(&c).unwrap();
        for inst in ds.instances.iter().take(20) {
            let e = ground_truth_emergence(inst, &inst.clean_nodes()).unwrap();
            // quantization to 9 significant digits bounds the error
            assert!((e - 1.0).abs() < 1e-9, "{e}");
        }
    }

    #[test]
    fn emergence_errors() {
        let ds = generate(&cfg(0.0, NoiseModel::UniformWholeImage)).unwrap();
        let inst = &ds.instances[0];
        assert!(ground_truth_emergence(inst, &[]).is_err());
        assert!(ground_truth_emergence(inst, &[0]).is_err());
        assert!(ground_truth_emergence(inst, &[17]).is_err());
    }

    /// Monte-Carlo comparison over 100 seeds: a single pure-noise view scores
    /// below the clean set, and a clean+noisy mix lands in between on average.
    #[test]
    fn emergence_orders_clean_mixed_noise() {
        let mut clean_sum = 0.0;
        let mut noise_sum = 0.0;
        let mut mixed_sum = 0.0;
        for seed in 0..100 {
            let c = SynthConfig {
                num_classes: 2,
                instances_per_class: 1,
                feature_dim: 64,
                noise_rate: 0.5,
                noise_model: NoiseModel::OutsideGlobalFraction,
                seed,
                ..SynthConfig::default()
            };
            let ds = generate(&c).unwrap();
            let inst = &ds.instances[0];
            let clean = inst.clean_nodes();
            let noisy = inst.noisy_nodes();
            let ce = ground_truth_emergence(inst, &clean).unwrap();
            let ne = ground_truth_emergence(inst, &noisy[..1]).unwrap();
            let mixed: Vec<usize> = clean[..4].iter().chain(&noisy[..4]).copied().collect();
            let me = ground_truth_emergence(inst, &mixed).unwrap();
            assert!(ne < ce, "seed {seed}: noise {ne} vs clean {ce}");
            clean_sum += ce;
            noise_sum += ne;
            mixed_sum += me;
        }
        assert!(noise_sum < mixed_sum && mixed_sum < clean_sum);
        // a single random view sits near the 0.5 image of a zero cosine
        assert!((noise_sum / 100.0 - 0.5).abs() < 0.1);
    }

    #[test]
    fn clean_pairs_separate_from_mixed_pairs() {
        let c = SynthConfig {
            num_classes: 4,
            instances_per_class: 25,
            noise_rate: 0.25,
            noise_scale: 0.3,
            noise_model: NoiseModel::OutsideGlobalFraction,
            ..SynthConfig::default()
        };
        let ds = generate(&c).unwrap();
        let (mut clean_pairs, mut mixed_pairs) = (Vec::new(), Vec::new());
        for inst in &ds.instances {
            let clean = inst.clean_nodes();
            let noisy = inst.noisy_nodes();
            for (a, &i) in clean.iter().enumerate() {
                for &j in &clean[a + 1..] {
                    clean_pairs.push(ground_truth_emergence(inst, &[i, j]).unwrap());
                }
                for &j in &noisy {
                    mixed_pairs.push(ground_truth_emergence(inst, &[i, j]).unwrap());
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&clean_pairs) > mean(&mixed_pairs));
    }
}
