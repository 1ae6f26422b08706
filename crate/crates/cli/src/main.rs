use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trd::checkpoint;
use trd::config::RunConfig;
use trd::explain::{
    curve_csv, fidelity_sparsity_curve, macs_at_k, macs_csv, random_baseline_curve,
    random_explanation, top_k_explanation, ExplanationItem, ExplanationSet,
};
use trd::synth::{generate, NoiseModel, SynthDataset};
use trd::trainer::{
    depth_csv, evaluate, noise_csv, sweep_depth, sweep_noise, test_graphs, train, Model,
};
use trd::transitivity::{
    find_continents, sample_complexity_noisy, sample_complexity_transitive, topology_count,
    turan_edge_bound,
};
use trd::{export_dot, TrdError};

#[derive(Parser)]
#[command(name = "trd", version, about = "View-graph metric learning experiments")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Setup {
    /// `key = value` run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the data and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Trained {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file; generated from the configuration when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    setup: Setup,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes `model.ckpt` and `report.csv` into the output directory.
    Train {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        trained: Trained,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DOT explanations for every instance plus one proxy graph per class.
    Explain {
        #[command(flatten)]
        trained: Trained,
        #[arg(long, default_value_t = 6)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy with and without transitivity recovery across noise rates.
    SweepNoise {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
        eta_list: Vec<f64>,
        /// Noise models; defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        models: Vec<NoiseModel>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and embedding distinguishability across encoder depths.
    SweepDepth {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        depth_list: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fidelity/sparsity curves, mACS and continent reports on the test split.
    Metrics {
        #[command(flatten)]
        trained: Trained,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12")]
        top_k: Vec<usize>,
        /// Random subsets averaged per baseline point.
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form calculators.
    Calc {
        #[command(subcommand)]
        formula: Formula,
    },
}

#[derive(Subcommand)]
enum Formula {
    /// Number of topologies on n views.
    TopologyCount { n: u64 },
    /// Edge bound for graphs without a (k+1)-clique.
    Turan { n: u64, k: u64 },
    /// Samples to learn a transitive topology of n views.
    Mstar { n: u64, delta: f64, epsilon: f64 },
    /// Samples to learn the topology of an island of eta noisy views.
    Mnoisy { eta: u64, delta: f64, epsilon: f64 },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Trd(TrdError),
}

impl From<TrdError> for Failure {
    fn from(e: TrdError) -> Self {
        Failure::Trd(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Trd(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => 2,
        Failure::Trd(TrdError::Numeric { .. } | TrdError::Diverged { .. }) => 3,
        Failure::Trd(TrdError::Io(e)) if e.kind() != std::io::ErrorKind::NotFound => 1,
        Failure::Trd(_) => 2,
    }
}

fn with_path(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn run_config(setup: &Setup) -> CliResult<RunConfig> {
    let mut cfg = match &setup.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| with_path(p, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = setup.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn dataset(data: Option<&Path>, cfg: &RunConfig) -> CliResult<SynthDataset> {
    match data {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| with_path(p, e))?;
            Ok(SynthDataset::load(BufReader::new(file))?)
        }
        None => Ok(generate(&cfg.synth)?),
    }
}

fn load_trained(t: &Trained) -> CliResult<(RunConfig, Model, SynthDataset)> {
    let cfg = run_config(&t.setup)?;
    let file = fs::File::open(&t.checkpoint).map_err(|e| with_path(&t.checkpoint, e))?;
    let model = checkpoint::load(BufReader::new(file))?;
    let ds = dataset(t.data.as_deref(), &cfg)?;
    if model.encoder.input_dim != ds.config.feature_dim {
        return Err(Failure::Usage(format!(
            "checkpoint expects {}-dimensional views, dataset has {}",
            model.encoder.input_dim, ds.config.feature_dim
        )));
    }
    Ok((cfg, model, ds))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| with_path(dir, e))
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| with_path(path, e))
}

fn cmd_generate(setup: &Setup, out: &Path) -> CliResult<()> {
    let cfg = run_config(setup)?;
    let ds = generate(&cfg.synth)?;
    let mut buf = Vec::new();
    ds.save(&mut buf)?;
    fs::write(out, buf).map_err(|e| with_path(out, e))?;
    println!("wrote {} instances to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_train(setup: &Setup, data: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = run_config(setup)?;
    let ds = dataset(data, &cfg)?;
    let (model, report) = train(&ds, &cfg.train)?;
    create_dir(out)?;
    write(&out.join("model.ckpt"), &checkpoint::to_text(&model))?;
    write(&out.join("report.csv"), &report.to_csv())?;
    println!(
        "train_accuracy={:.6} test_accuracy={:.6} wall_clock_secs={:.2}",
        report.train_accuracy, report.test_accuracy, report.wall_clock_secs
    );
    Ok(())
}

fn cmd_eval(trained: &Trained, out: Option<&Path>) -> CliResult<()> {
    let (_, model, ds) = load_trained(trained)?;
    let acc = evaluate(&model, &ds)?;
    let line = format!("test_accuracy={acc:.6}");
    if let Some(out) = out {
        write(out, &format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(())
}

fn cmd_explain(trained: &Trained, top_k: usize, out: &Path) -> CliResult<()> {
    let (_, model, ds) = load_trained(trained)?;
    let graphs = trd::complementarity::build_dataset(&ds, &model.config.graph_config())?;
    create_dir(out)?;
    for (i, g) in graphs.iter().enumerate() {
        let relevance = model.relevance_graph(g)?;
        let expl = top_k_explanation(&relevance, top_k)?;
        write(&out.join(format!("instance_{i:04}.dot")), &expl.export_dot(true))?;
    }
    for p in &model.proxies {
        let mut g = p.to_view_graph();
        g.set_label(Some(p.class_id));
        write(&out.join(format!("proxy_class_{}.dot", p.class_id)), &export_dot(&g, true))?;
    }
    println!(
        "wrote {} explanations and {} proxies to {}",
        graphs.len(),
        model.proxies.len(),
        out.display()
    );
    Ok(())
}

fn cmd_sweep_noise(setup: &Setup, etas: &[f64], models: &[NoiseModel], out: &Path) -> CliResult<()> {
    let cfg = run_config(setup)?;
    let models = if models.is_empty() {
        vec![cfg.synth.noise_model]
    } else {
        models.to_vec()
    };
    for &eta in etas {
        let mut probe = cfg.clone();
        probe.synth.noise_rate = eta;
        probe.validate()?;
    }
    let rows = sweep_noise(&cfg.synth, &cfg.train, etas, &models)?;
    write(out, &noise_csv(&rows))?;
    print!("{}", noise_csv(&rows));
    Ok(())
}

fn cmd_sweep_depth(setup: &Setup, data: Option<&Path>, depths: &[usize], out: &Path) -> CliResult<()> {
    let cfg = run_config(setup)?;
    for &depth in depths {
        let mut probe = cfg.clone();
        probe.train.encoder.num_layers = depth;
        probe.validate()?;
    }
    let ds = dataset(data, &cfg)?;
    let rows = sweep_depth(&ds, &cfg.train, depths)?;
    write(out, &depth_csv(&rows))?;
    print!("{}", depth_csv(&rows));
    Ok(())
}

fn cmd_metrics(trained: &Trained, top_k: &[usize], draws: usize, out: &Path) -> CliResult<()> {
    let (cfg, model, ds) = load_trained(trained)?;
    let relevance: Vec<_> = test_graphs(&model, &ds)?
        .iter()
        .map(|g| model.relevance_graph(g))
        .collect::<trd::Result<_>>()?;
    let seed = model.config.seed;
    let psi = &model.cost_head;
    let curve = fidelity_sparsity_curve(&relevance, &model.proxies, psi, top_k)?;
    let baseline = random_baseline_curve(&relevance, &model.proxies, psi, top_k, draws, seed)?;

    // mACS between emergence-ranked and random explanations of the largest size
    let size = top_k.iter().copied().max().unwrap_or(6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranked = Vec::with_capacity(relevance.len());
    let mut random = Vec::with_capacity(relevance.len());
    for g in &relevance {
        let label = g.label().expect("test graphs are labelled");
        ranked.push(ExplanationItem {
            subgraph: top_k_explanation(g, size)?,
            label,
        });
        random.push(ExplanationItem {
            subgraph: random_explanation(g, size, &mut rng)?,
            label,
        });
    }
    let ranked = ExplanationSet::new(ranked, &model.proxies)?;
    let random = ExplanationSet::new(random, &model.proxies)?;
    let macs = (2..=4)
        .map(|k| Ok((k, macs_at_k(&ranked, &random, k, &cfg.transitivity.gamma)?)))
        .collect::<trd::Result<Vec<_>>>()?;

    let mut continents = String::from("instance,label,continents,islands,cut_edge_mass\n");
    for (i, g) in relevance.iter().enumerate() {
        let r = find_continents(g, &cfg.transitivity)?;
        let _ = writeln!(
            continents,
            "{i},{},{},{},{:.6}",
            g.label().expect("test graphs are labelled"),
            r.continents.len(),
            r.islands.len(),
            r.cut_edge_mass
        );
    }

    create_dir(out)?;
    write(&out.join("fidelity_sparsity.csv"), &curve_csv(&curve))?;
    write(&out.join("random_baseline.csv"), &curve_csv(&baseline))?;
    write(&out.join("macs.csv"), &macs_csv(&macs))?;
    write(&out.join("continents.csv"), &continents)?;
    print!("{}", curve_csv(&curve));
    Ok(())
}

fn cmd_calc(formula: &Formula) -> CliResult<()> {
    let value = match *formula {
        Formula::TopologyCount { n } => topology_count(n).to_string(),
        Formula::Turan { n, k } => turan_edge_bound(n, k)?.to_string(),
        Formula::Mstar { n, delta, epsilon } => {
            sample_complexity_transitive(n, epsilon, delta)?.to_string()
        }
        Formula::Mnoisy { eta, delta, epsilon } => {
            sample_complexity_noisy(eta, epsilon, delta)?.to_string()
        }
    };
    println!("{value}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate { setup, out } => cmd_generate(setup, out),
        Command::Train { setup, data, out } => cmd_train(setup, data.as_deref(), out),
        Command::Eval { trained, out } => cmd_eval(trained, out.as_deref()),
        Command::Explain { trained, top_k, out } => cmd_explain(trained, *top_k, out),
        Command::SweepNoise {
            setup,
            eta_list,
            models,
            out,
        } => cmd_sweep_noise(setup, eta_list, models, out),
        Command::SweepDepth {
            setup,
            data,
            depth_list,
            out,
        } => cmd_sweep_depth(setup, data.as_deref(), depth_list, out),
        Command::Metrics {
            trained,
            top_k,
            draws,
            out,
        } => cmd_metrics(trained, top_k, *draws, out),
        Command::Calc { formula } => cmd_calc(formula),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Trd(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
