use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trd::complementarity::{build, ComplementarityConfig};
use trd::config::RunConfig;
use trd::encoder::{EncoderConfig, GatParams};
use trd::graph::{pair_index, pairs};
use trd::hed::{exact_ged, hed, ConstantCost, CostHeadWeights, LinearCost};
use trd::proxy::{marginal_residual, proxy_anchor_loss, sinkhorn, ProxyAnchorConfig, SinkhornConfig};
use trd::synth::{generate, NoiseModel, SynthConfig};
use trd::transitivity::{find_continents, Gamma, TransitivityConfig};
use trd::ViewGraph;

fn matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Same graph with local views relabelled by `perm` (global stays at 0).
fn permuted(g: &ViewGraph, perm: &[usize]) -> ViewGraph {
    let n = g.num_views();
    let mut nodes = g.node_features().clone();
    for (new, &old) in perm.iter().enumerate() {
        nodes.row_mut(new).assign(&g.node(old));
    }
    let mut edges = g.edge_features().clone();
    for (i, j) in pairs(n) {
        edges
            .row_mut(pair_index(n, i, j))
            .assign(&g.edge_features().row(pair_index(n, perm[i], perm[j])));
    }
    ViewGraph::new(nodes, edges, g.label()).unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hed_is_nonnegative_symmetric_and_zero_on_itself(seed in 0u64..10_000, n in 1usize..7, d in 1usize..6) {
        let a = matrix(seed, n, d);
        let b = matrix(seed + 1, n, d);
        let psi = CostHeadWeights::init(d, 4, seed);
        let ab = hed(a.view(), b.view(), &psi).unwrap().value;
        let ba = hed(b.view(), a.view(), &psi).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert_eq!(hed(a.view(), a.view(), &psi).unwrap().value, 0.0);
    }

    #[test]
    fn hed_never_exceeds_exact_edit_distance(seed in 0u64..10_000, na in 1usize..6, nb in 1usize..6, c in 0.05f64..2.0) {
        let a = matrix(seed, na, 3);
        let b = matrix(seed + 7, nb, 3);
        let head = CostHeadWeights::init(3, 4, seed);
        prop_assert!(hed(a.view(), b.view(), &head).unwrap().value <= exact_ged(a.view(), b.view(), &head).unwrap() + 1e-9);
        let constant = ConstantCost(c);
        prop_assert!(hed(a.view(), b.view(), &constant).unwrap().value <= exact_ged(a.view(), b.view(), &constant).unwrap() + 1e-9);
    }

    #[test]
    fn hed_scales_with_embeddings_under_a_linear_cost(seed in 0u64..10_000, n in 1usize..6, s in 0.1f64..4.0) {
        let a = matrix(seed, n, 4);
        let b = matrix(seed + 3, n + 1, 4);
        let psi = LinearCost(Array1::from(vec![0.3, -0.2, 0.5, 0.1]));
        let base = hed(a.view(), b.view(), &psi).unwrap().value;
        let scaled = hed((&a * s).view(), (&b * s).view(), &psi).unwrap().value;
        prop_assert!((scaled - s * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in 0u64..10_000, locals in 2usize..7, layers in 1usize..4) {
        let cfg = EncoderConfig { num_layers: layers, heads: 2, hidden_dim: 4, edge_update: layers > 1, ..EncoderConfig::default() };
        let p = GatParams::init(cfg, 3, seed).unwrap();
        let g = build(&matrix(seed, locals + 1, 3), 0, Some(0), &ComplementarityConfig::default()).unwrap();
        let mut perm: Vec<usize> = (1..=locals).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        perm.insert(0, 0);
        let (out, tape) = p.forward(&g).unwrap();
        let (out_p, _) = p.forward(&permuted(&g, &perm)).unwrap();
        let expected = permuted(&out, &perm);
        prop_assert!(max_abs_diff(out_p.node_features(), expected.node_features()) <= 1e-9);
        prop_assert!(max_abs_diff(out_p.edge_features(), expected.edge_features()) <= 1e-9);
        for l in 0..tape.num_layers() {
            for h in 0..2 {
                for row in tape.attention(l, h).rows() {
                    prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn sinkhorn_meets_marginals(seed in 0u64..10_000, m in 1usize..33, c in 1usize..17) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_fn((m, c), |_| rng.random_range(0.0..1.0));
        let rows = vec![1.0 / m as f64; m];
        let cols = vec![1.0 / c as f64; c];
        let out = sinkhorn(&cost, &rows, &cols, &SinkhornConfig::default()).unwrap();
        prop_assert!(out.converged);
        prop_assert!(marginal_residual(&out.plan, &rows, &cols) <= 1e-6);
        prop_assert!(out.plan.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn proxy_anchor_loss_is_finite_and_nonnegative(seed in 0u64..10_000, n in 1usize..10, classes in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Array2::from_shape_fn((n, classes), |_| rng.random_range(0.0..20.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let (loss, grad) = proxy_anchor_loss(&d, &labels, &ProxyAnchorConfig::default()).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.iter().all(|g| g.is_finite()));
        for (x, &y) in labels.iter().enumerate() {
            // pulling towards the own proxy, pushing from the others
            prop_assert!(grad[[x, y]] >= 0.0);
            for c in (0..classes).filter(|&c| c != y) {
                prop_assert!(grad[[x, c]] <= 0.0);
            }
        }
    }

    #[test]
    fn continents_and_islands_cover_every_local(seed in 0u64..10_000, n in 2usize..12, q in 0.1f64..0.9) {
        let g = build(&matrix(seed, n, 4), 0, None, &ComplementarityConfig { weight_cap: 4.0, ..Default::default() }).unwrap();
        let r = find_continents(&g, &TransitivityConfig { gamma: Gamma::Quantile(q) }).unwrap();
        let land: BTreeSet<usize> = r.continents.iter().flatten().copied().collect();
        let sea: BTreeSet<usize> = r.islands.iter().flatten().copied().collect();
        prop_assert!(land.is_disjoint(&sea));
        prop_assert_eq!(land.union(&sea).copied().collect::<BTreeSet<_>>(), (1..n).collect::<BTreeSet<_>>());
        let assigned: Vec<usize> = r.assignment.iter().flatten().copied().collect();
        prop_assert_eq!(assigned.len(), n - 1);
    }

    #[test]
    fn disjoint_cliques_are_recovered(sizes in proptest::collection::vec(2usize..5, 1..4)) {
        let n = 1 + sizes.iter().sum::<usize>();
        let mut group = vec![usize::MAX; n];
        let mut next = 1;
        for (k, &s) in sizes.iter().enumerate() {
            for v in next..next + s {
                group[v] = k;
            }
            next += s;
        }
        let mut edges = Array2::zeros((n * (n - 1) / 2, 1));
        for (i, j) in pairs(n) {
            let w = if i == 0 || group[i] == group[j] { 1.0 } else { 0.1 };
            edges[[pair_index(n, i, j), 0]] = w;
        }
        let g = ViewGraph::new(Array2::zeros((n, 1)), edges, None).unwrap();
        let r = find_continents(&g, &TransitivityConfig { gamma: Gamma::Absolute(0.5) }).unwrap();
        let expected: Vec<BTreeSet<usize>> = (0..sizes.len())
            .map(|k| (1..n).filter(|&v| group[v] == k).collect())
            .collect();
        prop_assert_eq!(r.continents, expected);
        prop_assert!(r.islands.is_empty());
    }

    #[test]
    fn outside_global_noise_replaces_the_rounded_count(seed in 0u64..1000, eta in 0.0f64..=1.0, k in 1usize..12) {
        let cfg = SynthConfig {
            num_classes: 2,
            instances_per_class: 2,
            views_per_instance: k,
            feature_dim: 4,
            concepts_per_class: 1,
            noise_rate: eta,
            noise_model: NoiseModel::OutsideGlobalFraction,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        prop_assert_eq!(&ds, &generate(&cfg).unwrap());
        for inst in &ds.instances {
            prop_assert_eq!(inst.noisy_nodes().len(), (eta * k as f64).round() as usize);
        }
    }

    #[test]
    fn run_config_text_round_trips(seed in 0u64..u64::MAX, eta in 0.0f64..=1.0, layers in 1usize..5, q in 0.01f64..0.99) {
        let mut cfg = RunConfig::default();
        cfg.set_seed(seed);
        cfg.synth.noise_rate = eta;
        cfg.train.encoder.num_layers = layers;
        cfg.transitivity.gamma = Gamma::Quantile(q);
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
