//! Emergence and transitivity on semantic relevance graphs, continent/island
//! decomposition, clique counting, and the robustness calculators.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_bigint::BigUint;

use crate::error::{contract, domain, Result};
use crate::graph::{edge_weight_unchecked, pairs, ViewGraph, GLOBAL};

/// Largest number of local views accepted by the clique routines.
pub const MAX_CLIQUE_LOCALS: usize = 64;

/// Emergence threshold γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Absolute(f64),
    /// Quantile of all edge weights of the graph at hand, in `(0, 1)`.
    Quantile(f64),
}

impl Default for Gamma {
    fn default() -> Self {
        Gamma::Quantile(0.75)
    }
}

impl Gamma {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Gamma::Absolute(x) if !x.is_finite() => Err(contract("γ must be finite")),
            Gamma::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                Err(contract(format!("γ quantile {q} is outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// The absolute threshold for `g`.
    pub fn resolve(&self, g: &ViewGraph) -> Result<f64> {
        self.validate()?;
        match *self {
            Gamma::Absolute(x) => Ok(x),
            Gamma::Quantile(q) => {
                let weights: Vec<f64> = pairs(g.num_views())
                    .map(|(i, j)| edge_weight_unchecked(g, i, j))
                    .collect();
                if weights.is_empty() {
                    return Err(domain("γ quantile of a graph without edges"));
                }
                Ok(quantile(weights, q))
            }
        }
    }
}

/// Linearly interpolated quantile (`(n-1)·q` positioning).
pub fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = (values.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransitivityConfig {
    pub gamma: Gamma,
}

fn check_local(g: &ViewGraph, i: usize) -> Result<()> {
    if i >= g.num_views() {
        return Err(crate::error::TrdError::Index {
            index: i,
            len: g.num_views(),
        });
    }
    if i == GLOBAL {
        return Err(domain("the global view has no emergence score"));
    }
    Ok(())
}

/// Weight of the edge between local view `i` and the global view.
pub fn emergence_score(g: &ViewGraph, i: usize) -> Result<f64> {
    check_local(g, i)?;
    Ok(edge_weight_unchecked(g, i, GLOBAL))
}

/// Weakest link of the triangle `(i, j, global)`.
pub fn pairwise_emergence(g: &ViewGraph, i: usize, j: usize) -> Result<f64> {
    check_local(g, i)?;
    check_local(g, j)?;
    if i == j {
        return Err(domain("pairwise emergence needs two distinct views"));
    }
    Ok(pairwise_unchecked(g, i, j))
}

fn pairwise_unchecked(g: &ViewGraph, i: usize, j: usize) -> f64 {
    edge_weight_unchecked(g, i, GLOBAL)
        .min(edge_weight_unchecked(g, j, GLOBAL))
        .min(edge_weight_unchecked(g, i, j))
}

/// Whether transitivity holds for each rotation of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleReport {
    /// Rotations `(i,j,k)`, `(j,k,i)`, `(k,i,j)`: the premise uses the first two
    /// pairs of the chain and the conclusion the closing pair.
    pub rotations: [bool; 3],
}

impl TripleReport {
    pub fn holds(&self) -> bool {
        self.rotations.iter().all(|&r| r)
    }
}

pub fn is_transitive_triple(
    g: &ViewGraph,
    i: usize,
    j: usize,
    k: usize,
    gamma: f64,
) -> Result<TripleReport> {
    for v in [i, j, k] {
        check_local(g, v)?;
    }
    if i == j || j == k || i == k {
        return Err(domain("a triple needs three distinct views"));
    }
    let high = |a, b| pairwise_unchecked(g, a, b) > gamma;
    let rule = |a, b, c| !(high(a, b) && high(b, c) && !high(a, c));
    Ok(TripleReport {
        rotations: [rule(i, j, k), rule(j, k, i), rule(k, i, j)],
    })
}

/// Maximal cliques of a graph given as bitset adjacency rows, by Bron–Kerbosch
/// with pivoting. Each clique is a bitset; output is sorted.
pub fn maximal_cliques(adjacency: &[u64]) -> Result<Vec<u64>> {
    let n = adjacency.len();
    if n > MAX_CLIQUE_LOCALS {
        return Err(domain(format!(
            "clique enumeration is limited to {MAX_CLIQUE_LOCALS} nodes, got {n}"
        )));
    }
    for (i, &row) in adjacency.iter().enumerate() {
        if row >> i & 1 == 1 {
            return Err(contract("adjacency rows must not contain self loops"));
        }
        let mut rest = row;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            if j >= n || adjacency[j] >> i & 1 == 0 {
                return Err(contract("adjacency must be symmetric"));
            }
        }
    }
    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut out = Vec::new();
    if n > 0 {
        bron_kerbosch(adjacency, 0, all, 0, &mut out);
    }
    out.sort_by_key(|c| bits_to_vec(*c));
    Ok(out)
}

fn bron_kerbosch(adj: &[u64], r: u64, mut p: u64, mut x: u64, out: &mut Vec<u64>) {
    if p == 0 {
        if x == 0 {
            out.push(r);
        }
        return;
    }
    let mut pivot = 0;
    let mut best = None;
    let mut scan = p | x;
    while scan != 0 {
        let u = scan.trailing_zeros() as usize;
        scan &= scan - 1;
        let c = (p & adj[u]).count_ones();
        if best.is_none_or(|b| c > b) {
            best = Some(c);
            pivot = u;
        }
    }
    let mut candidates = p & !adj[pivot];
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        candidates &= candidates - 1;
        let bit = 1u64 << v;
        bron_kerbosch(adj, r | bit, p & adj[v], x & adj[v], out);
        p &= !bit;
        x |= bit;
    }
}

fn bits_to_vec(mut bits: u64) -> Vec<usize> {
    let mut v = Vec::with_capacity(bits.count_ones() as usize);
    while bits != 0 {
        v.push(bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
    v
}

fn bits_to_nodes(bits: u64) -> BTreeSet<usize> {
    bits_to_vec(bits).into_iter().map(|b| b + 1).collect()
}

/// Local-local adjacency: bit `b` stands for node `b + 1`.
fn local_adjacency(g: &ViewGraph, edge: impl Fn(usize, usize) -> bool) -> Result<Vec<u64>> {
    let locals = g.num_views() - 1;
    if locals > MAX_CLIQUE_LOCALS {
        return Err(domain(format!(
            "clique routines are limited to {MAX_CLIQUE_LOCALS} local views, got {locals}"
        )));
    }
    let mut adj = vec![0u64; locals];
    for a in 0..locals {
        for b in a + 1..locals {
            if edge(a + 1, b + 1) {
                adj[a] |= 1 << b;
                adj[b] |= 1 << a;
            }
        }
    }
    Ok(adj)
}

/// Continents (maximal transitive cliques) and islands of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinentReport {
    pub gamma: f64,
    /// Maximal cliques with at least two locals, in lexicographic order. They may overlap.
    pub continents: Vec<BTreeSet<usize>>,
    /// Connected components (positive-weight edges) of the locals that sit on
    /// no above-threshold edge.
    pub islands: Vec<BTreeSet<usize>>,
    /// Disjoint groups from assigning nodes to the largest continent first.
    pub assignment: Vec<BTreeSet<usize>>,
    /// Total edge weight between continent nodes and island nodes.
    pub cut_edge_mass: f64,
}

impl ContinentReport {
    /// Tabular text form: `kind,index,nodes` with space-separated node ids.
    pub fn to_table(&self) -> String {
        let mut s = String::from("kind,index,nodes\n");
        for (kind, sets) in [
            ("continent", &self.continents),
            ("island", &self.islands),
            ("assigned", &self.assignment),
        ] {
            for (k, set) in sets.iter().enumerate() {
                let nodes: Vec<String> = set.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(s, "{kind},{k},{}", nodes.join(" "));
            }
        }
        let _ = writeln!(s, "cut,0,{:.6}", self.cut_edge_mass);
        s
    }
}

pub fn find_continents(g: &ViewGraph, cfg: &TransitivityConfig) -> Result<ContinentReport> {
    let gamma = cfg.gamma.resolve(g)?;
    let adj = local_adjacency(g, |i, j| pairwise_unchecked(g, i, j) > gamma)?;
    let continents: Vec<BTreeSet<usize>> = maximal_cliques(&adj)?
        .into_iter()
        .filter(|c| c.count_ones() >= 2)
        .map(bits_to_nodes)
        .collect();

    let isolated: Vec<usize> = (0..adj.len()).filter(|&b| adj[b] == 0).map(|b| b + 1).collect();
    let mut islands = Vec::new();
    let mut seen = BTreeSet::new();
    for &start in &isolated {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &isolated {
                if !seen.contains(&v) && edge_weight_unchecked(g, u, v) > 0.0 {
                    seen.insert(v);
                    comp.insert(v);
                    stack.push(v);
                }
            }
        }
        islands.push(comp);
    }

    let mut order: Vec<&BTreeSet<usize>> = continents.iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut taken = BTreeSet::new();
    let mut assignment = Vec::new();
    for c in order {
        let rest: BTreeSet<usize> = c.difference(&taken).copied().collect();
        if !rest.is_empty() {
            taken.extend(rest.iter().copied());
            assignment.push(rest);
        }
    }
    assignment.extend(islands.iter().cloned());

    let land: BTreeSet<usize> = continents.iter().flatten().copied().collect();
    let sea: BTreeSet<usize> = islands.iter().flatten().copied().collect();
    let cut = cut_edge_mass(g, &land, &sea)?;
    Ok(ContinentReport {
        gamma,
        continents,
        islands,
        assignment,
        cut_edge_mass: cut,
    })
}

fn check_nodes(g: &ViewGraph, set: &BTreeSet<usize>) -> Result<()> {
    match set.iter().find(|&&n| n >= g.num_views()) {
        Some(&n) => Err(crate::error::TrdError::Index {
            index: n,
            len: g.num_views(),
        }),
        None => Ok(()),
    }
}

/// Sum of edge weights between two disjoint node groups.
pub fn cut_edge_mass(g: &ViewGraph, a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    check_nodes(g, a)?;
    check_nodes(g, b)?;
    if a.intersection(b).next().is_some() {
        return Err(contract("cut groups must be disjoint"));
    }
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            total += edge_weight_unchecked(g, i, j);
        }
    }
    Ok(total)
}

/// Mean edge weight over all pairs inside a node group (0 for fewer than two nodes).
pub fn mean_intra_edge_weight(g: &ViewGraph, set: &BTreeSet<usize>) -> Result<f64> {
    check_nodes(g, set)?;
    let nodes: Vec<usize> = set.iter().copied().collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, &i) in nodes.iter().enumerate() {
        for &j in &nodes[a + 1..] {
            total += edge_weight_unchecked(g, i, j);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Number of `k`-node cliques containing the global view in the graph whose
/// edges are the pairs with weight above `gamma`.
pub fn count_k_cliques_with_global(g: &ViewGraph, k: usize, gamma: f64) -> Result<u64> {
    if k == 0 {
        return Ok(0);
    }
    let adj = local_adjacency(g, |i, j| edge_weight_unchecked(g, i, j) > gamma)?;
    let mut candidates = 0u64;
    for b in 0..adj.len() {
        if edge_weight_unchecked(g, b + 1, GLOBAL) > gamma {
            candidates |= 1 << b;
        }
    }
    Ok(count_cliques(&adj, candidates, k - 1))
}

fn count_cliques(adj: &[u64], candidates: u64, need: usize) -> u64 {
    if need == 0 {
        return 1;
    }
    if (candidates.count_ones() as usize) < need {
        return 0;
    }
    let mut total = 0;
    let mut rest = candidates;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        // only extend with higher-numbered nodes so each clique is counted once
        total += count_cliques(adj, rest & adj[v], need - 1);
    }
    total
}

/// Number of possible topologies `2^⌊n²/4⌋`.
pub fn topology_count(n: u64) -> BigUint {
    let exponent = (n as u128 * n as u128 / 4) as u64;
    BigUint::from(1u8) << exponent
}

/// Turán bound on the edges of a graph on `n` nodes without a `(k+1)`-clique.
pub fn turan_edge_bound(n: u64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(domain("turán bound needs k ≥ 1"));
    }
    let n = n as f64;
    Ok((1.0 - 1.0 / k as f64) * n * n / 2.0)
}

fn check_pac(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(domain("ε must be positive"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(domain("δ must lie in (0, 1]"));
    }
    Ok(())
}

/// Samples needed to learn a transitive topology: `(log2 n + log2(1/δ)) / ε`.
/// The topology count is taken as `n` itself, constants dropped.
pub fn sample_complexity_transitive(n: u64, epsilon: f64, delta: f64) -> Result<f64> {
    check_pac(epsilon, delta)?;
    if n == 0 {
        return Err(domain("n must be positive"));
    }
    Ok(((n as f64).log2() + (1.0 / delta).log2()) / epsilon)
}

/// Samples needed to learn the topology of an island of `eta` noisy views:
/// `(η + log2(1/δ)) / ε²`.
pub fn sample_complexity_noisy(eta: u64, epsilon: f64, delta: f64) -> Result<f64> {
    check_pac(epsilon, delta)?;
    Ok((eta as f64 + (1.0 / delta).log2()) / (epsilon * epsilon))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::{num_pairs, pair_index};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Graph with scalar edge features `w[(i,j)]` (1-dim features, weight = |w|).
    pub(crate) fn weighted_graph(n: usize, w: impl Fn(usize, usize) -> f64) -> ViewGraph {
        let nodes = Array2::zeros((n, 1));
        let mut edges = Array2::zeros((num_pairs(n), 1));
        for (p, (i, j)) in pairs(n).enumerate() {
            edges[[p, 0]] = w(i, j);
        }
        ViewGraph::new(nodes, edges, None).unwrap()
    }

    pub(crate) fn random_weighted(n: usize, rng: &mut ChaCha8Rng) -> ViewGraph {
        let vals: Vec<f64> = (0..num_pairs(n)).map(|_| rng.random_range(0.0..1.0)).collect();
        weighted_graph(n, |i, j| vals[pair_index(n, i, j)])
    }

    /// Exhaustive maximal cliques over subsets of `nodes`, with `edge` as adjacency.
    pub(crate) fn brute_maximal_cliques(
        nodes: &[usize],
        edge: impl Fn(usize, usize) -> bool,
    ) -> Vec<BTreeSet<usize>> {
        let m = nodes.len();
        let is_clique = |mask: u32| {
            (0..m).all(|a| {
                (a + 1..m).all(|b| mask >> a & 1 == 0 || mask >> b & 1 == 0 || edge(nodes[a], nodes[b]))
            })
        };
        let mut out = Vec::new();
        for mask in 1u32..(1 << m) {
            if !is_clique(mask) {
                continue;
            }
            let maximal = (0..m).all(|c| mask >> c & 1 == 1 || !is_clique(mask | 1 << c));
            if maximal {
                out.push((0..m).filter(|&a| mask >> a & 1 == 1).map(|a| nodes[a]).collect());
            }
        }
        out.sort();
        out
    }

    pub(crate) fn brute_k_cliques(g: &ViewGraph, k: usize, gamma: f64) -> u64 {
        let n = g.num_views();
        let mut count = 0;
        for mask in 0u32..(1 << n) {
            if mask & 1 == 0 || mask.count_ones() as usize != k {
                continue;
            }
            let ok = (0..n).all(|a| {
                (a + 1..n).all(|b| {
                    mask >> a & 1 == 0 || mask >> b & 1 == 0 || crate::edge_weight(g, a, b).unwrap() > gamma
                })
            });
            count += ok as u64;
        }
        count
    }

    #[test]
    fn emergence_examples() {
        let g = weighted_graph(4, |i, j| if i == 0 { j as f64 * 0.1 } else { 1.0 });
        assert_eq!(emergence_score(&g, 1).unwrap(), 0.1);
        assert!(emergence_score(&g, 0).is_err());
        assert!(emergence_score(&g, 4).is_err());
        let z = weighted_graph(3, |_, _| 0.0);
        assert_eq!(emergence_score(&z, 2).unwrap(), 0.0);
        let eq = weighted_graph(4, |_, _| 0.4);
        assert_eq!(pairwise_emergence(&eq, 1, 3).unwrap(), 0.4);
        let zero_leg = weighted_graph(4, |i, j| if (i, j) == (1, 2) { 0.0 } else { 1.0 });
        assert_eq!(pairwise_emergence(&zero_leg, 1, 2).unwrap(), 0.0);
        assert!(pairwise_emergence(&eq, 2, 2).is_err());
    }

    #[test]
    fn pairwise_is_minimum_of_three_legs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_weighted(8, &mut rng);
        for i in 1..8 {
            for j in 1..8 {
                if i != j {
                    let w = |a, b| crate::edge_weight(&g, a, b).unwrap();
                    let brute = [w(i, 0), w(j, 0), w(i, j)].into_iter().fold(f64::INFINITY, f64::min);
                    assert_eq!(pairwise_emergence(&g, i, j).unwrap(), brute);
                }
            }
        }
    }

    #[test]
    fn triple_examples() {
        let all = weighted_graph(4, |_, _| 1.0);
        assert!(is_transitive_triple(&all, 1, 2, 3, 0.5).unwrap().holds());
        let two = weighted_graph(4, |i, j| if (i, j) == (1, 3) { 0.1 } else { 1.0 });
        let r = is_transitive_triple(&two, 1, 2, 3, 0.5).unwrap();
        assert!(!r.holds());
        assert_eq!(r.rotations, [false, true, true]);
        let one = weighted_graph(4, |i, j| if (i, j) == (1, 2) || i == 0 { 1.0 } else { 0.1 });
        assert!(is_transitive_triple(&one, 1, 2, 3, 0.5).unwrap().holds());
        assert!(is_transitive_triple(&all, 1, 1, 3, 0.5).is_err());
    }

    #[test]
    fn quantile_gamma() {
        assert_eq!(quantile(vec![4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
        let g = weighted_graph(3, |i, j| (i + j) as f64);
        assert_eq!(Gamma::Quantile(0.5).resolve(&g).unwrap(), 2.0);
        assert!(Gamma::Quantile(1.0).validate().is_err());
        assert!(Gamma::Quantile(0.0).validate().is_err());
        assert_eq!(Gamma::Absolute(0.3).resolve(&g).unwrap(), 0.3);
    }

    #[test]
    fn complete_graph_is_one_continent() {
        let g = weighted_graph(6, |_, _| 1.0);
        let cfg = TransitivityConfig {
            gamma: Gamma::Absolute(0.5),
        };
        let r = find_continents(&g, &cfg).unwrap();
        assert_eq!(r.continents, vec![(1..6).collect::<BTreeSet<_>>()]);
        assert!(r.islands.is_empty());
        assert_eq!(r.cut_edge_mass, 0.0);
    }

    #[test]
    fn bipartition_gives_two_continents() {
        let g = weighted_graph(7, |i, j| {
            if i == 0 || (i <= 3) == (j <= 3) {
                1.0
            } else {
                0.0
            }
        });
        let cfg = TransitivityConfig {
            gamma: Gamma::Absolute(0.5),
        };
        let r = find_continents(&g, &cfg).unwrap();
        assert_eq!(r.continents.len(), 2);
        let a: BTreeSet<usize> = [1, 2, 3].into();
        let b: BTreeSet<usize> = [4, 5, 6].into();
        assert_eq!(r.continents, vec![a.clone(), b.clone()]);
        assert_eq!(cut_edge_mass(&g, &a, &b).unwrap(), 0.0);
        assert_eq!(r.assignment.len(), 2);
    }

    #[test]
    fn islands_collect_isolated_nodes() {
        // 1-2-3 strong, 4 and 5 weakly tied to each other, 6 tied to nobody
        let g = weighted_graph(7, |i, j| match (i, j) {
            (0, _) => 1.0,
            (a, b) if a <= 3 && b <= 3 => 1.0,
            (4, 5) => 0.2,
            (a, 6) if a >= 1 => 0.0,
            _ => 0.1,
        });
        let cfg = TransitivityConfig {
            gamma: Gamma::Absolute(0.5),
        };
        let r = find_continents(&g, &cfg).unwrap();
        assert_eq!(r.continents, vec![BTreeSet::from([1, 2, 3])]);
        assert_eq!(r.islands, vec![BTreeSet::from([4, 5]), BTreeSet::from([6])]);
        assert!((r.cut_edge_mass - 0.6).abs() < 1e-12);
        let covered: BTreeSet<usize> = r.assignment.iter().flatten().copied().collect();
        assert_eq!(covered, (1..7).collect());
        assert!(r.to_table().starts_with("kind,index,nodes\ncontinent,0,1 2 3\n"));
    }

    #[test]
    fn clique_enumeration_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.random_range(2..=10);
            let g = random_weighted(n, &mut rng);
            let gamma = rng.random_range(0.0..0.8);
            let cfg = TransitivityConfig {
                gamma: Gamma::Absolute(gamma),
            };
            let r = find_continents(&g, &cfg).unwrap();
            let locals: Vec<usize> = (1..n).collect();
            let expected: Vec<BTreeSet<usize>> =
                brute_maximal_cliques(&locals, |a, b| pairwise_unchecked(&g, a, b) > gamma)
                    .into_iter()
                    .filter(|c| c.len() >= 2)
                    .collect();
            assert_eq!(r.continents, expected);
            for k in 1..=n {
                assert_eq!(
                    count_k_cliques_with_global(&g, k, gamma).unwrap(),
                    brute_k_cliques(&g, k, gamma)
                );
            }
        }
    }

    #[test]
    fn k_clique_examples() {
        let g = weighted_graph(7, |_, _| 1.0);
        assert_eq!(count_k_cliques_with_global(&g, 1, 0.5).unwrap(), 1);
        assert_eq!(count_k_cliques_with_global(&g, 3, 0.5).unwrap(), 15);
        assert_eq!(count_k_cliques_with_global(&g, 7, 0.5).unwrap(), 1);
        assert_eq!(count_k_cliques_with_global(&g, 8, 0.5).unwrap(), 0);
    }

    #[test]
    fn clique_guard() {
        let g = weighted_graph(66, |_, _| 1.0);
        assert!(count_k_cliques_with_global(&g, 2, 0.5).is_err());
        assert!(find_continents(&g, &TransitivityConfig::default()).is_err());
        let ok = weighted_graph(65, |_, _| 1.0);
        assert_eq!(count_k_cliques_with_global(&ok, 2, 0.5).unwrap(), 64);
    }

    #[test]
    fn maximal_cliques_rejects_bad_adjacency() {
        assert!(maximal_cliques(&[0b10, 0b00]).is_err());
        assert!(maximal_cliques(&[0b01]).is_err());
        assert_eq!(maximal_cliques(&[]).unwrap(), Vec::<u64>::new());
        assert_eq!(maximal_cliques(&[0b10, 0b01]).unwrap(), vec![0b11]);
    }

    #[test]
    fn calculators() {
        assert_eq!(topology_count(2), BigUint::from(2u8));
        assert_eq!(topology_count(4), BigUint::from(16u8));
        assert_eq!(topology_count(6), BigUint::from(512u16));
        assert_eq!(topology_count(3), BigUint::from(4u8));
        assert_eq!(turan_edge_bound(6, 3).unwrap(), 12.0);
        assert_eq!(turan_edge_bound(6, 1).unwrap(), 0.0);
        assert_eq!(turan_edge_bound(10, 5).unwrap(), 40.0);
        assert!(turan_edge_bound(4, 0).is_err());
        assert_eq!(sample_complexity_transitive(8, 1.0, 0.5).unwrap(), 4.0);
        assert_eq!(sample_complexity_transitive(1024, 0.1, 2f64.powi(-10)).unwrap(), 200.0);
        assert!(sample_complexity_transitive(8, 1e300, 0.5).unwrap() < 1e-299);
        assert_eq!(sample_complexity_noisy(8, 1.0, 0.5).unwrap(), 9.0);
        assert!((sample_complexity_noisy(8, 0.1, 0.5).unwrap() - 900.0).abs() < 1e-9);
        assert!(sample_complexity_noisy(8, 0.0, 0.5).is_err());
        assert!(sample_complexity_noisy(8, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clique_count_is_monotone_in_gamma(seed in 0u64..500, k in 1usize..5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_weighted(8, &mut rng);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(count_k_cliques_with_global(&g, k, hi).unwrap() <= count_k_cliques_with_global(&g, k, lo).unwrap());
        }

        #[test]
        fn disjoint_cliques_are_recovered(sizes in proptest::collection::vec(2usize..4, 1..4)) {
            let mut group = vec![0];
            for (c, &s) in sizes.iter().enumerate() {
                group.extend(std::iter::repeat(c + 1).take(s));
            }
            let n = group.len();
            let g = weighted_graph(n, |i, j| if i == 0 || group[i] == group[j] { 1.0 } else { 0.0 });
            let r = find_continents(&g, &TransitivityConfig { gamma: Gamma::Absolute(0.5) }).unwrap();
            let expected: Vec<BTreeSet<usize>> = (1..=sizes.len())
                .map(|c| (1..n).filter(|&i| group[i] == c).collect())
                .collect();
            prop_assert_eq!(r.continents, expected);
        }

        #[test]
        fn sample_ratio_grows_as_inverse_epsilon(eps in 0.01f64..1.0) {
            let r1 = sample_complexity_noisy(8, eps, 0.5).unwrap() / sample_complexity_transitive(8, eps, 0.5).unwrap();
            let r2 = sample_complexity_noisy(8, eps / 2.0, 0.5).unwrap() / sample_complexity_transitive(8, eps / 2.0, 0.5).unwrap();
            prop_assert!((r2 / r1 - 2.0).abs() < 1e-9);
        }
    }
}
