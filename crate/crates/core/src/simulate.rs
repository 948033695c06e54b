//! Synthetic data generation: random full-binary trees, top-down
//! beta-binomial count generation, and the perturbation scenarios used for
//! calibration and power studies.
//!
//! All randomness flows through seeded ChaCha12 generators, so fixtures are
//! reproducible across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Binomial, Distribution};
use thiserror::Error;

use crate::dataset::{Covariates, DatasetError, OtuTable};
use crate::phylo::{NodeId, PhyloTree};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown target OTU `{0}`")]
    UnknownTarget(String),
    #[error("scenario needs {needed} target OTUs, got {got}")]
    WrongTargetCount { needed: usize, got: usize },
    #[error("no chain of three nested internal nodes with leaf children found")]
    NoChain,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Mean split fractions for the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    /// Same left-child fraction at every internal node.
    Constant(f64),
    /// Explicit per-node fractions, indexed by node id.
    PerNode(Vec<f64>),
    /// Drawn once per node, uniformly in `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

/// Distribution of per-sample total counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TotalsSpec {
    Fixed(u64),
    /// Uniform on `[lo, hi]` inclusive.
    Uniform { lo: u64, hi: u64 },
}

/// Which perturbation is applied on top of the base data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// No perturbation: a pure group split of exchangeable samples.
    Null,
    /// One OTU scaled in the second group.
    SingleOtu,
    /// Eight OTUs scaled in the second group.
    MultiOtu,
    /// Three leaves under a chain of nested nodes scaled by graded fractions
    /// of `p` in the second group.
    Chain,
    /// One OTU scaled for every sample with an unbalanced binary confounder;
    /// groups are assigned 4:1 / 1:4 against the confounder.
    Confounder,
}

/// Full description of one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Percentage increase applied to targeted counts.
    pub p_percent: f64,
    /// Explicit target leaf names; when empty, targets are drawn by seed
    /// (middle-80% abundance band for single-OTU targets).
    pub targets: Vec<String>,
    pub n0: usize,
    pub n1: usize,
    pub nu: f64,
    pub theta: ThetaSpec,
    pub totals: TotalsSpec,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n0 == 0 || self.n1 == 0 {
            return Err(SimError::Invalid("both groups need samples".into()));
        }
        if !(self.nu > 0.0) {
            return Err(SimError::Invalid("dispersion must be positive".into()));
        }
        if self.p_percent < 0.0 {
            return Err(SimError::Invalid(
                "percentage increase must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Unperturbed draw from the generative model, groups already assigned.
#[derive(Debug, Clone)]
pub struct SimulatedBase {
    pub table: OtuTable,
    pub groups: Vec<u8>,
    /// Split fraction used at each internal node (node-id indexed).
    pub theta: Vec<f64>,
}

/// A base draw with a scenario applied.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub table: OtuTable,
    pub groups: Vec<u8>,
    /// Binary confounder column, when the scenario produces one.
    pub confounder: Option<Vec<u8>>,
    /// `(otu name, scale factor)` of every modified column.
    pub modified: Vec<(String, f64)>,
}

impl SimulatedDataset {
    /// In-memory covariate table for this dataset; `adjust_confounder`
    /// exposes the confounder as an adjustment column when present.
    pub fn covariates(&self, adjust_confounder: bool) -> Result<Covariates, DatasetError> {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        if adjust_confounder {
            if let Some(conf) = &self.confounder {
                names.push("confounder".to_string());
                columns.push(conf.iter().map(|&v| v as f64).collect());
            }
        }
        Covariates::from_parts(
            self.table.sample_ids().to_vec(),
            names,
            columns,
            self.groups.clone(),
        )
    }

    /// Covariate CSV matching what the loader reads back.
    pub fn covariates_csv(&self) -> String {
        let mut out = String::from("sample,group");
        if self.confounder.is_some() {
            out.push_str(",confounder");
        }
        out.push('\n');
        for (i, id) in self.table.sample_ids().iter().enumerate() {
            out.push_str(id);
            out.push(',');
            out.push_str(if self.groups[i] == 0 { "g0" } else { "g1" });
            if let Some(conf) = &self.confounder {
                out.push(',');
                out.push_str(&conf[i].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Random full-binary tree over `k` leaves named `otu1..otuK`, built by
/// repeatedly merging uniformly chosen subtrees.
pub fn random_tree(k: usize, seed: u64) -> PhyloTree {
    assert!(k >= 2, "a tree needs at least two leaves");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut clades: Vec<String> = (1..=k).map(|i| format!("otu{i}")).collect();
    while clades.len() > 1 {
        let i = rng.gen_range(0..clades.len());
        let a = clades.swap_remove(i);
        let j = rng.gen_range(0..clades.len());
        let b = clades.swap_remove(j);
        clades.push(format!("({a},{b})"));
    }
    PhyloTree::parse_newick(&format!("{};", clades[0])).expect("generated newick is valid")
}

fn resolve_theta(tree: &PhyloTree, spec: &ThetaSpec, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut theta = vec![0.0; tree.node_count()];
    for node in tree.internal_nodes() {
        theta[node] = match spec {
            ThetaSpec::Constant(t) => *t,
            ThetaSpec::PerNode(values) => values[node],
            ThetaSpec::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
        };
    }
    theta
}

/// Draw a base table: total counts at the root, then recursive beta-binomial
/// splits down the tree. Group labels are attached by index (samples are
/// exchangeable under the base model).
pub fn generate_base(tree: &PhyloTree, spec: &ScenarioSpec) -> Result<SimulatedBase, SimError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let theta = resolve_theta(tree, &spec.theta, &mut rng);
    for node in tree.internal_nodes() {
        if !(theta[node] > 0.0 && theta[node] < 1.0) {
            return Err(SimError::Invalid(format!(
                "split fraction {} at node {node} outside (0, 1)",
                theta[node]
            )));
        }
    }
    let n = spec.n0 + spec.n1;
    let top_down: Vec<NodeId> = {
        let mut order = tree.internal_nodes_by_depth();
        order.reverse();
        order
    };
    let leaves = tree.leaves();
    let mut counts = vec![vec![0u64; leaves.len()]; n];
    let mut node_counts = vec![0u64; tree.node_count()];
    for sample in 0..n {
        let total = match spec.totals {
            TotalsSpec::Fixed(t) => t,
            TotalsSpec::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        };
        node_counts[tree.root()] = total;
        for &node in &top_down {
            let (l, r) = tree.children(node).expect("internal node");
            let at_node = node_counts[node];
            if at_node == 0 {
                node_counts[l] = 0;
                node_counts[r] = 0;
                continue;
            }
            let t = theta[node];
            let split = Beta::new(t * spec.nu, (1.0 - t) * spec.nu)
                .expect("valid beta parameters")
                .sample(&mut rng)
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            let left = Binomial::new(at_node, split)
                .expect("valid binomial parameters")
                .sample(&mut rng);
            node_counts[l] = left;
            node_counts[r] = at_node - left;
        }
        for (col, &leaf) in leaves.iter().enumerate() {
            counts[sample][col] = node_counts[leaf];
        }
    }
    let sample_ids = (0..n).map(|i| format!("s{:03}", i + 1)).collect();
    let otu_names = leaves
        .iter()
        .map(|&leaf| tree.leaf_name(leaf).unwrap().to_string())
        .collect();
    let table = OtuTable::from_parts(sample_ids, otu_names, counts)?;
    let mut groups = vec![0u8; spec.n0];
    groups.extend(std::iter::repeat(1u8).take(spec.n1));
    Ok(SimulatedBase {
        table,
        groups,
        theta,
    })
}

/// OTU column indices whose sample mean falls in the middle 80% band.
fn middle_band(table: &OtuTable) -> Vec<usize> {
    let k = table.n_otus();
    let n = table.n_samples() as f64;
    let mut means: Vec<(usize, f64)> = (0..k)
        .map(|otu| {
            let total: u64 = (0..table.n_samples()).map(|s| table.count(s, otu)).sum();
            (otu, total as f64 / n)
        })
        .collect();
    means.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let lo = (k as f64 * 0.1).ceil() as usize;
    let hi = (k as f64 * 0.9).floor() as usize;
    let mut band: Vec<usize> = means[lo.min(k)..hi.min(k)].iter().map(|&(i, _)| i).collect();
    if band.is_empty() {
        band = (0..k).collect();
    }
    band.sort_unstable();
    band
}

fn scale_count(count: u64, factor: f64) -> u64 {
    // Round half-up after percentage scaling.
    (count as f64 * factor + 0.5).floor() as u64
}

fn otu_index(table: &OtuTable, name: &str) -> Result<usize, SimError> {
    table
        .otu_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| SimError::UnknownTarget(name.to_string()))
}

/// Locate a chain of three nested internal nodes, each contributing one
/// descendant leaf, and return those leaves ordered shallowest to deepest.
/// The deepest qualifying chain is chosen, keeping the perturbation local.
pub fn chain_targets(tree: &PhyloTree) -> Result<[String; 3], SimError> {
    for &top in &tree.internal_nodes_by_depth() {
        let mut chain_leaves = Vec::new();
        let mut node = top;
        while chain_leaves.len() < 3 {
            let (l, r) = tree.children(node).expect("internal node");
            match (tree.is_leaf(l), tree.is_leaf(r)) {
                (true, true) => {
                    chain_leaves.push(tree.leaf_name(l).unwrap().to_string());
                    break;
                }
                (true, false) => {
                    chain_leaves.push(tree.leaf_name(l).unwrap().to_string());
                    node = r;
                }
                (false, true) => {
                    chain_leaves.push(tree.leaf_name(r).unwrap().to_string());
                    node = l;
                }
                (false, false) => break,
            }
        }
        if chain_leaves.len() >= 3 {
            return Ok([
                chain_leaves[0].clone(),
                chain_leaves[1].clone(),
                chain_leaves[2].clone(),
            ]);
        }
    }
    Err(SimError::NoChain)
}

/// Apply the scenario's perturbation to a base draw.
///
/// Scaled counts are multiplied by `1 + p/100` and rounded half-up; only
/// targeted columns change. Target selection (when not explicit) uses a
/// generator seeded separately from the base draw.
pub fn apply_scenario(
    base: &SimulatedBase,
    tree: &PhyloTree,
    spec: &ScenarioSpec,
) -> Result<SimulatedDataset, SimError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let table = &base.table;
    let n = table.n_samples();
    let factor = 1.0 + spec.p_percent / 100.0;

    let mut counts: Vec<Vec<u64>> = (0..n).map(|s| table.row(s).to_vec()).collect();
    let mut modified = Vec::new();
    let mut confounder = None;

    let pick_from_band = |rng: &mut ChaCha12Rng| -> usize {
        let band = middle_band(table);
        band[rng.gen_range(0..band.len())]
    };

    match spec.scenario {
        Scenario::Null => {}
        Scenario::SingleOtu => {
            let otu = match spec.targets.as_slice() {
                [] => pick_from_band(&mut rng),
                [name] => otu_index(table, name)?,
                other => {
                    return Err(SimError::WrongTargetCount {
                        needed: 1,
                        got: other.len(),
                    })
                }
            };
            for (s, row) in counts.iter_mut().enumerate() {
                if base.groups[s] == 1 {
                    row[otu] = scale_count(row[otu], factor);
                }
            }
            modified.push((table.otu_names()[otu].clone(), factor));
        }
        Scenario::MultiOtu => {
            const N_TARGETS: usize = 8;
            let targets: Vec<usize> = if spec.targets.is_empty() {
                let mut all: Vec<usize> = (0..table.n_otus()).collect();
                let mut chosen = Vec::with_capacity(N_TARGETS.min(all.len()));
                for _ in 0..N_TARGETS.min(all.len()) {
                    chosen.push(all.swap_remove(rng.gen_range(0..all.len())));
                }
                chosen.sort_unstable();
                chosen
            } else {
                spec.targets
                    .iter()
                    .map(|name| otu_index(table, name))
                    .collect::<Result<_, _>>()?
            };
            for &otu in &targets {
                for (s, row) in counts.iter_mut().enumerate() {
                    if base.groups[s] == 1 {
                        row[otu] = scale_count(row[otu], factor);
                    }
                }
                modified.push((table.otu_names()[otu].clone(), factor));
            }
        }
        Scenario::Chain => {
            let names: [String; 3] = match spec.targets.as_slice() {
                [] => chain_targets(tree)?,
                [a, b, c] => [a.clone(), b.clone(), c.clone()],
                other => {
                    return Err(SimError::WrongTargetCount {
                        needed: 3,
                        got: other.len(),
                    })
                }
            };
            // Graded boosts: 0.33p, 0.67p, p from shallowest to deepest.
            let fractions = [0.33, 0.67, 1.0];
            for (name, frac) in names.iter().zip(fractions) {
                let otu = otu_index(table, name)?;
                let scale = 1.0 + frac * spec.p_percent / 100.0;
                for (s, row) in counts.iter_mut().enumerate() {
                    if base.groups[s] == 1 {
                        row[otu] = scale_count(row[otu], scale);
                    }
                }
                modified.push((name.clone(), scale));
            }
        }
        Scenario::Confounder => {
            let otu = match spec.targets.as_slice() {
                [] => pick_from_band(&mut rng),
                [name] => otu_index(table, name)?,
                other => {
                    return Err(SimError::WrongTargetCount {
                        needed: 1,
                        got: other.len(),
                    })
                }
            };
            // 4:1 / 1:4 confounder-by-group split.
            let m0 = ((spec.n0 as f64) * 0.8).round() as usize;
            let m1 = ((spec.n1 as f64) * 0.2).round() as usize;
            let mut flags = vec![0u8; n];
            for flag in flags.iter_mut().take(m0) {
                *flag = 1;
            }
            for flag in flags.iter_mut().skip(spec.n0).take(m1) {
                *flag = 1;
            }
            for (s, row) in counts.iter_mut().enumerate() {
                if flags[s] == 1 {
                    row[otu] = scale_count(row[otu], factor);
                }
            }
            modified.push((table.otu_names()[otu].clone(), factor));
            confounder = Some(flags);
        }
    }

    let table = OtuTable::from_parts(
        table.sample_ids().to_vec(),
        table.otu_names().to_vec(),
        counts,
    )?;
    Ok(SimulatedDataset {
        table,
        groups: base.groups.clone(),
        confounder,
        modified,
    })
}

/// Convenience wrapper: base draw plus scenario application.
pub fn simulate_dataset(
    tree: &PhyloTree,
    spec: &ScenarioSpec,
) -> Result<SimulatedDataset, SimError> {
    let base = generate_base(tree, spec)?;
    apply_scenario(&base, tree, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scenario: Scenario, p: f64, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            scenario,
            p_percent: p,
            targets: Vec::new(),
            n0: 10,
            n1: 10,
            nu: 20.0,
            theta: ThetaSpec::Uniform { lo: 0.3, hi: 0.7 },
            totals: TotalsSpec::Fixed(2000),
            seed,
        }
    }

    #[test]
    fn random_trees_are_full_binary_and_roundtrip() {
        for seed in 0..5 {
            for k in [2, 3, 8, 17, 32] {
                let tree = random_tree(k, seed);
                assert_eq!(tree.leaf_count(), k);
                assert_eq!(tree.internal_count(), k - 1);
                let reparsed = PhyloTree::parse_newick(&tree.to_newick()).unwrap();
                assert_eq!(reparsed.to_newick(), tree.to_newick());
            }
        }
    }

    #[test]
    fn base_generation_is_seed_deterministic() {
        let tree = random_tree(12, 3);
        let s = spec(Scenario::Null, 0.0, 99);
        let a = generate_base(&tree, &s).unwrap();
        let b = generate_base(&tree, &s).unwrap();
        assert_eq!(a.table, b.table);
        let c = generate_base(&tree, &ScenarioSpec { seed: 100, ..s }).unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn leaf_counts_sum_to_totals() {
        let tree = random_tree(16, 4);
        let s = ScenarioSpec {
            totals: TotalsSpec::Uniform { lo: 500, hi: 1500 },
            ..spec(Scenario::Null, 0.0, 5)
        };
        let base = generate_base(&tree, &s).unwrap();
        for sample in 0..base.table.n_samples() {
            let total = base.table.total(sample);
            assert!((500..=1500).contains(&total));
        }
    }

    #[test]
    fn huge_dispersion_concentrates_splits() {
        let tree = PhyloTree::parse_newick("((A,B),(C,D));").unwrap();
        let s = ScenarioSpec {
            nu: 1e9,
            n0: 25,
            n1: 25,
            theta: ThetaSpec::Constant(0.37),
            totals: TotalsSpec::Fixed(4_000_000),
            ..spec(Scenario::Null, 0.0, 6)
        };
        let base = generate_base(&tree, &s).unwrap();
        let root = tree.root();
        let (left, _) = tree.children(root).unwrap();
        // Observed left fractions at the root across samples.
        let fractions: Vec<f64> = (0..base.table.n_samples())
            .map(|sample| {
                let leaves = tree.leaves();
                let mut left_total = 0u64;
                let mut total = 0u64;
                for (col, &leaf) in leaves.iter().enumerate() {
                    let c = base.table.count(sample, col);
                    total += c;
                    let mut node = leaf;
                    let mut under_left = false;
                    while let Some(p) = tree.parent(node) {
                        if p == root {
                            under_left = node == left;
                            break;
                        }
                        node = p;
                    }
                    if under_left {
                        left_total += c;
                    }
                }
                left_total as f64 / total as f64
            })
            .collect();
        let n = fractions.len() as f64;
        let mean = fractions.iter().sum::<f64>() / n;
        let sd = (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 0.37).abs() < 1e-3, "mean split {mean}");
        assert!(sd < 1e-3, "split sd {sd}");
    }

    #[test]
    fn fair_splits_give_uniform_leaf_means() {
        // Balanced tree: every leaf sits at depth 3, so fair splits put
        // N / K at each leaf in expectation.
        let tree =
            PhyloTree::parse_newick("(((otu1,otu2),(otu3,otu4)),((otu5,otu6),(otu7,otu8)));")
                .unwrap();
        let s = ScenarioSpec {
            theta: ThetaSpec::Constant(0.5),
            totals: TotalsSpec::Fixed(80_000),
            n0: 40,
            n1: 40,
            nu: 1e6,
            ..spec(Scenario::Null, 0.0, 8)
        };
        let base = generate_base(&tree, &s).unwrap();
        let n = base.table.n_samples();
        let expect = 80_000.0 / 8.0;
        for otu in 0..8 {
            let values: Vec<f64> = (0..n)
                .map(|sample| base.table.count(sample, otu) as f64)
                .collect();
            let mean = values.iter().sum::<f64>() / n as f64;
            let var =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - expect).abs() < 3.0 * se,
                "otu {otu}: mean {mean} vs {expect} (se {se})"
            );
        }
    }

    #[test]
    fn null_scenario_leaves_base_untouched() {
        let tree = random_tree(10, 9);
        let s = spec(Scenario::Null, 50.0, 10);
        let base = generate_base(&tree, &s).unwrap();
        let ds = apply_scenario(&base, &tree, &s).unwrap();
        assert_eq!(ds.table, base.table);
        assert!(ds.modified.is_empty());
        assert!(ds.confounder.is_none());
    }

    #[test]
    fn zero_percent_changes_nothing() {
        let tree = random_tree(10, 11);
        let s = spec(Scenario::SingleOtu, 0.0, 12);
        let base = generate_base(&tree, &s).unwrap();
        let ds = apply_scenario(&base, &tree, &s).unwrap();
        assert_eq!(ds.table, base.table);
    }

    #[test]
    fn single_otu_doubles_counts_in_second_group_only() {
        let tree = random_tree(6, 13);
        let mut s = spec(Scenario::SingleOtu, 100.0, 14);
        s.targets = vec!["otu3".into()];
        let base = generate_base(&tree, &s).unwrap();
        let ds = apply_scenario(&base, &tree, &s).unwrap();
        let otu = base
            .table
            .otu_names()
            .iter()
            .position(|n| n == "otu3")
            .unwrap();
        for sample in 0..base.table.n_samples() {
            for col in 0..base.table.n_otus() {
                let before = base.table.count(sample, col);
                let after = ds.table.count(sample, col);
                if col == otu && base.groups[sample] == 1 {
                    assert_eq!(after, before * 2);
                } else {
                    assert_eq!(after, before, "column {col} touched");
                }
            }
        }
    }

    #[test]
    fn chain_scales_are_graded() {
        let tree = PhyloTree::parse_newick("((((A,B),C),D),(E,F));").unwrap();
        let targets = chain_targets(&tree).unwrap();
        assert_eq!(targets, ["D".to_string(), "C".to_string(), "A".to_string()]);
        let mut s = spec(Scenario::Chain, 75.0, 15);
        s.targets = targets.to_vec();
        let base = generate_base(&tree, &s).unwrap();
        let ds = apply_scenario(&base, &tree, &s).unwrap();
        let scales: Vec<f64> = ds.modified.iter().map(|&(_, f)| f).collect();
        assert_eq!(scales, vec![1.2475, 1.5025, 1.75]);

        // Check the rounding rule on one targeted column.
        let otu = base
            .table
            .otu_names()
            .iter()
            .position(|n| n == "A")
            .unwrap();
        for sample in 0..base.table.n_samples() {
            if base.groups[sample] == 1 {
                let before = base.table.count(sample, otu);
                let expect = (before as f64 * 1.75 + 0.5).floor() as u64;
                assert_eq!(ds.table.count(sample, otu), expect);
            }
        }
    }

    #[test]
    fn confounder_scenario_has_unbalanced_assignment() {
        let tree = random_tree(12, 16);
        let s = ScenarioSpec {
            n0: 50,
            n1: 50,
            ..spec(Scenario::Confounder, 175.0, 17)
        };
        let base = generate_base(&tree, &s).unwrap();
        let ds = apply_scenario(&base, &tree, &s).unwrap();
        let flags = ds.confounder.as_ref().unwrap();
        let in_group0 = flags[..50].iter().filter(|&&f| f == 1).count();
        let in_group1 = flags[50..].iter().filter(|&&f| f == 1).count();
        assert_eq!(in_group0, 40);
        assert_eq!(in_group1, 10);
        assert_eq!(ds.modified.len(), 1);

        // Only flagged samples change, and only in the target column.
        let otu = otu_index(&base.table, &ds.modified[0].0).unwrap();
        for sample in 0..base.table.n_samples() {
            for col in 0..base.table.n_otus() {
                let before = base.table.count(sample, col);
                let after = ds.table.count(sample, col);
                if col == otu && flags[sample] == 1 {
                    assert_eq!(after, scale_count(before, 2.75));
                } else {
                    assert_eq!(after, before);
                }
            }
        }
    }

    #[test]
    fn unknown_target_is_rejected() {
        let tree = random_tree(4, 18);
        let mut s = spec(Scenario::SingleOtu, 100.0, 19);
        s.targets = vec!["nope".into()];
        let base = generate_base(&tree, &s).unwrap();
        assert!(matches!(
            apply_scenario(&base, &tree, &s),
            Err(SimError::UnknownTarget(_))
        ));
    }

    #[test]
    fn middle_band_excludes_extremes() {
        let counts: Vec<Vec<u64>> = vec![(0..10).map(|i| 1u64 << i).collect()];
        let table = OtuTable::from_parts(
            vec!["s1".into()],
            (0..10).map(|i| format!("o{i}")).collect(),
            counts,
        )
        .unwrap();
        let band = middle_band(&table);
        assert_eq!(band, vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }
}
