//! Property tests for structural invariants: clique-state coding, transition
//! stochasticity, evidence-shift invariance, aggregation identities, and
//! round-trip topology.

use std::collections::HashMap;

use proptest::prelude::*;

use bgcr::dataset::{AlignedDataset, Covariates, OtuTable};
use bgcr::graph_prior::{all_transitions, clique, ArParams, KappaMode};
use bgcr::message_passing::{collect, distribute, summarize};
use bgcr::node_model::{bcr_pmap, NodeEvidence};
use bgcr::phylo::PhyloTree;
use bgcr::simulate::random_tree;

fn kappa_mode(flag: bool) -> KappaMode {
    if flag {
        KappaMode::EqualTau
    } else {
        KappaMode::Zero
    }
}

proptest! {
    #[test]
    fn clique_state_roundtrip(i in 0usize..8) {
        let (s, l, r) = clique::decode(i);
        prop_assert!(s <= 1 && l <= 1 && r <= 1);
        prop_assert_eq!(clique::encode(s, l, r), i);
    }

    #[test]
    fn transition_rows_stay_stochastic(
        alpha in -6.0..2.0f64,
        tau in 0.0..8.0f64,
        equal_tau in any::<bool>(),
        seed in 0u64..200,
    ) {
        let tree = random_tree(7, seed);
        let params = ArParams::new(alpha, tau, kappa_mode(equal_tau));
        let (_, transitions) = all_transitions(&tree, &params).unwrap();
        for node in tree.internal_nodes() {
            for row in &transitions[node] {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn evidence_shift_leaves_posteriors_alone(
        shift in -30.0..30.0f64,
        alpha in -4.0..1.0f64,
        tau in 0.0..5.0f64,
        seed in 0u64..100,
    ) {
        let tree = random_tree(6, seed);
        let mut evidence = vec![NodeEvidence::NEUTRAL; tree.node_count()];
        let mut stream = seed.wrapping_mul(0x9e3779b97f4a7c15);
        let mut next = || {
            stream = stream.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((stream >> 33) as f64 / (1u64 << 31) as f64 - 1.0) * 10.0
        };
        for node in tree.internal_nodes() {
            evidence[node] = NodeEvidence { log_m0: next(), log_m1: next() };
        }
        let params = ArParams::new(alpha, tau, KappaMode::Zero);
        let (_, transitions) = all_transitions(&tree, &params).unwrap();

        let run = |ev: &[NodeEvidence]| {
            let collected = collect(&tree, ev, &transitions).unwrap();
            let posterior = distribute(&tree, ev, &transitions, &collected);
            (collected.log_marginal, summarize(&tree, &posterior))
        };
        let (lm_base, base) = run(&evidence);

        let target = tree.internal_nodes()[0];
        let mut shifted = evidence.clone();
        shifted[target] = NodeEvidence {
            log_m0: shifted[target].log_m0 + shift,
            log_m1: shifted[target].log_m1 + shift,
        };
        let (lm_shift, after) = run(&shifted);

        prop_assert!((lm_shift - lm_base - shift).abs() < 1e-9);
        prop_assert!((after.pjap - base.pjap).abs() < 1e-10);
        for node in tree.internal_nodes() {
            prop_assert!((after.pmaps[node] - base.pmaps[node]).abs() < 1e-10);
        }
    }

    #[test]
    fn local_test_posterior_is_within_bounds_and_monotone(
        log_m0 in -50.0..50.0f64,
        log_m1 in -50.0..50.0f64,
        rho in 0.0..=1.0f64,
        bump in 0.01..5.0f64,
    ) {
        let p = bcr_pmap(log_m0, log_m1, rho);
        prop_assert!((0.0..=1.0).contains(&p));
        let stronger = bcr_pmap(log_m0, log_m1 + bump, rho);
        prop_assert!(stronger >= p);
    }

    #[test]
    fn aggregation_children_sum_and_order_invariance(
        seed in 0u64..100,
        n_samples in 1usize..8,
    ) {
        let tree = random_tree(5, seed);
        let mut stream = seed.wrapping_add(17);
        let mut next = || {
            stream = stream.wrapping_mul(6364136223846793005).wrapping_add(1);
            (stream >> 40) % 500
        };
        let counts: Vec<Vec<u64>> = (0..n_samples)
            .map(|_| (0..5).map(|_| next()).collect())
            .collect();
        let ids: Vec<String> = (0..n_samples).map(|i| format!("s{i}")).collect();
        let names: Vec<String> = tree
            .leaves()
            .iter()
            .map(|&l| tree.leaf_name(l).unwrap().to_string())
            .collect();
        let table = OtuTable::from_parts(ids.clone(), names.clone(), counts.clone()).unwrap();
        let groups: Vec<u8> = (0..n_samples).map(|i| (i % 2) as u8).collect();
        let covs = Covariates::from_parts(ids.clone(), vec![], vec![], groups.clone()).unwrap();
        let data = AlignedDataset::aggregate(&table, &tree, &covs).unwrap();

        for node in tree.internal_nodes() {
            let (l, r) = tree.children(node).unwrap();
            for s in 0..n_samples {
                prop_assert_eq!(
                    data.node_counts[node][s],
                    data.node_counts[l][s] + data.node_counts[r][s]
                );
                prop_assert!(data.node_counts[l][s] <= data.node_counts[node][s]);
            }
        }
        for s in 0..n_samples {
            prop_assert_eq!(data.node_counts[tree.root()][s], table.total(s));
        }

        // Reversing the sample order permutes per-node columns consistently.
        let rev = |v: &[u64]| v.iter().rev().copied().collect::<Vec<_>>();
        let table_rev = OtuTable::from_parts(
            ids.iter().rev().cloned().collect(),
            names,
            counts.iter().rev().cloned().collect(),
        )
        .unwrap();
        let covs_rev = Covariates::from_parts(
            ids.iter().rev().cloned().collect(),
            vec![],
            vec![],
            groups.iter().rev().copied().collect(),
        )
        .unwrap();
        let data_rev = AlignedDataset::aggregate(&table_rev, &tree, &covs_rev).unwrap();
        for node in 0..tree.node_count() {
            prop_assert_eq!(&data_rev.node_counts[node], &rev(&data.node_counts[node]));
        }
    }

    #[test]
    fn annotated_roundtrip_keeps_topology(seed in 0u64..300, k in 2usize..24) {
        let tree = random_tree(k, seed);
        let values: HashMap<_, _> = tree
            .internal_nodes()
            .into_iter()
            .map(|id| (id, (id as f64 * 0.37) % 1.0))
            .collect();
        let annotated = tree.to_annotated_newick(&values).unwrap();
        let reparsed = PhyloTree::parse_newick(&annotated).unwrap();
        prop_assert_eq!(reparsed.to_newick(), tree.to_newick());
        prop_assert_eq!(reparsed.leaf_count(), k);
        prop_assert_eq!(reparsed.internal_count(), k - 1);
    }
}
