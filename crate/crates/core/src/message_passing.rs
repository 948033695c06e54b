//! Exact posterior inference on the clique tree: collection and distribution
//! passes, posterior summaries, empirical-Bayes fitting of the propagation
//! boost, and an exhaustive enumeration oracle for small trees.
//!
//! Messages are prior predictive probabilities of whole subtrees' data, i.e.
//! products over thousands of likelihood terms, so every sum here runs in
//! log space.

use thiserror::Error;

use crate::dataset::AlignedDataset;
use crate::graph_prior::{
    all_transitions, ar_conditional, clique, ArParams, CliqueMatrix, KappaMode, PriorError,
};
use crate::node_model::{compute_evidence, ModelError, NodeEvidence, PriorSpec};
use crate::phylo::{NodeId, PhyloTree};
use crate::special::{log_add_exp, log_sum_exp};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("collection message for node {node}, state {state} vanished")]
    ZeroMessage { node: NodeId, state: usize },
    #[error("tree has {internal} internal nodes; enumeration supports at most {max}")]
    TreeTooLarge { internal: usize, max: usize },
}

/// Collection-pass output: per-node log messages and the model log marginal
/// likelihood.
#[derive(Debug, Clone)]
pub struct Collected {
    /// `log_phi[node][i]`: log prior predictive of the subtree's data given
    /// the parent clique is in state `i`. Leaf slots stay at 0.
    pub log_phi: Vec<[f64; 8]>,
    /// `log phi_1(root)`: the marginal likelihood of all the data.
    pub log_marginal: f64,
}

/// Upward pass over the clique tree, children before parents.
pub fn collect(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    transitions: &[CliqueMatrix],
) -> Result<Collected, EngineError> {
    let mut log_phi = vec![[0.0_f64; 8]; tree.node_count()];
    for node in tree.internal_nodes_by_depth() {
        let (l, r) = tree.children(node).expect("internal node");
        let xi = &transitions[node];
        let log_m = [evidence[node].log_m0, evidence[node].log_m1];
        let mut message = [f64::NEG_INFINITY; 8];
        for (i, row) in xi.iter().enumerate() {
            let mut acc = f64::NEG_INFINITY;
            for (i_to, &weight) in row.iter().enumerate() {
                if weight == 0.0 {
                    continue;
                }
                let (s, _, _) = clique::decode(i_to);
                let term =
                    weight.ln() + log_m[s as usize] + log_phi[l][i_to] + log_phi[r][i_to];
                acc = log_add_exp(acc, term);
            }
            if acc == f64::NEG_INFINITY {
                return Err(EngineError::ZeroMessage { node, state: i });
            }
            message[i] = acc;
        }
        log_phi[node] = message;
    }
    let log_marginal = log_phi[tree.root()][0];
    Ok(Collected {
        log_phi,
        log_marginal,
    })
}

/// Downward pass: posterior transition matrices, row-normalized by the
/// collection messages.
pub fn distribute(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    transitions: &[CliqueMatrix],
    collected: &Collected,
) -> Vec<CliqueMatrix> {
    let mut posterior = vec![[[0.0_f64; 8]; 8]; tree.node_count()];
    for node in tree.internal_nodes() {
        let (l, r) = tree.children(node).expect("internal node");
        let xi = &transitions[node];
        let log_m = [evidence[node].log_m0, evidence[node].log_m1];
        for i in 0..8 {
            for i_to in 0..8 {
                let weight = xi[i][i_to];
                if weight == 0.0 {
                    continue;
                }
                let (s, _, _) = clique::decode(i_to);
                posterior[node][i][i_to] = (weight.ln()
                    + log_m[s as usize]
                    + collected.log_phi[l][i_to]
                    + collected.log_phi[r][i_to]
                    - collected.log_phi[node][i])
                    .exp();
            }
        }
    }
    posterior
}

/// Posterior summaries extracted from the distributed beliefs.
#[derive(Debug, Clone)]
pub struct Summary {
    /// Posterior marginal alternative probability per node id (leaves 0).
    pub pmaps: Vec<f64>,
    /// Posterior probability that at least one node carries a signal.
    pub pjap: f64,
    /// `ln P(all states off | data)`; `pjap = 1 - exp(log_null_prob)`.
    pub log_null_prob: f64,
    /// Posterior clique marginals per node id.
    pub clique_marginals: Vec<[f64; 8]>,
}

/// Top-down accumulation of clique marginals; the root's imaginary parent is
/// averaged out with uniform weight 1/8.
pub fn summarize(tree: &PhyloTree, posterior: &[CliqueMatrix]) -> Summary {
    let mut marginals = vec![[0.0_f64; 8]; tree.node_count()];
    let mut pmaps = vec![0.0_f64; tree.node_count()];
    let mut order = tree.internal_nodes_by_depth();
    order.reverse();
    for node in order {
        let mut m = [0.0_f64; 8];
        match tree.parent(node) {
            None => {
                for row in &posterior[node] {
                    for (i_to, &v) in row.iter().enumerate() {
                        m[i_to] += v / 8.0;
                    }
                }
            }
            Some(parent) => {
                let parent_marginal = &marginals[parent];
                for (i, row) in posterior[node].iter().enumerate() {
                    if parent_marginal[i] == 0.0 {
                        continue;
                    }
                    for (i_to, &v) in row.iter().enumerate() {
                        m[i_to] += parent_marginal[i] * v;
                    }
                }
            }
        }
        marginals[node] = m;
        pmaps[node] = (0..8)
            .filter(|&i| clique::decode(i).0 == 1)
            .map(|i| m[i])
            .sum();
    }
    let log_null_prob: f64 = tree
        .internal_nodes()
        .iter()
        .map(|&node| posterior[node][0][0].ln())
        .sum();
    Summary {
        pmaps,
        pjap: -log_null_prob.exp_m1(),
        log_null_prob,
        clique_marginals: marginals,
    }
}

/// How the propagation boost is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSetting {
    Fixed(f64),
    /// Maximize the data marginal likelihood over a grid on `[0, tau_max]`.
    EmpiricalBayes { tau_max: f64 },
}

/// Autoregressive prior configuration for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArConfig {
    pub alpha: f64,
    pub kappa_mode: KappaMode,
    pub tau: TauSetting,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PosteriorReport {
    pub pmaps: Vec<f64>,
    pub pjap: f64,
    pub log_null_prob: f64,
    pub log_marginal: f64,
    pub alpha: f64,
    pub tau: f64,
    pub kappa: f64,
    /// `(tau, log marginal)` pairs when tau was fit by empirical Bayes.
    pub tau_profile: Option<Vec<(f64, f64)>>,
    pub evidence: Vec<NodeEvidence>,
    pub warnings: Vec<String>,
}

const TAU_GRID_STEP: f64 = 0.05;

fn tau_grid(tau_max: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let tau = i as f64 * TAU_GRID_STEP;
        if tau > tau_max + 1e-9 {
            break;
        }
        grid.push(tau.min(tau_max));
        i += 1;
    }
    if *grid.last().unwrap() < tau_max - 1e-9 {
        grid.push(tau_max);
    }
    grid
}

fn log_marginal_at(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    alpha: f64,
    kappa_mode: KappaMode,
    tau: f64,
) -> Result<f64, EngineError> {
    let params = ArParams::new(alpha, tau, kappa_mode);
    let (_, transitions) = all_transitions(tree, &params)?;
    Ok(collect(tree, evidence, &transitions)?.log_marginal)
}

/// Empirical-Bayes choice of the propagation boost: grid search of the data
/// marginal likelihood, ties broken toward the smaller value.
///
/// Evidence does not depend on the graph prior, so the sweep reuses it.
pub fn fit_tau_eb(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    alpha: f64,
    kappa_mode: KappaMode,
    tau_max: f64,
) -> Result<(f64, Vec<(f64, f64)>), EngineError> {
    let mut profile = Vec::new();
    let mut best = (0.0, f64::NEG_INFINITY);
    for tau in tau_grid(tau_max) {
        let log_ml = log_marginal_at(tree, evidence, alpha, kappa_mode, tau)?;
        // Improvements below float noise count as ties, which go to the
        // smaller boost.
        let improved = best.1 == f64::NEG_INFINITY
            || log_ml > best.1 + 1e-10 * (1.0 + best.1.abs());
        if improved {
            best = (tau, log_ml);
        }
        profile.push((tau, log_ml));
    }
    Ok((best.0, profile))
}

/// Posterior over the propagation boost under a uniform prior on
/// `[0, tau_max]`, and the Bayes factor for "boost present".
#[derive(Debug, Clone)]
pub struct TauInference {
    /// `(tau, posterior density)` on the evaluation grid.
    pub posterior: Vec<(f64, f64)>,
    /// `ln BF10` comparing free boost against boost pinned at zero.
    pub log_bf10: f64,
    pub profile: Vec<(f64, f64)>,
}

pub fn tau_posterior_and_bf(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    alpha: f64,
    kappa_mode: KappaMode,
    tau_max: f64,
) -> Result<TauInference, EngineError> {
    let grid = tau_grid(tau_max);
    let mut profile = Vec::with_capacity(grid.len());
    for &tau in &grid {
        profile.push((tau, log_marginal_at(tree, evidence, alpha, kappa_mode, tau)?));
    }
    // Trapezoid rule for ln integral of exp(profile) over tau.
    let mut segments = Vec::with_capacity(profile.len() - 1);
    for pair in profile.windows(2) {
        let ((t0, f0), (t1, f1)) = (pair[0], pair[1]);
        segments.push(((t1 - t0) / 2.0).ln() + log_add_exp(f0, f1));
    }
    let log_integral = log_sum_exp(&segments);
    let log_bf10 = log_integral - tau_max.ln() - profile[0].1;
    let posterior = profile
        .iter()
        .map(|&(tau, f)| (tau, (f - log_integral).exp()))
        .collect();
    Ok(TauInference {
        posterior,
        log_bf10,
        profile,
    })
}

/// Full inference from already-computed evidence.
pub fn run_with_evidence(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    ar: &ArConfig,
    mut warnings: Vec<String>,
) -> Result<PosteriorReport, EngineError> {
    let (tau, profile) = match ar.tau {
        TauSetting::Fixed(tau) => (tau, None),
        TauSetting::EmpiricalBayes { tau_max } => {
            let (tau, profile) = fit_tau_eb(tree, evidence, ar.alpha, ar.kappa_mode, tau_max)?;
            (tau, Some(profile))
        }
    };
    let params = ArParams::new(ar.alpha, tau, ar.kappa_mode);
    let (_, transitions) = all_transitions(tree, &params)?;
    let collected = collect(tree, evidence, &transitions)?;
    let posterior = distribute(tree, evidence, &transitions, &collected);
    let summary = summarize(tree, &posterior);
    if !summary.pjap.is_finite() {
        warnings.push("posterior joint alternative probability is not finite".into());
    }
    Ok(PosteriorReport {
        pmaps: summary.pmaps,
        pjap: summary.pjap,
        log_null_prob: summary.log_null_prob,
        log_marginal: collected.log_marginal,
        alpha: ar.alpha,
        tau,
        kappa: params.kappa,
        tau_profile: profile,
        evidence: evidence.to_vec(),
        warnings,
    })
}

/// End-to-end run: node evidence, prior setup, message passing, summaries.
pub fn run_bgcr(
    dataset: &AlignedDataset,
    tree: &PhyloTree,
    prior: &PriorSpec,
    ar: &ArConfig,
) -> Result<PosteriorReport, EngineError> {
    let (evidence, warnings) = compute_evidence(dataset, tree, prior)?;
    run_with_evidence(tree, &evidence, ar, warnings)
}

const BRUTE_FORCE_MAX_INTERNAL: usize = 20;

/// Exact posterior by exhaustive enumeration of all state configurations.
///
/// Weights each configuration by the bottom-up prior times the per-node
/// evidence, entirely independently of the message-passing recursions.
pub fn brute_force_posterior(
    tree: &PhyloTree,
    evidence: &[NodeEvidence],
    params: &ArParams,
) -> Result<Summary, EngineError> {
    let internals = tree.internal_nodes();
    let n = internals.len();
    if n > BRUTE_FORCE_MAX_INTERNAL {
        return Err(EngineError::TreeTooLarge {
            internal: n,
            max: BRUTE_FORCE_MAX_INTERNAL,
        });
    }
    let bit_of: std::collections::HashMap<NodeId, usize> = internals
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut log_weights = Vec::with_capacity(1usize << n);
    for mask in 0..(1usize << n) {
        let state = |id: NodeId| -> bool {
            !tree.is_leaf(id) && (mask >> bit_of[&id]) & 1 == 1
        };
        let mut logw = 0.0;
        for &node in &internals {
            let (l, r) = tree.children(node).expect("internal node");
            let cond = ar_conditional(params, state(l), state(r));
            logw += if state(node) {
                cond.ln() + evidence[node].log_m1
            } else {
                (1.0 - cond).ln() + evidence[node].log_m0
            };
        }
        log_weights.push(logw);
    }
    let log_total = log_sum_exp(&log_weights);
    let mut pmaps = vec![0.0_f64; tree.node_count()];
    let mut clique_marginals = vec![[0.0_f64; 8]; tree.node_count()];
    for (mask, &logw) in log_weights.iter().enumerate() {
        let weight = (logw - log_total).exp();
        let state =
            |id: NodeId| -> u8 { u8::from(!tree.is_leaf(id) && (mask >> bit_of[&id]) & 1 == 1) };
        for &node in &internals {
            let (l, r) = tree.children(node).expect("internal node");
            if state(node) == 1 {
                pmaps[node] += weight;
            }
            clique_marginals[node][clique::encode(state(node), state(l), state(r))] += weight;
        }
    }
    let log_null_prob = log_weights[0] - log_total;
    Ok(Summary {
        pmaps,
        pjap: -log_null_prob.exp_m1(),
        log_null_prob,
        clique_marginals,
    })
}
