//! Bottom-up autoregressive prior on per-node signal indicators and its
//! clique-tree reparameterization.
//!
//! Each internal node carries a binary state; the prior generates states
//! bottom-up with `logit P(on | children) = alpha + tau*[any child on] +
//! kappa*[both children on]`, leaf children fixed at off. For exact inference
//! the prior is rewritten as top-down transitions between cliques
//! `(state, left child state, right child state)`, an 8x8 row-stochastic
//! matrix per node obtained by Bayes inversion of the bottom-up conditional.

use thiserror::Error;

use crate::phylo::{NodeId, PhyloTree};
use crate::special::sigmoid;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("prior marginal for node {node} is degenerate ({value})")]
    DegenerateMarginal { node: NodeId, value: f64 },
    #[error("budget {budget} does not exceed the tau=0 expected signal count {floor}")]
    BudgetTooSmall { budget: f64, floor: f64 },
    #[error("budget {budget} exceeds the expected signal count {ceiling} at tau={tau_hi}")]
    BudgetTooLarge {
        budget: f64,
        ceiling: f64,
        tau_hi: f64,
    },
}

/// How the two-child boost is tied to the propagation boost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaMode {
    /// `kappa = 0`: a signal at one child explains the parent's signal away.
    #[default]
    Zero,
    /// `kappa = tau`: sibling signals contribute additively.
    EqualTau,
}

/// Global autoregressive prior parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArParams {
    pub alpha: f64,
    pub tau: f64,
    pub kappa: f64,
}

impl ArParams {
    pub fn new(alpha: f64, tau: f64, kappa_mode: KappaMode) -> Self {
        let kappa = match kappa_mode {
            KappaMode::Zero => 0.0,
            KappaMode::EqualTau => tau,
        };
        ArParams { alpha, tau, kappa }
    }
}

/// 8x8 row-stochastic transition matrix between parent and child cliques.
pub type CliqueMatrix = [[f64; 8]; 8];

/// Clique state indexing.
///
/// State `i` in `0..8` decodes to `(s, s_left, s_right)` as the three bits of
/// `i`, high bit first; state 0 is all-off, state 7 all-on.
pub mod clique {
    /// Decode a state index into `(s, s_left, s_right)`.
    #[inline]
    pub fn decode(i: usize) -> (u8, u8, u8) {
        debug_assert!(i < 8);
        (((i >> 2) & 1) as u8, ((i >> 1) & 1) as u8, (i & 1) as u8)
    }

    /// Inverse of [`decode`].
    #[inline]
    pub fn encode(s: u8, s_left: u8, s_right: u8) -> usize {
        ((s as usize) << 2) | ((s_left as usize) << 1) | (s_right as usize)
    }
}

/// `P(S(A) = 1 | children states)` under the autoregressive prior.
///
/// A leaf child contributes state 0 by definition.
pub fn ar_conditional(params: &ArParams, s_left: bool, s_right: bool) -> f64 {
    let mut eta = params.alpha;
    if s_left || s_right {
        eta += params.tau;
    }
    if s_left && s_right {
        eta += params.kappa;
    }
    sigmoid(eta)
}

/// Prior marginal alternative probability per node, computed bottom-up.
///
/// Children of a node are a priori independent (they head disjoint generative
/// subtrees), so the marginal is a four-term mixture over their states.
/// Returned vector is indexed by node id; leaf entries are 0.
pub fn prior_marginals(tree: &PhyloTree, params: &ArParams) -> Vec<f64> {
    let mut marginal = vec![0.0; tree.node_count()];
    for node in tree.internal_nodes_by_depth() {
        let (l, r) = tree.children(node).expect("internal node");
        let p_l = marginal[l];
        let p_r = marginal[r];
        let mut total = 0.0;
        for (s_l, s_r) in [(false, false), (false, true), (true, false), (true, true)] {
            let w = (if s_l { p_l } else { 1.0 - p_l }) * (if s_r { p_r } else { 1.0 - p_r });
            if w > 0.0 {
                total += w * ar_conditional(params, s_l, s_r);
            }
        }
        marginal[node] = total;
    }
    marginal
}

fn child_state_prob(tree: &PhyloTree, marginals: &[f64], child: NodeId, s: u8) -> f64 {
    if tree.is_leaf(child) {
        if s == 0 {
            1.0
        } else {
            0.0
        }
    } else if s == 1 {
        marginals[child]
    } else {
        1.0 - marginals[child]
    }
}

/// Top-down clique transition matrix for `node`.
///
/// For a non-root node the row index is the parent's clique state and entries
/// are the Bayes inversion of the bottom-up conditional,
/// `1[child slot matches] * P(s_l) * P(s_r) * cond^(s) * (1-cond)^(1-s) / P(S=s)`,
/// which makes the product of transitions along the clique tree reproduce the
/// bottom-up joint exactly. For the root every row holds the clique marginal.
/// States asserting an active leaf child get probability exactly 0.
pub fn clique_transition(
    tree: &PhyloTree,
    params: &ArParams,
    marginals: &[f64],
    node: NodeId,
) -> Result<CliqueMatrix, PriorError> {
    let (l, r) = tree.children(node).expect("internal node");
    let mut column = [0.0_f64; 8];
    let is_root = tree.parent(node).is_none();
    let own = marginals[node];
    if !is_root && !(own > 0.0 && own < 1.0) {
        return Err(PriorError::DegenerateMarginal {
            node,
            value: own,
        });
    }
    for (i_to, value) in column.iter_mut().enumerate() {
        let (s, s_l, s_r) = clique::decode(i_to);
        let base = child_state_prob(tree, marginals, l, s_l)
            * child_state_prob(tree, marginals, r, s_r);
        if base == 0.0 {
            continue;
        }
        let cond = ar_conditional(params, s_l == 1, s_r == 1);
        let cond_s = if s == 1 { cond } else { 1.0 - cond };
        *value = if is_root {
            base * cond_s
        } else {
            let denom = if s == 1 { own } else { 1.0 - own };
            base * cond_s / denom
        };
    }

    let mut matrix = [[0.0_f64; 8]; 8];
    if is_root {
        for row in &mut matrix {
            *row = column;
        }
    } else {
        // The parent clique stores this node's state in slot 1 (left child)
        // or slot 2 (right child); rows must agree with it.
        let left_child = tree.is_left_child(node);
        for (i_from, row) in matrix.iter_mut().enumerate() {
            let (_, f_l, f_r) = clique::decode(i_from);
            let required = if left_child { f_l } else { f_r };
            for (i_to, cell) in row.iter_mut().enumerate() {
                let (s, _, _) = clique::decode(i_to);
                if s == required {
                    *cell = column[i_to];
                }
            }
        }
    }
    Ok(matrix)
}

/// Prior marginals plus one transition matrix per internal node, indexed by
/// node id (leaf slots hold zero matrices).
pub fn all_transitions(
    tree: &PhyloTree,
    params: &ArParams,
) -> Result<(Vec<f64>, Vec<CliqueMatrix>), PriorError> {
    let marginals = prior_marginals(tree, params);
    let mut transitions = vec![[[0.0; 8]; 8]; tree.node_count()];
    for node in tree.internal_nodes() {
        transitions[node] = clique_transition(tree, params, &marginals, node)?;
    }
    Ok((marginals, transitions))
}

/// Solve for the baseline log-odds giving a target prior joint alternative
/// probability on a tree with `n_internal` testable nodes.
///
/// The all-off configuration has probability `sigmoid(-alpha)^n` regardless
/// of `tau` and `kappa`, so the solution is closed form.
pub fn solve_alpha(prjap_target: f64, n_internal: usize) -> f64 {
    assert!(
        prjap_target > 0.0 && prjap_target < 1.0,
        "target must lie in (0, 1)"
    );
    assert!(n_internal > 0);
    // q = (1 - target)^(1/n); alpha = logit(1 - q), computed via expm1 to
    // keep precision when q is close to 1.
    let u = (-prjap_target).ln_1p() / n_internal as f64;
    let one_minus_q = -u.exp_m1();
    one_minus_q.ln() - u
}

/// Prior joint alternative probability implied by `alpha` on `n_internal` nodes.
pub fn prjap(alpha: f64, n_internal: usize) -> f64 {
    -(sigmoid(-alpha).powi(n_internal as i32) - 1.0)
}

const TAU_SEARCH_HI: f64 = 50.0;

/// Expected number of prior alternatives at the given parameters.
pub fn expected_signal_count(tree: &PhyloTree, params: &ArParams) -> f64 {
    prior_marginals(tree, params).iter().sum()
}

/// Upper bound for the propagation boost from a budget on the prior expected
/// number of alternatives; without a budget the conventional default is 6.
///
/// The expected count is monotone increasing in `tau`, so bisection applies.
pub fn solve_tau_max(
    tree: &PhyloTree,
    alpha: f64,
    kappa_mode: KappaMode,
    budget: Option<f64>,
) -> Result<f64, PriorError> {
    const DEFAULT_TAU_MAX: f64 = 6.0;
    let Some(budget) = budget else {
        return Ok(DEFAULT_TAU_MAX);
    };
    let count_at = |tau: f64| {
        let params = ArParams::new(alpha, tau, kappa_mode);
        expected_signal_count(tree, &params)
    };
    let floor = count_at(0.0);
    if budget <= floor {
        return Err(PriorError::BudgetTooSmall { budget, floor });
    }
    let ceiling = count_at(TAU_SEARCH_HI);
    if budget > ceiling {
        return Err(PriorError::BudgetTooLarge {
            budget,
            ceiling,
            tau_hi: TAU_SEARCH_HI,
        });
    }
    let (mut lo, mut hi) = (0.0, TAU_SEARCH_HI);
    loop {
        let mid = 0.5 * (lo + hi);
        let value = count_at(mid);
        if (value - budget).abs() < 1e-8 || hi - lo < f64::EPSILON {
            return Ok(mid);
        }
        if value < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
