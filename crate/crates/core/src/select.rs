//! Enumerative covariate-model comparison: every subset of adjustment
//! covariates is scored by its data marginal likelihood under independent
//! Bernoulli inclusion priors. The group indicator is never toggled.

use thiserror::Error;

use crate::dataset::AlignedDataset;
use crate::message_passing::{run_bgcr, ArConfig, EngineError};
use crate::node_model::PriorSpec;
use crate::phylo::PhyloTree;
use crate::special::log_sum_exp;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("{p} covariates would require {count} pipeline runs; at most 12 supported")]
    TooManyCovariates { p: usize, count: u64 },
    #[error("inclusion prior {value} for covariate {index} outside (0, 1]")]
    InvalidInclusionPrior { index: usize, value: f64 },
    #[error("{got} inclusion priors for {p} covariates")]
    PriorLengthMismatch { got: usize, p: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Model-comparison output must never silently feed back into the test:
/// a strong confounder overlaps the group indicator, so predictive scoring
/// can assign it a low inclusion probability exactly when adjusting for it
/// matters most, and dropping it then manufactures false positives. Keep all
/// suspected confounders in the testing model regardless of this ranking.
pub const CONFOUNDING_WARNING: &str = "Model probabilities rank predictive fit, not confounding \
control: a covariate that strongly confounds the grouping can receive low inclusion probability \
precisely because its effect overlaps the group indicator. Do not drop covariates from the test \
based on this table; keep all suspected confounders adjusted.";

/// One enumerated covariate subset.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    /// Inclusion flag per adjustment covariate.
    pub included: Vec<bool>,
    pub log_prior: f64,
    /// Data log marginal likelihood conditional on this subset.
    pub log_marginal: f64,
    pub posterior: f64,
}

/// Posterior over all `2^p` covariate subsets.
#[derive(Debug, Clone)]
pub struct ModelPosterior {
    pub models: Vec<ModelEntry>,
}

impl ModelPosterior {
    /// Marginal inclusion probability of covariate `j`.
    pub fn inclusion_probability(&self, j: usize) -> f64 {
        self.models
            .iter()
            .filter(|m| m.included[j])
            .map(|m| m.posterior)
            .sum()
    }
}

/// Run the full pipeline once per covariate subset and normalize
/// `prior x marginal` over subsets in log space.
pub fn enumerate_models(
    dataset: &AlignedDataset,
    tree: &PhyloTree,
    prior: &PriorSpec,
    ar: &ArConfig,
    inclusion_priors: &[f64],
) -> Result<ModelPosterior, SelectError> {
    let p = dataset.n_adjust;
    if inclusion_priors.len() != p {
        return Err(SelectError::PriorLengthMismatch {
            got: inclusion_priors.len(),
            p,
        });
    }
    if p > 12 {
        return Err(SelectError::TooManyCovariates {
            p,
            count: 1u64 << p,
        });
    }
    for (index, &q) in inclusion_priors.iter().enumerate() {
        if !(q > 0.0 && q <= 1.0) {
            return Err(SelectError::InvalidInclusionPrior { index, value: q });
        }
    }

    let mut models = Vec::with_capacity(1 << p);
    for mask in 0..(1usize << p) {
        let included: Vec<bool> = (0..p).map(|j| (mask >> j) & 1 == 1).collect();
        let log_prior: f64 = inclusion_priors
            .iter()
            .zip(&included)
            .map(|(&q, &r)| if r { q.ln() } else { (1.0 - q).ln() })
            .sum();
        let log_marginal = if log_prior == f64::NEG_INFINITY {
            // Zero-prior models never contribute; skip the expensive run.
            f64::NEG_INFINITY
        } else {
            let subset = dataset.with_adjust_subset(&included);
            run_bgcr(&subset, tree, prior, ar)?.log_marginal
        };
        models.push(ModelEntry {
            included,
            log_prior,
            log_marginal,
            posterior: 0.0,
        });
    }

    let log_weights: Vec<f64> = models
        .iter()
        .map(|m| m.log_prior + m.log_marginal)
        .collect();
    let log_total = log_sum_exp(&log_weights);
    for (model, &lw) in models.iter_mut().zip(&log_weights) {
        model.posterior = (lw - log_total).exp();
    }
    Ok(ModelPosterior { models })
}
