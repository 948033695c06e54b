//! Per-node log marginal likelihoods of the beta-binomial regression under
//! the null (no group coefficient) and the alternative.
//!
//! For a fixed dispersion the regression coefficients are integrated out with
//! a Laplace approximation around the Newton-Raphson mode; the dispersion is
//! then integrated over a uniform grid in log10 space. Everything is carried
//! in natural-log space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::AlignedDataset;
use crate::phylo::PhyloTree;
use crate::special::{
    digamma_raw, ln_beta, ln_gamma_raw, log_sum_exp, logit, sigmoid, trigamma_raw, DomainError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("negative Hessian is not positive definite at the fitted mode")]
    NonPositiveDefinite,
    #[error("{failed} of {total} dispersion grid points failed: {first}")]
    GridFailure {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("invalid prior specification: {0}")]
    InvalidPrior(String),
    #[error("invalid composition: {0}")]
    InvalidComposition(String),
}

/// Prior specification for the node-local regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// Variance of the independent normal priors on each regression
    /// coefficient (intercept and adjustment covariates).
    pub sigma_beta_sq: f64,
    /// Variance of the normal prior on the group coefficient under the
    /// alternative.
    pub sigma_gamma_sq: f64,
    /// Number of dispersion grid points (midpoint rule).
    pub nu_grid_points: usize,
    /// Support of the uniform prior on log10 dispersion.
    pub log10_nu_range: (f64, f64),
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            sigma_beta_sq: 16.0,
            sigma_gamma_sq: 10.0,
            nu_grid_points: 50,
            log10_nu_range: (-1.0, 4.0),
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.sigma_beta_sq > 0.0) || !(self.sigma_gamma_sq > 0.0) {
            return Err(ModelError::InvalidPrior(
                "prior variances must be positive".into(),
            ));
        }
        if self.nu_grid_points < 2 {
            return Err(ModelError::InvalidPrior(
                "dispersion grid needs at least 2 points".into(),
            ));
        }
        if !(self.log10_nu_range.0 < self.log10_nu_range.1) {
            return Err(ModelError::InvalidPrior(
                "log10 dispersion range must be increasing".into(),
            ));
        }
        Ok(())
    }

    /// Dispersion grid: midpoints of a uniform partition of the log10 range,
    /// each carrying prior mass `1/M`.
    pub fn nu_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.log10_nu_range;
        let m = self.nu_grid_points;
        (0..m)
            .map(|i| {
                let frac = (i as f64 + 0.5) / m as f64;
                10f64.powf(lo + (hi - lo) * frac)
            })
            .collect()
    }
}

/// Which local hypothesis a fit is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Group coefficient fixed at zero: design excludes the group column.
    Null,
    /// Group coefficient free with its own prior: design includes the group
    /// column (last).
    Alternative,
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged design rows");
            data.extend_from_slice(row);
        }
        DesignMatrix {
            data,
            rows: n,
            cols,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Count pairs and shared designs for one internal node's local regression.
#[derive(Debug, Clone, Copy)]
pub struct NodeData<'a> {
    /// Counts landing in the left child, per sample.
    pub y_left: &'a [u64],
    /// Counts at the node itself, per sample.
    pub y_total: &'a [u64],
    /// Intercept plus adjustment covariates.
    pub design_null: &'a DesignMatrix,
    /// Same with the group indicator appended as the last column.
    pub design_alt: &'a DesignMatrix,
}

impl<'a> NodeData<'a> {
    pub fn design(&self, hypothesis: Hypothesis) -> &'a DesignMatrix {
        match hypothesis {
            Hypothesis::Null => self.design_null,
            Hypothesis::Alternative => self.design_alt,
        }
    }
}

fn prior_variances(prior: &PriorSpec, hypothesis: Hypothesis, dim: usize) -> Vec<f64> {
    let mut v = vec![prior.sigma_beta_sq; dim];
    if hypothesis == Hypothesis::Alternative {
        *v.last_mut().expect("alternative design has columns") = prior.sigma_gamma_sq;
    }
    v
}

/// MAP fit of the regression coefficients at a fixed dispersion.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Log posterior density (unnormalized) at the mode.
    pub value: f64,
    /// `ln |-H|` of the log posterior Hessian at the mode.
    pub log_det_neg_hessian: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Log beta-binomial marginal likelihood of one count split.
///
/// The finite-dispersion branch is `ln B(tv+y1, (1-t)v+y2) - ln B(tv, (1-t)v)`;
/// infinite dispersion degenerates to the binomial kernel
/// `y1 ln t + y2 ln(1-t)`. Empty splits carry no information and return 0.
pub fn log_betabinom(theta: f64, nu: f64, y1: u64, y2: u64) -> Result<f64, ModelError> {
    if y1 == 0 && y2 == 0 {
        return Ok(0.0);
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(DomainError {
            function: "log_betabinom",
            argument: theta,
        }
        .into());
    }
    if !(nu > 0.0) {
        return Err(DomainError {
            function: "log_betabinom",
            argument: nu,
        }
        .into());
    }
    if nu.is_infinite() {
        return Ok(y1 as f64 * theta.ln() + y2 as f64 * (1.0 - theta).ln());
    }
    let a = theta * nu;
    let b = (1.0 - theta) * nu;
    Ok(ln_beta(a + y1 as f64, b + y2 as f64)? - ln_beta(a, b)?)
}

/// Log Dirichlet-multinomial likelihood of a single sample's count vector
/// (without the multinomial coefficient), used as a factorization oracle.
pub fn dm_log_marginal(counts: &[u64], pi: &[f64], nu: f64) -> Result<f64, ModelError> {
    if counts.len() != pi.len() {
        return Err(ModelError::InvalidComposition(format!(
            "{} counts vs {} composition entries",
            counts.len(),
            pi.len()
        )));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(ModelError::InvalidComposition(
            "composition entries must be strictly positive".into(),
        ));
    }
    let total_pi: f64 = pi.iter().sum();
    if (total_pi - 1.0).abs() > 1e-8 {
        return Err(ModelError::InvalidComposition(format!(
            "composition sums to {total_pi}"
        )));
    }
    if !(nu > 0.0) || nu.is_infinite() {
        return Err(DomainError {
            function: "dm_log_marginal",
            argument: nu,
        }
        .into());
    }
    let n: u64 = counts.iter().sum();
    let mut log_lik = ln_gamma_raw(nu) - ln_gamma_raw(nu + n as f64);
    for (&y, &p) in counts.iter().zip(pi) {
        log_lik += ln_gamma_raw(nu * p + y as f64) - ln_gamma_raw(nu * p);
    }
    Ok(log_lik)
}

// Success probabilities are clamped away from the boundary so gamma-family
// arguments stay positive even for extreme linear predictors.
const THETA_FLOOR: f64 = 1e-12;

#[inline]
fn theta_from_eta(eta: f64) -> f64 {
    sigmoid(eta).clamp(THETA_FLOOR, 1.0 - THETA_FLOOR)
}

/// Log posterior density (likelihood plus normalized log prior) at `beta`.
pub fn log_posterior_value(
    beta: &DVector<f64>,
    nu: f64,
    data: &NodeData,
    prior: &PriorSpec,
    hypothesis: Hypothesis,
) -> f64 {
    let design = data.design(hypothesis);
    let d = design.ncols();
    debug_assert_eq!(beta.len(), d);
    let ln_gamma_nu = ln_gamma_raw(nu);
    let mut value = 0.0;
    for (i, (&t, &y)) in data.y_left.iter().zip(data.y_total).enumerate() {
        if y == 0 {
            continue;
        }
        let x = design.row(i);
        let eta: f64 = x.iter().zip(beta.iter()).map(|(xi, bi)| xi * bi).sum();
        let theta = theta_from_eta(eta);
        let a = theta * nu;
        let b = (1.0 - theta) * nu;
        let t = t as f64;
        let r = y as f64 - t;
        value += ln_gamma_raw(a + t) + ln_gamma_raw(b + r) - ln_gamma_raw(nu + y as f64)
            - ln_gamma_raw(a)
            - ln_gamma_raw(b)
            + ln_gamma_nu;
    }
    let variances = prior_variances(prior, hypothesis, d);
    for (bk, vk) in beta.iter().zip(&variances) {
        value -= 0.5 * (bk * bk / vk + (2.0 * std::f64::consts::PI * vk).ln());
    }
    value
}

/// Log posterior value, gradient, and Hessian at `beta`.
pub fn log_posterior_grad_hess(
    beta: &DVector<f64>,
    nu: f64,
    data: &NodeData,
    prior: &PriorSpec,
    hypothesis: Hypothesis,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let design = data.design(hypothesis);
    let d = design.ncols();
    debug_assert_eq!(beta.len(), d);
    let ln_gamma_nu = ln_gamma_raw(nu);
    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for (i, (&t, &y)) in data.y_left.iter().zip(data.y_total).enumerate() {
        if y == 0 {
            continue;
        }
        let x = design.row(i);
        let eta: f64 = x.iter().zip(beta.iter()).map(|(xi, bi)| xi * bi).sum();
        let theta = theta_from_eta(eta);
        let a = theta * nu;
        let b = (1.0 - theta) * nu;
        let t = t as f64;
        let r = y as f64 - t;
        value += ln_gamma_raw(a + t) + ln_gamma_raw(b + r) - ln_gamma_raw(nu + y as f64)
            - ln_gamma_raw(a)
            - ln_gamma_raw(b)
            + ln_gamma_nu;
        // First and second likelihood derivatives in theta, chained through
        // the logit link.
        let a_ij = digamma_raw(a + t) - digamma_raw(b + r) - digamma_raw(a) + digamma_raw(b);
        let b_ij = trigamma_raw(a + t) + trigamma_raw(b + r) - trigamma_raw(a) - trigamma_raw(b);
        let dtheta = theta * (1.0 - theta);
        let w1 = nu * a_ij * dtheta;
        let w2 = nu * nu * b_ij * dtheta * dtheta + nu * a_ij * dtheta * (1.0 - 2.0 * theta);
        for (k, &xk) in x.iter().enumerate() {
            grad[k] += w1 * xk;
            for (k2, &xk2) in x.iter().enumerate().take(k + 1) {
                hess[(k, k2)] += w2 * xk * xk2;
            }
        }
    }
    for k in 0..d {
        for k2 in (k + 1)..d {
            hess[(k, k2)] = hess[(k2, k)];
        }
    }
    let variances = prior_variances(prior, hypothesis, d);
    for (k, vk) in variances.iter().enumerate() {
        value -= 0.5 * (beta[k] * beta[k] / vk + (2.0 * std::f64::consts::PI * vk).ln());
        grad[k] -= beta[k] / vk;
        hess[(k, k)] -= 1.0 / vk;
    }
    (value, grad, hess)
}

const NR_MAX_ITERATIONS: usize = 100;
const NR_GRAD_TOL: f64 = 1e-8;
const NR_VALUE_TOL: f64 = 1e-12;

/// Cholesky of a nearly positive definite matrix, escalating a diagonal
/// jitter when necessary.
fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol);
    }
    let scale = (0..m.nrows())
        .map(|i| m[(i, i)].abs())
        .fold(1.0_f64, f64::max);
    let mut jitter = 1e-10 * scale;
    for _ in 0..16 {
        let mut damped = m.clone();
        for i in 0..m.nrows() {
            damped[(i, i)] += jitter;
        }
        if let Some(chol) = damped.cholesky() {
            return Some(chol);
        }
        jitter *= 10.0;
    }
    None
}

fn log_det_from_cholesky(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Maximize the log posterior with Newton-Raphson from the prior mode,
/// halving the step whenever it fails to improve.
///
/// A fit that stalls before meeting the tolerances is still returned (with
/// `converged = false`) so inference can continue on the best iterate; only a
/// mode with a non positive definite negative Hessian is an error.
pub fn newton_raphson_map(
    data: &NodeData,
    nu: f64,
    prior: &PriorSpec,
    hypothesis: Hypothesis,
    init: Option<&DVector<f64>>,
) -> Result<FitResult, ModelError> {
    let d = data.design(hypothesis).ncols();
    let mut beta = init.cloned().unwrap_or_else(|| DVector::zeros(d));
    let (mut value, mut grad, mut hess) =
        log_posterior_grad_hess(&beta, nu, data, prior, hypothesis);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..NR_MAX_ITERATIONS {
        iterations = iter;
        if grad.amax() < NR_GRAD_TOL {
            converged = true;
            break;
        }
        let neg_hess = -&hess;
        let Some(chol) = cholesky_with_jitter(&neg_hess) else {
            return Err(ModelError::NonPositiveDefinite);
        };
        let direction = chol.solve(&grad);
        // Half the Newton decrement bounds the attainable improvement; once
        // it drops below the relative value tolerance the iterate is the
        // mode at working precision, however steep the curvature.
        let decrement = grad.dot(&direction).max(0.0);
        if 0.5 * decrement < NR_VALUE_TOL * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let candidate = &beta + step * &direction;
            let cand_value = log_posterior_value(&candidate, nu, data, prior, hypothesis);
            if cand_value > value {
                accepted = Some((candidate, cand_value));
                break;
            }
            step *= 0.5;
        }
        let Some((new_beta, new_value)) = accepted else {
            // No uphill step exists: the remaining improvement is lost in
            // rounding of the value, which counts as converged when it is
            // below float noise at the value's scale.
            converged = 0.5 * decrement < 64.0 * f64::EPSILON * (1.0 + value.abs());
            break;
        };
        let value_change = (new_value - value).abs();
        beta = new_beta;
        let refreshed = log_posterior_grad_hess(&beta, nu, data, prior, hypothesis);
        value = refreshed.0;
        grad = refreshed.1;
        hess = refreshed.2;
        if value_change < NR_VALUE_TOL * (1.0 + value.abs()) {
            converged = true;
            break;
        }
    }
    if !converged && grad.amax() < NR_GRAD_TOL {
        converged = true;
    }
    let neg_hess = -&hess;
    let Some(chol) = neg_hess.clone().cholesky() else {
        return Err(ModelError::NonPositiveDefinite);
    };
    Ok(FitResult {
        beta,
        value,
        log_det_neg_hessian: log_det_from_cholesky(&chol),
        converged,
        iterations,
    })
}

/// Laplace estimate of the log integral of the posterior kernel:
/// `h(mode) + (d/2) ln 2 pi - (1/2) ln |-H|`.
pub fn laplace_log_marginal(fit: &FitResult) -> f64 {
    let d = fit.beta.len() as f64;
    fit.value + 0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * fit.log_det_neg_hessian
}

/// Evidence for one node under one hypothesis, with fit diagnostics.
#[derive(Debug, Clone)]
pub struct EvidenceValue {
    pub log_m: f64,
    /// Dispersion grid points whose fit errored and were skipped.
    pub grid_failures: usize,
    /// Grid points whose fit stalled short of the tolerances.
    pub unconverged: usize,
}

/// Log marginal likelihood of a node's data under one hypothesis: Laplace in
/// the coefficients, midpoint Riemann sum over the dispersion grid.
///
/// Individual grid-point failures are tolerated up to 10% of the grid;
/// consecutive points warm-start from the previous mode.
pub fn node_evidence(
    data: &NodeData,
    prior: &PriorSpec,
    hypothesis: Hypothesis,
) -> Result<EvidenceValue, ModelError> {
    prior.validate()?;
    let grid = prior.nu_grid();
    let mut log_terms = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    let mut grid_failures = 0;
    let mut unconverged = 0;
    let mut first_error: Option<String> = None;
    for &nu in &grid {
        match newton_raphson_map(data, nu, prior, hypothesis, warm.as_ref()) {
            Ok(fit) => {
                if !fit.converged {
                    unconverged += 1;
                }
                log_terms.push(laplace_log_marginal(&fit));
                warm = Some(fit.beta);
            }
            Err(err) => {
                grid_failures += 1;
                if first_error.is_none() {
                    first_error = Some(err.to_string());
                }
            }
        }
    }
    if grid_failures * 10 > grid.len() {
        return Err(ModelError::GridFailure {
            failed: grid_failures,
            total: grid.len(),
            first: first_error.unwrap_or_default(),
        });
    }
    // Midpoint rule: every grid cell carries mass 1/M; failed cells are
    // simply omitted from the sum.
    let log_m = log_sum_exp(&log_terms) - (grid.len() as f64).ln();
    Ok(EvidenceValue {
        log_m,
        grid_failures,
        unconverged,
    })
}

/// Null and alternative log marginal likelihoods for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEvidence {
    pub log_m0: f64,
    pub log_m1: f64,
}

impl NodeEvidence {
    pub const NEUTRAL: NodeEvidence = NodeEvidence {
        log_m0: 0.0,
        log_m1: 0.0,
    };
}

/// Evidence for every internal node, indexed by node id (leaf slots are
/// neutral). Nodes are independent and evaluated in parallel.
pub fn compute_evidence(
    dataset: &AlignedDataset,
    tree: &PhyloTree,
    prior: &PriorSpec,
) -> Result<(Vec<NodeEvidence>, Vec<String>), ModelError> {
    prior.validate()?;
    let internals = tree.internal_nodes();
    let per_node: Vec<(usize, Result<(NodeEvidence, Vec<String>), ModelError>)> = internals
        .par_iter()
        .map(|&node| {
            let data = dataset.node_data(tree, node);
            let result = (|| {
                let null = node_evidence(&data, prior, Hypothesis::Null)?;
                let alt = node_evidence(&data, prior, Hypothesis::Alternative)?;
                let mut warnings = Vec::new();
                for (label, ev) in [("null", &null), ("alternative", &alt)] {
                    if ev.grid_failures > 0 {
                        warnings.push(format!(
                            "node {node} ({label}): {} dispersion grid points skipped",
                            ev.grid_failures
                        ));
                    }
                    if ev.unconverged > 0 {
                        warnings.push(format!(
                            "node {node} ({label}): {} grid fits stopped before tolerance",
                            ev.unconverged
                        ));
                    }
                }
                Ok((
                    NodeEvidence {
                        log_m0: null.log_m,
                        log_m1: alt.log_m,
                    },
                    warnings,
                ))
            })();
            (node, result)
        })
        .collect();

    let mut evidence = vec![NodeEvidence::NEUTRAL; tree.node_count()];
    let mut warnings = Vec::new();
    for (node, result) in per_node {
        let (ev, mut warns) = result?;
        evidence[node] = ev;
        warnings.append(&mut warns);
    }
    Ok((evidence, warnings))
}

/// Posterior alternative probability of a single independent local test.
pub fn bcr_pmap(log_m0: f64, log_m1: f64, rho: f64) -> f64 {
    assert!((0.0..=1.0).contains(&rho), "rho must lie in [0, 1]");
    if rho == 0.0 {
        return 0.0;
    }
    if rho == 1.0 {
        return 1.0;
    }
    sigmoid(logit(rho) + log_m1 - log_m0)
}
