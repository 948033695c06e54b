//! Machine-readable run report.
//!
//! Probabilities and log quantities are rounded to 12 significant digits
//! before serialization so reruns are byte-identical and downstream tools can
//! round-trip the numbers safely.

use serde::Serialize;

/// Nearest f64 to the 12-significant-digit decimal rendering of `x`.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("scientific rendering parses")
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct GroupCoding {
    pub column: String,
    pub zero_label: String,
    pub one_label: String,
}

#[derive(Debug, Serialize)]
pub struct StandardizedColumn {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Serialize)]
pub struct Settings {
    pub prjap_target: f64,
    pub alpha: f64,
    pub kappa_mode: String,
    pub tau_mode: String,
    pub tau_max: f64,
    pub nu_grid_points: usize,
    pub sigma_beta2: f64,
    pub sigma_gamma2: f64,
    pub threshold_global: f64,
    pub threshold_node: f64,
}

#[derive(Debug, Serialize)]
pub struct TauProfilePoint {
    pub tau: f64,
    pub log_marginal: f64,
}

#[derive(Debug, Serialize)]
pub struct TauPosteriorPoint {
    pub tau: f64,
    pub density: f64,
}

#[derive(Debug, Serialize)]
pub struct TauBayesFactor {
    pub log_bf10: f64,
    pub bf10: f64,
}

#[derive(Debug, Serialize)]
pub struct Results {
    pub pjap: f64,
    pub one_minus_pjap: f64,
    pub log_null_prob: f64,
    pub log_marginal_likelihood: f64,
    pub tau_hat: f64,
    pub kappa: f64,
    pub global_reject: bool,
    pub significant_nodes: Vec<usize>,
    pub expected_false_discoveries: f64,
    pub expected_false_negatives: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_bayes_factor: Option<TauBayesFactor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_profile: Option<Vec<TauProfilePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_posterior: Option<Vec<TauPosteriorPoint>>,
}

#[derive(Debug, Serialize)]
pub struct NodeReport {
    pub id: usize,
    pub depth: usize,
    pub pmap: f64,
    pub log_m0: f64,
    pub log_m1: f64,
    pub significant: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub generated_at: u64,
    pub inputs: Inputs,
    pub n_samples: usize,
    pub n_otus: usize,
    pub n_internal_nodes: usize,
    pub dropped_samples: usize,
    pub group_coding: GroupCoding,
    pub standardized_columns: Vec<StandardizedColumn>,
    pub settings: Settings,
    pub results: Results,
    pub nodes: Vec<NodeReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Inputs {
    pub counts: InputDigest,
    pub tree: InputDigest,
    pub covariates: InputDigest,
}

#[cfg(test)]
mod tests {
    use super::round_sig12;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig12(0.0), 0.0);
        assert_eq!(round_sig12(1.0), 1.0);
        let x = 0.123_456_789_012_345_6;
        let r = round_sig12(x);
        assert!((r - 0.123_456_789_012).abs() < 1e-15);
        assert_eq!(round_sig12(r), r);
        let neg = round_sig12(-1234.567_890_123_456);
        assert!((neg + 1234.567_890_12).abs() < 1e-8);
    }
}
