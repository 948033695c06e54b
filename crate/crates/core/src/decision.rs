//! Decision rules on top of the posterior quantities: global rejection,
//! significant-node reporting, and posterior expected false-discovery and
//! false-negative accounting.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("threshold {0} must lie strictly inside (0, 1)")]
    ThresholdOutOfRange(f64),
}

/// Thresholds for the global and per-node decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig {
    /// Reject the global null when the joint alternative probability
    /// strictly exceeds this.
    pub global_threshold: f64,
    /// Call a node significant when its marginal alternative probability
    /// strictly exceeds this.
    pub node_threshold: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            global_threshold: 0.5,
            node_threshold: 0.5,
        }
    }
}

impl DecisionConfig {
    /// Node threshold implied by weighting a false discovery `t` times a
    /// false negative: `L = t / (t + 1)`. `t = 1` gives the default 0.5.
    pub fn with_fd_weight(t: f64) -> Result<Self, DecisionError> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(DecisionError::ThresholdOutOfRange(t / (t + 1.0)));
        }
        Ok(DecisionConfig {
            node_threshold: t / (t + 1.0),
            ..DecisionConfig::default()
        })
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        for threshold in [self.global_threshold, self.node_threshold] {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(DecisionError::ThresholdOutOfRange(threshold));
            }
        }
        Ok(())
    }
}

/// Global decision: strict comparison, so a boundary value is accepted.
pub fn decide_global(pjap: f64, config: &DecisionConfig) -> bool {
    pjap > config.global_threshold
}

/// Per-node decisions plus posterior expected error counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDecisions {
    /// Indices (into the given slice) of rejected nulls.
    pub rejected: Vec<usize>,
    /// Posterior expected false discoveries among rejections.
    pub expected_fd: f64,
    /// Posterior expected false negatives among acceptances.
    pub expected_fn: f64,
}

/// Apply the node threshold to a slice of marginal alternative probabilities.
pub fn significant_nodes(pmaps: &[f64], config: &DecisionConfig) -> NodeDecisions {
    let mut rejected = Vec::new();
    let mut expected_fd = 0.0;
    let mut expected_fn = 0.0;
    for (i, &pmap) in pmaps.iter().enumerate() {
        if pmap > config.node_threshold {
            rejected.push(i);
            expected_fd += 1.0 - pmap;
        } else {
            expected_fn += pmap;
        }
    }
    NodeDecisions {
        rejected,
        expected_fd,
        expected_fn,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_decision_is_strict() {
        let config = DecisionConfig::default();
        assert!(decide_global(0.910, &config));
        assert!(!decide_global(0.5, &config));
        assert!(!decide_global(0.0, &config));
    }

    #[test]
    fn fd_weight_one_gives_half() {
        let config = DecisionConfig::with_fd_weight(1.0).unwrap();
        assert_eq!(config.node_threshold, 0.5);
        assert!(DecisionConfig::with_fd_weight(0.0).is_err());
    }

    #[test]
    fn expected_error_bookkeeping() {
        let config = DecisionConfig::default();
        let out = significant_nodes(&[0.9, 0.2], &config);
        assert_eq!(out.rejected, vec![0]);
        assert!((out.expected_fd - 0.1).abs() < 1e-12);
        assert!((out.expected_fn - 0.2).abs() < 1e-12);

        let out = significant_nodes(&[0.0, 0.0, 0.0], &config);
        assert!(out.rejected.is_empty());
        assert_eq!(out.expected_fd, 0.0);
        assert_eq!(out.expected_fn, 0.0);
    }

    #[test]
    fn raising_the_threshold_only_removes_rejections() {
        let pmaps = [0.05, 0.3, 0.55, 0.72, 0.97];
        let mut previous: Option<NodeDecisions> = None;
        for threshold in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let config = DecisionConfig {
                node_threshold: threshold,
                ..DecisionConfig::default()
            };
            let current = significant_nodes(&pmaps, &config);
            if let Some(prev) = previous {
                assert!(current.rejected.iter().all(|i| prev.rejected.contains(i)));
                assert!(current.expected_fd <= prev.expected_fd + 1e-12);
                assert!(current.expected_fn >= prev.expected_fn - 1e-12);
            }
            previous = Some(current);
        }
    }

    #[test]
    fn threshold_rule_minimizes_weighted_posterior_loss() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
        let loss = |decisions: &[bool], pmaps: &[f64], t: f64| -> f64 {
            let mut total = 0.0;
            for (&d, &p) in decisions.iter().zip(pmaps) {
                total += if d { t * (1.0 - p) } else { p };
            }
            total
        };
        for _ in 0..20 {
            let n = rng.gen_range(1..=10);
            let pmaps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t = rng.gen_range(0.2..4.0);
            let config = DecisionConfig::with_fd_weight(t).unwrap();
            let chosen = significant_nodes(&pmaps, &config);
            let mut decisions = vec![false; n];
            for &i in &chosen.rejected {
                decisions[i] = true;
            }
            let rule_loss = loss(&decisions, &pmaps, t);
            let mut min_loss = f64::INFINITY;
            for mask in 0..(1usize << n) {
                let candidate: Vec<bool> = (0..n).map(|i| (mask >> i) & 1 == 1).collect();
                min_loss = min_loss.min(loss(&candidate, &pmaps, t));
            }
            assert!(
                rule_loss <= min_loss,
                "rule loss {rule_loss} vs exhaustive {min_loss}"
            );
        }
    }
}
