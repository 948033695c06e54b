//! Tree-guided Bayesian testing of group differences in count compositions.
//!
//! The pipeline decomposes a two-group comparison of count compositions into
//! one beta-binomial regression test per internal node of a binary tree,
//! links the local tests with a bottom-up autoregressive prior on signal
//! indicators, and computes exact posterior summaries (per-node and joint
//! alternative probabilities) by message passing on the induced clique tree.
//!
//! Module map:
//! - [`phylo`]: Newick parsing, tree validation, traversal orders.
//! - [`dataset`]: count/covariate ingestion and bottom-up aggregation.
//! - [`node_model`]: per-node marginal likelihoods (Newton-Raphson MAP,
//!   Laplace approximation, dispersion-grid integration).
//! - [`graph_prior`]: the autoregressive prior and its clique-tree form.
//! - [`message_passing`]: collection/distribution passes, posterior
//!   summaries, empirical-Bayes fitting of the propagation boost.
//! - [`decision`]: thresholds and posterior error accounting.
//! - [`select`]: enumerative covariate-model comparison.
//! - [`simulate`]: seeded generative model and perturbation scenarios.

pub mod dataset;
pub mod decision;
pub mod graph_prior;
pub mod message_passing;
pub mod node_model;
pub mod phylo;
pub mod select;
pub mod simulate;
pub mod special;

pub use dataset::{load_counts, load_covariates, AlignedDataset, Covariates, OtuTable};
pub use graph_prior::{solve_alpha, solve_tau_max, ArParams, KappaMode};
pub use message_passing::{run_bgcr, ArConfig, PosteriorReport, TauSetting};
pub use node_model::{NodeEvidence, PriorSpec};
pub use phylo::{NodeId, PhyloTree};
