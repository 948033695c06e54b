//! Command-line entry point: `test` runs the group-difference analysis,
//! `simulate` emits synthetic datasets, `select` enumerates covariate models.
//!
//! Exit codes: 0 success (whatever the test outcome), 2 input validation
//! failure, 3 numeric failure.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use bgcr::dataset::{load_counts, load_covariates, AlignedDataset, Covariates};
use bgcr::decision::{decide_global, significant_nodes, DecisionConfig};
use bgcr::graph_prior::{solve_alpha, KappaMode};
use bgcr::message_passing::{run_with_evidence, tau_posterior_and_bf, ArConfig, TauSetting};
use bgcr::node_model::{compute_evidence, PriorSpec};
use bgcr::phylo::PhyloTree;
use bgcr::select::{enumerate_models, CONFOUNDING_WARNING};
use bgcr::simulate::{
    generate_base, apply_scenario, random_tree, Scenario, ScenarioSpec, ThetaSpec, TotalsSpec,
};

use report::{
    round_sig12, GroupCoding, InputDigest, Inputs, NodeReport, Report, Results, Settings,
    StandardizedColumn, TauBayesFactor, TauPosteriorPoint, TauProfilePoint,
};

#[derive(Parser)]
#[command(
    name = "bgcr",
    version,
    about = "Tree-guided Bayesian testing of group differences in count compositions"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test for a group difference and write report files.
    Test(Box<TestArgs>),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Enumerate covariate models by marginal likelihood.
    Select(Box<SelectArgs>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KappaArg {
    /// Sibling signals explain each other away.
    Zero,
    /// Sibling signals add, with the same weight as the first.
    Tau,
}

impl From<KappaArg> for KappaMode {
    fn from(value: KappaArg) -> Self {
        match value {
            KappaArg::Zero => KappaMode::Zero,
            KappaArg::Tau => KappaMode::EqualTau,
        }
    }
}

#[derive(clap::Args)]
struct ModelFlags {
    /// Prior probability that at least one node carries a signal.
    #[arg(long, default_value_t = 0.5)]
    prjap: f64,
    /// Two-child boost mode.
    #[arg(long, value_enum, default_value_t = KappaArg::Zero)]
    kappa: KappaArg,
    /// Propagation boost: `fit` (empirical Bayes) or a fixed number.
    #[arg(long, default_value = "fit")]
    tau: String,
    /// Upper bound of the boost search grid.
    #[arg(long = "tau-max", default_value_t = 6.0)]
    tau_max: f64,
    /// Number of dispersion grid points.
    #[arg(long = "nu-grid", default_value_t = 50)]
    nu_grid: usize,
    /// Prior variance of the shared regression coefficients.
    #[arg(long = "sigma-beta2", default_value_t = 16.0)]
    sigma_beta2: f64,
    /// Prior variance of the group coefficient under the alternative.
    #[arg(long = "sigma-gamma2", default_value_t = 10.0)]
    sigma_gamma2: f64,
}

impl ModelFlags {
    fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            sigma_beta_sq: self.sigma_beta2,
            sigma_gamma_sq: self.sigma_gamma2,
            nu_grid_points: self.nu_grid,
            ..PriorSpec::default()
        }
    }

    fn tau_setting(&self) -> Result<TauSetting, AppError> {
        if self.tau == "fit" {
            if !(self.tau_max > 0.0) {
                return Err(AppError::input(anyhow!("--tau-max must be positive")));
            }
            Ok(TauSetting::EmpiricalBayes {
                tau_max: self.tau_max,
            })
        } else {
            let value: f64 = self
                .tau
                .parse()
                .map_err(|_| AppError::input(anyhow!("--tau must be `fit` or a number")))?;
            if !(value >= 0.0) {
                return Err(AppError::input(anyhow!("--tau must be non-negative")));
            }
            Ok(TauSetting::Fixed(value))
        }
    }

    fn validate(&self) -> Result<(), AppError> {
        if !(self.prjap > 0.0 && self.prjap < 1.0) {
            return Err(AppError::input(anyhow!("--prjap must lie in (0, 1)")));
        }
        Ok(())
    }
}

#[derive(clap::Args)]
struct TestArgs {
    /// Count table (TSV, header `sample<TAB>otu...`).
    #[arg(long)]
    counts: PathBuf,
    /// Tree file (Newick, `;`-terminated).
    #[arg(long)]
    tree: PathBuf,
    /// Covariate table (CSV with header).
    #[arg(long)]
    covariates: PathBuf,
    /// Name of the binary group column.
    #[arg(long)]
    group: String,
    /// Comma-separated adjustment column names.
    #[arg(long, value_delimiter = ',')]
    adjust: Vec<String>,
    #[command(flatten)]
    model: ModelFlags,
    /// Node-level significance threshold.
    #[arg(long = "threshold-L", default_value_t = 0.5)]
    threshold_node: f64,
    /// Global rejection threshold.
    #[arg(long = "threshold-c", default_value_t = 0.5)]
    threshold_global: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Null,
    #[value(alias = "i")]
    Single,
    #[value(alias = "ii")]
    Multi,
    #[value(alias = "iii")]
    Chain,
    #[value(alias = "iv")]
    Confounder,
}

impl From<ScenarioArg> for Scenario {
    fn from(value: ScenarioArg) -> Self {
        match value {
            ScenarioArg::Null => Scenario::Null,
            ScenarioArg::Single => Scenario::SingleOtu,
            ScenarioArg::Multi => Scenario::MultiOtu,
            ScenarioArg::Chain => Scenario::Chain,
            ScenarioArg::Confounder => Scenario::Confounder,
        }
    }
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Number of leaves of a randomly generated tree.
    #[arg(long, conflicts_with = "tree")]
    leaves: Option<usize>,
    /// Use an existing tree instead of generating one.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScenarioArg::Null)]
    scenario: ScenarioArg,
    /// Percentage count increase for targeted OTUs.
    #[arg(long, default_value_t = 100.0)]
    p: f64,
    /// Explicit target leaf names (comma separated).
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, default_value_t = 40)]
    n0: usize,
    #[arg(long, default_value_t = 40)]
    n1: usize,
    /// Dispersion of the generative splits.
    #[arg(long, default_value_t = 20.0)]
    nu: f64,
    /// Split-fraction range (drawn per node).
    #[arg(long = "theta-lo", default_value_t = 0.3)]
    theta_lo: f64,
    #[arg(long = "theta-hi", default_value_t = 0.7)]
    theta_hi: f64,
    /// Per-sample total count range.
    #[arg(long = "total-lo", default_value_t = 3000)]
    total_lo: u64,
    #[arg(long = "total-hi", default_value_t = 8000)]
    total_hi: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SelectArgs {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    group: String,
    #[arg(long, value_delimiter = ',')]
    adjust: Vec<String>,
    /// Inclusion prior per adjustment covariate; a single value broadcasts.
    #[arg(long, value_delimiter = ',')]
    q: Vec<f64>,
    #[command(flatten)]
    model: ModelFlags,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// Errors split by exit code: 2 for bad inputs, 3 for numeric failures.
enum AppError {
    Input(anyhow::Error),
    Numeric(anyhow::Error),
}

impl AppError {
    fn input(err: anyhow::Error) -> Self {
        AppError::Input(err)
    }

    fn numeric(err: anyhow::Error) -> Self {
        AppError::Numeric(err)
    }

    fn exit_code(&self) -> u8 {
        match self {
            AppError::Input(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            AppError::Input(e) | AppError::Numeric(e) => e,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the pool may already be initialized in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Test(args) => cmd_test(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Select(args) => cmd_select(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn sha256_hex(path: &Path) -> Result<String, AppError> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(AppError::input)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn load_tree(path: &Path) -> Result<PhyloTree, AppError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(AppError::input)?;
    PhyloTree::parse_newick(text.trim())
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(AppError::input)
}

struct LoadedInputs {
    tree: PhyloTree,
    covariates: Covariates,
    aligned: AlignedDataset,
    n_otus: usize,
}

fn load_inputs(
    counts: &Path,
    tree: &Path,
    covariates: &Path,
    group: &str,
    adjust: &[String],
) -> Result<LoadedInputs, AppError> {
    let tree = load_tree(tree)?;
    let table = load_counts(counts)
        .with_context(|| format!("loading {}", counts.display()))
        .map_err(AppError::input)?;
    let mut covs = load_covariates(covariates, group, adjust)
        .with_context(|| format!("loading {}", covariates.display()))
        .map_err(AppError::input)?;
    covs.standardize()
        .context("standardizing covariates")
        .map_err(AppError::input)?;
    let n_otus = table.n_otus();
    let aligned = AlignedDataset::aggregate(&table, &tree, &covs)
        .context("aligning counts with covariates and tree")
        .map_err(AppError::input)?;
    Ok(LoadedInputs {
        tree,
        covariates: covs,
        aligned,
        n_otus,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), AppError> {
    std::fs::write(path, content)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(AppError::input)
}

fn cmd_test(args: &TestArgs) -> Result<(), AppError> {
    args.model.validate()?;
    let decisions = DecisionConfig {
        global_threshold: args.threshold_global,
        node_threshold: args.threshold_node,
    };
    decisions
        .validate()
        .context("decision thresholds")
        .map_err(AppError::input)?;
    let prior = args.model.prior_spec();
    prior
        .validate()
        .context("prior specification")
        .map_err(AppError::input)?;
    let tau_setting = args.model.tau_setting()?;

    let inputs = load_inputs(
        &args.counts,
        &args.tree,
        &args.covariates,
        &args.group,
        &args.adjust,
    )?;
    let tree = &inputs.tree;
    let alpha = solve_alpha(args.model.prjap, tree.internal_count());

    let (evidence, warnings) = compute_evidence(&inputs.aligned, tree, &prior)
        .context("computing node evidence")
        .map_err(AppError::numeric)?;
    let ar = ArConfig {
        alpha,
        kappa_mode: args.model.kappa.into(),
        tau: tau_setting,
    };
    let run = run_with_evidence(tree, &evidence, &ar, warnings)
        .context("message passing")
        .map_err(AppError::numeric)?;

    // Boost posterior and Bayes factor only make sense when tau was free.
    let tau_inference = match tau_setting {
        TauSetting::EmpiricalBayes { tau_max } => Some(
            tau_posterior_and_bf(tree, &evidence, alpha, ar.kappa_mode, tau_max)
                .context("boost posterior")
                .map_err(AppError::numeric)?,
        ),
        TauSetting::Fixed(_) => None,
    };

    let internal = tree.internal_nodes();
    let pmaps: Vec<f64> = internal.iter().map(|&id| run.pmaps[id]).collect();
    let node_decisions = significant_nodes(&pmaps, &decisions);
    let significant: Vec<usize> = node_decisions
        .rejected
        .iter()
        .map(|&i| internal[i])
        .collect();

    let nodes: Vec<NodeReport> = internal
        .iter()
        .map(|&id| NodeReport {
            id,
            depth: tree.depth(id),
            pmap: round_sig12(run.pmaps[id]),
            log_m0: round_sig12(run.evidence[id].log_m0),
            log_m1: round_sig12(run.evidence[id].log_m1),
            significant: significant.contains(&id),
        })
        .collect();

    let report = Report {
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        inputs: Inputs {
            counts: InputDigest {
                path: args.counts.display().to_string(),
                sha256: sha256_hex(&args.counts)?,
            },
            tree: InputDigest {
                path: args.tree.display().to_string(),
                sha256: sha256_hex(&args.tree)?,
            },
            covariates: InputDigest {
                path: args.covariates.display().to_string(),
                sha256: sha256_hex(&args.covariates)?,
            },
        },
        n_samples: inputs.aligned.n_samples(),
        n_otus: inputs.n_otus,
        n_internal_nodes: tree.internal_count(),
        dropped_samples: inputs.covariates.dropped_samples,
        group_coding: GroupCoding {
            column: args.group.clone(),
            zero_label: inputs.covariates.group_labels[0].clone(),
            one_label: inputs.covariates.group_labels[1].clone(),
        },
        standardized_columns: inputs
            .covariates
            .column_names
            .iter()
            .zip(&inputs.covariates.scalings)
            .filter_map(|(name, scaling)| {
                scaling.map(|s| StandardizedColumn {
                    column: name.clone(),
                    mean: round_sig12(s.mean),
                    sd: round_sig12(s.sd),
                })
            })
            .collect(),
        settings: Settings {
            prjap_target: args.model.prjap,
            alpha: round_sig12(alpha),
            kappa_mode: match args.model.kappa {
                KappaArg::Zero => "zero".into(),
                KappaArg::Tau => "tau".into(),
            },
            tau_mode: args.model.tau.clone(),
            tau_max: args.model.tau_max,
            nu_grid_points: prior.nu_grid_points,
            sigma_beta2: prior.sigma_beta_sq,
            sigma_gamma2: prior.sigma_gamma_sq,
            threshold_global: decisions.global_threshold,
            threshold_node: decisions.node_threshold,
        },
        results: Results {
            pjap: round_sig12(run.pjap),
            // exp(log posterior null probability) keeps precision when the
            // joint alternative probability is close to 1.
            one_minus_pjap: round_sig12(run.log_null_prob.exp()),
            log_null_prob: round_sig12(run.log_null_prob),
            log_marginal_likelihood: round_sig12(run.log_marginal),
            tau_hat: round_sig12(run.tau),
            kappa: round_sig12(run.kappa),
            global_reject: decide_global(run.pjap, &decisions),
            significant_nodes: significant.clone(),
            expected_false_discoveries: round_sig12(node_decisions.expected_fd),
            expected_false_negatives: round_sig12(node_decisions.expected_fn),
            tau_bayes_factor: tau_inference.as_ref().map(|t| TauBayesFactor {
                log_bf10: round_sig12(t.log_bf10),
                bf10: round_sig12(t.log_bf10.exp()),
            }),
            tau_profile: run.tau_profile.as_ref().map(|profile| {
                profile
                    .iter()
                    .map(|&(tau, log_marginal)| TauProfilePoint {
                        tau: round_sig12(tau),
                        log_marginal: round_sig12(log_marginal),
                    })
                    .collect()
            }),
            tau_posterior: tau_inference.as_ref().map(|t| {
                t.posterior
                    .iter()
                    .map(|&(tau, density)| TauPosteriorPoint {
                        tau: round_sig12(tau),
                        density: round_sig12(density),
                    })
                    .collect()
            }),
        },
        nodes,
        warnings: run.warnings.clone(),
    };

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(AppError::input)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&args.out.join("report.json"), &(json + "\n"))?;

    let mut tsv = String::from("node_id\tdepth\tpmap\tlog_m0\tlog_m1\tsignificant\n");
    for node in &report.nodes {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            node.id, node.depth, node.pmap, node.log_m0, node.log_m1, node.significant
        ));
    }
    write_file(&args.out.join("pmaps.tsv"), &tsv)?;

    let values: std::collections::HashMap<_, _> = internal
        .iter()
        .map(|&id| (id, run.pmaps[id]))
        .collect();
    let annotated = tree
        .to_annotated_newick(&values)
        .context("annotating tree")
        .map_err(AppError::numeric)?;
    write_file(&args.out.join("pmaps.nwk"), &(annotated + "\n"))?;

    println!(
        "pjap {:.6}  tau_hat {:.2}  global_reject {}  significant_nodes {}",
        run.pjap,
        run.tau,
        decide_global(run.pjap, &decisions),
        significant.len()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), AppError> {
    let tree = match (&args.tree, args.leaves) {
        (Some(path), None) => load_tree(path)?,
        (None, Some(k)) => {
            if k < 2 {
                return Err(AppError::input(anyhow!("--leaves must be at least 2")));
            }
            random_tree(k, args.seed)
        }
        _ => {
            return Err(AppError::input(anyhow!(
                "exactly one of --leaves or --tree is required"
            )))
        }
    };
    if !(args.theta_lo > 0.0 && args.theta_hi < 1.0 && args.theta_lo <= args.theta_hi) {
        return Err(AppError::input(anyhow!(
            "--theta-lo/--theta-hi must satisfy 0 < lo <= hi < 1"
        )));
    }
    if args.total_lo > args.total_hi {
        return Err(AppError::input(anyhow!("--total-lo exceeds --total-hi")));
    }
    let spec = ScenarioSpec {
        scenario: args.scenario.into(),
        p_percent: args.p,
        targets: args.targets.clone(),
        n0: args.n0,
        n1: args.n1,
        nu: args.nu,
        theta: ThetaSpec::Uniform {
            lo: args.theta_lo,
            hi: args.theta_hi,
        },
        totals: TotalsSpec::Uniform {
            lo: args.total_lo,
            hi: args.total_hi,
        },
        seed: args.seed,
    };
    let base = generate_base(&tree, &spec)
        .context("generating base counts")
        .map_err(AppError::input)?;
    let dataset = apply_scenario(&base, &tree, &spec)
        .context("applying scenario")
        .map_err(AppError::input)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(AppError::input)?;
    write_file(&args.out.join("tree.nwk"), &(tree.to_newick() + "\n"))?;
    write_file(&args.out.join("counts.tsv"), &dataset.table.to_tsv())?;
    write_file(&args.out.join("covariates.csv"), &dataset.covariates_csv())?;

    println!(
        "wrote {} samples x {} OTUs ({} modified columns)",
        dataset.table.n_samples(),
        dataset.table.n_otus(),
        dataset.modified.len()
    );
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> Result<(), AppError> {
    args.model.validate()?;
    let prior = args.model.prior_spec();
    prior
        .validate()
        .context("prior specification")
        .map_err(AppError::input)?;
    let tau_setting = args.model.tau_setting()?;
    let inputs = load_inputs(
        &args.counts,
        &args.tree,
        &args.covariates,
        &args.group,
        &args.adjust,
    )?;
    let p = inputs.aligned.n_adjust;
    let q: Vec<f64> = match args.q.as_slice() {
        [] => vec![0.5; p],
        [single] => vec![*single; p],
        explicit => explicit.to_vec(),
    };
    for &value in &q {
        if !(value > 0.0 && value <= 1.0) {
            return Err(AppError::input(anyhow!(
                "inclusion prior {value} outside (0, 1]"
            )));
        }
    }
    let alpha = solve_alpha(args.model.prjap, inputs.tree.internal_count());
    let ar = ArConfig {
        alpha,
        kappa_mode: args.model.kappa.into(),
        tau: tau_setting,
    };
    let posterior = enumerate_models(&inputs.aligned, &inputs.tree, &prior, &ar, &q).map_err(
        |err| match err {
            bgcr::select::SelectError::Engine(e) => AppError::numeric(anyhow!(e)),
            other => AppError::input(anyhow!(other)),
        },
    )?;

    let names = &inputs.covariates.column_names;
    let mut rows: Vec<&bgcr::select::ModelEntry> = posterior.models.iter().collect();
    rows.sort_by(|a, b| b.posterior.total_cmp(&a.posterior));

    let mut out = String::new();
    for line in CONFOUNDING_WARNING.split('\n') {
        out.push_str("# WARNING: ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("included\tlog_prior\tlog_marginal\tposterior\n");
    for entry in rows {
        let included: Vec<&str> = entry
            .included
            .iter()
            .zip(names)
            .filter_map(|(&r, name)| r.then_some(name.as_str()))
            .collect();
        let label = if included.is_empty() {
            "(none)".to_string()
        } else {
            included.join(",")
        };
        out.push_str(&format!(
            "{label}\t{}\t{}\t{}\n",
            round_sig12(entry.log_prior),
            round_sig12(entry.log_marginal),
            round_sig12(entry.posterior)
        ));
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(AppError::input)?;
    write_file(&args.out.join("model_posterior.tsv"), &out)?;
    eprintln!("WARNING: {CONFOUNDING_WARNING}");
    println!("wrote {} model rows", posterior.models.len());
    Ok(())
}
