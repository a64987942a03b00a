//! Commands behind the `sla` binary. Every command returns a process exit
//! code: 0 success, 1 invalid input, 2 non-convergence or failed
//! certification, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::{self, AllocationConfig, AllocationSummary, CostMatrix, ScheduleKind};
use crate::error::{invalid, Result, SlaError};
use crate::io::{self, JsonlWriter};
use crate::oracle::{self, Certificate, SlaInstance};
use crate::selftrain::{
    make_dataset, Assigner, ClassifierParams, Dataset, DatasetKind, DatasetSpec, TrainConfig,
    Trainer,
};
use crate::sinkhorn::{self, ScalingVars, SolveStatus, TransportProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sla",
    version,
    about = "Sinkhorn label allocation: solve, certify, train"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one allocation problem from a cost CSV.
    Solve(SolveArgs),
    /// Compare Sinkhorn against the exact min-cost-flow solution.
    Oracle(OracleArgs),
    /// Run a self-training experiment over a list of seeds.
    Train(TrainArgs),
    /// Repeat a training experiment for several values of gamma.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Headerless CSV, one row of per-class costs per example.
    pub cost: PathBuf,
    /// Per-class upper bounds, comma separated.
    #[arg(long, env = "SLA_BOUNDS", value_delimiter = ',', required = true)]
    pub bounds: Vec<f64>,
    #[arg(long, env = "SLA_RHO")]
    pub rho: f64,
    #[arg(long, env = "SLA_GAMMA", default_value_t = 100.0)]
    pub gamma: f64,
    #[arg(long, env = "SLA_TOLERANCE_FACTOR", default_value_t = 0.01)]
    pub tolerance_factor: f64,
    #[arg(long, default_value_t = sinkhorn::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, env = "SLA_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// JSON instance, instance list, or suite generator.
    pub instance: PathBuf,
    /// Plan to score against the exact optimum (single instance only).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, env = "SLA_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Run only this seed instead of the configured list.
    #[arg(long, env = "SLA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SLA_OUT")]
    pub out: Option<PathBuf>,
    /// Constant allocation fraction instead of the configured schedule.
    #[arg(long, env = "SLA_RHO")]
    pub rho: Option<f64>,
    /// Explicit per-class upper bounds, comma separated.
    #[arg(long, env = "SLA_BOUNDS", value_delimiter = ',')]
    pub bounds: Option<Vec<f64>>,
    #[arg(long, env = "SLA_TOLERANCE_FACTOR")]
    pub tolerance_factor: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML experiment file.
    #[arg(long, env = "SLA_CONFIG")]
    pub config: PathBuf,
    #[arg(long, env = "SLA_GAMMA")]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, env = "SLA_CONFIG")]
    pub config: PathBuf,
    /// Values of gamma to run, comma separated.
    #[arg(
        long,
        env = "SLA_GAMMA",
        value_delimiter = ',',
        default_value = "1,10,100,1000"
    )]
    pub gamma: Vec<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn exit_code(err: &SlaError) -> i32 {
    match err {
        SlaError::NumericalFailure(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn report(result: Result<i32>) -> i32 {
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub n: usize,
    pub k: usize,
    pub config: AllocationConfig,
    pub status: SolveStatus,
    pub tolerance: f64,
    /// `<plan, C>` over the class block.
    pub objective: f64,
    pub mass_floor: f64,
    pub class_caps: Vec<f64>,
    #[serde(flatten)]
    pub allocation: AllocationSummary,
}

/// Writes `plan.csv` (the `n x k` class block), `scalings.json` and
/// `summary.json` into `args.out`.
pub fn cmd_solve(args: &SolveArgs) -> i32 {
    report(solve(args))
}

fn solve(args: &SolveArgs) -> Result<i32> {
    let cost = CostMatrix::from_values(io::read_matrix_csv(&args.cost)?)?;
    let (n, k) = (cost.n(), cost.k());
    if args.bounds.len() != k {
        return invalid(format!(
            "{} bounds given for {k} classes",
            args.bounds.len()
        ));
    }
    let mut config = AllocationConfig::new(args.bounds.clone(), args.rho, args.gamma);
    config.tolerance_factor = args.tolerance_factor;
    config.max_iters = args.max_iters;
    config.validate()?;

    let problem = alloc::build_padded_problem(&cost, &config)?;
    let params = alloc::solver_params(&problem, &config)?;
    let (scaling, status) = sinkhorn::sinkhorn_solve(&problem, &params, None)?;
    let plan = sinkhorn::transport_plan(&problem, &scaling, config.gamma)?;
    let block = plan.slice(s![..n, ..k]).to_owned();

    fs::create_dir_all(&args.out)?;
    io::write_matrix_csv(&args.out.join("plan.csv"), &block)?;
    io::write_json(&args.out.join("scalings.json"), &scaling)?;
    let summary = SolveSummary {
        n,
        k,
        status,
        tolerance: params.tolerance,
        objective: sinkhorn::objective(&block, cost.values()),
        mass_floor: config.mass_floor(n),
        class_caps: (0..k).map(|j| config.class_cap(n, j)).collect(),
        allocation: alloc::allocation_summary(&plan),
        config,
    };
    io::write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "allocated_fraction={} iterations={} residual={} converged={}",
        summary.allocation.allocated_fraction, status.iterations, status.residual, status.converged
    );
    if status.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "sinkhorn stopped at the iteration cap above tolerance {}",
            params.tolerance
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// A plain balanced transport problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportInstance {
    pub cost: Vec<Vec<f64>>,
    pub row_targets: Vec<f64>,
    pub col_targets: Vec<f64>,
}

/// Parameters for a generated certification suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub count: usize,
    pub seed: u64,
    pub max_n: usize,
    pub max_k: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub instances: Vec<SlaInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateFile {
    pub generate: SuiteSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OracleInput {
    Transport(TransportInstance),
    Allocation(SlaInstance),
    Suite(SuiteFile),
    Generate(GenerateFile),
}

/// The instances described by a generator spec.
pub fn generate_suite(spec: &SuiteSpec) -> Vec<SlaInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| oracle::random_integral_instance(&mut rng, spec.max_n, spec.max_k, spec.gamma))
        .collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return invalid("ragged cost matrix");
    }
    let flat = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), k), flat).map_err(|e| SlaError::InvalidInput(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportReport {
    pub objective: f64,
    pub plan: Array2<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supplied_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supplied_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub passed: usize,
    pub total: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub certificates: Vec<Certificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportReport>,
    /// Gap of a supplied plan against the exact optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supplied_gap: Option<f64>,
}

/// Solves the instance(s) exactly, and for allocation instances also with
/// Sinkhorn at the instance's own gamma, reporting the objective gap.
pub fn cmd_oracle(args: &OracleArgs) -> i32 {
    report(oracle_cmd(args))
}

fn oracle_cmd(args: &OracleArgs) -> Result<i32> {
    let input: OracleInput = serde_json::from_slice(&fs::read(&args.instance)?)
        .map_err(|e| SlaError::InvalidInput(format!("{}: {e}", args.instance.display())))?;
    let supplied = args.plan.as_deref().map(io::read_matrix_csv).transpose()?;
    let instances = match input {
        OracleInput::Transport(t) => {
            let problem = TransportProblem::new(
                to_matrix(&t.cost)?,
                t.row_targets.into(),
                t.col_targets.into(),
            )?;
            let exact = oracle::exact_transport(&problem)?;
            let supplied_objective = match &supplied {
                Some(plan) if plan.dim() != problem.dim() => {
                    return invalid("supplied plan does not match the cost shape")
                }
                Some(plan) => Some(sinkhorn::objective(plan, problem.cost())),
                None => None,
            };
            println!("objective={}", exact.objective);
            let transport = TransportReport {
                objective: exact.objective,
                supplied_gap: supplied_objective.map(|o| o - exact.objective),
                supplied_objective,
                plan: exact.plan,
            };
            if let Some(gap) = transport.supplied_gap {
                println!("supplied_gap={gap}");
            }
            let rep = OracleReport {
                passed: 1,
                total: 1,
                certificates: vec![],
                supplied_gap: transport.supplied_gap,
                transport: Some(transport),
            };
            write_oracle_report(args, &rep)?;
            return Ok(EXIT_OK);
        }
        OracleInput::Allocation(i) => vec![i],
        OracleInput::Suite(s) => s.instances,
        OracleInput::Generate(g) => generate_suite(&g.generate),
    };
    if supplied.is_some() && instances.len() != 1 {
        return invalid("--plan needs a single instance");
    }

    let mut certificates = Vec::with_capacity(instances.len());
    for (idx, inst) in instances.iter().enumerate() {
        let cert = oracle::certify(inst)?;
        println!(
            "instance {idx}: n={} k={} exact={} sinkhorn={} gap={:.3e} allowed={:.3e} iterations={} {}",
            cert.n,
            cert.k,
            cert.exact_objective,
            cert.sinkhorn_objective,
            cert.gap,
            cert.allowed_gap,
            cert.status.iterations,
            if cert.passed { "pass" } else { "FAIL" }
        );
        certificates.push(cert);
    }
    let supplied_gap = match (&supplied, certificates.first()) {
        (Some(plan), Some(cert)) => {
            let cost = instances[0].cost_matrix()?;
            if plan.dim() != (cost.n(), cost.k()) {
                return invalid("supplied plan does not match the cost shape");
            }
            let gap = sinkhorn::objective(plan, cost.values()) - cert.exact_objective;
            println!("supplied_gap={gap}");
            Some(gap)
        }
        _ => None,
    };
    let passed = certificates.iter().filter(|c| c.passed).count();
    let total = certificates.len();
    println!("{passed}/{total} certified");
    write_oracle_report(
        args,
        &OracleReport {
            passed,
            total,
            certificates,
            transport: None,
            supplied_gap,
        },
    )?;
    Ok(if passed == total {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn write_oracle_report(args: &OracleArgs, rep: &OracleReport) -> Result<()> {
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        io::write_json(&out.join("oracle.json"), rep)?;
    }
    Ok(())
}

fn default_wilson_confidence() -> f64 {
    0.8
}

/// Where the per-class upper bounds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum BoundsSpec {
    /// Labeled class frequencies.
    Empirical,
    /// Upper end of the two-sided Wilson score interval.
    Wilson {
        #[serde(default = "default_wilson_confidence")]
        confidence: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl BoundsSpec {
    pub fn resolve(&self, class_counts: &[u64]) -> Result<Vec<f64>> {
        match self {
            BoundsSpec::Empirical => alloc::empirical_bounds(class_counts),
            BoundsSpec::Wilson { confidence } => {
                alloc::wilson_upper_bounds(class_counts, *confidence)
            }
            BoundsSpec::Explicit { values } if values.len() == class_counts.len() => {
                Ok(values.clone())
            }
            BoundsSpec::Explicit { values } => invalid(format!(
                "{} explicit bounds for {} classes",
                values.len(),
                class_counts.len()
            )),
        }
    }
}

fn default_gamma() -> f64 {
    100.0
}

fn default_tolerance_factor() -> f64 {
    0.01
}

fn default_max_iters() -> usize {
    sinkhorn::DEFAULT_MAX_ITERS
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::LinearRamp
}

fn default_bounds() -> BoundsSpec {
    BoundsSpec::Empirical
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum AssignerSpec {
    Sla {
        #[serde(default = "default_bounds")]
        bounds: BoundsSpec,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_tolerance_factor")]
        tolerance_factor: f64,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_schedule")]
        schedule: ScheduleKind,
    },
    ConfidenceThreshold {
        tau: f64,
    },
    PseudoLabel,
    SupervisedOnly,
}

fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    /// A directory written by [`io::export_dataset`].
    Import {
        #[serde(rename = "import")]
        path: PathBuf,
    },
    Generate(GeneratedDataset),
}

/// A generated dataset; without `seed` each run uses its own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedDataset {
    pub generator: DatasetKind,
    pub n: usize,
    pub labeled_per_class: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Training hyperparameters; omitted keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub unlabeled_weight: f64,
    pub lr_peak: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub hidden: usize,
    pub sla_every: usize,
    pub eval_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::desk_defaults(Assigner::SupervisedOnly, 0);
        Self {
            iterations: d.iterations,
            labeled_batch: d.labeled_batch,
            unlabeled_batch: d.unlabeled_batch,
            unlabeled_weight: d.unlabeled_weight,
            lr_peak: d.lr_peak,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            ema_decay: d.ema_decay,
            weak_noise: d.weak_noise,
            strong_noise: d.strong_noise,
            hidden: d.hidden,
            sla_every: d.sla_every,
            eval_every: d.eval_every,
        }
    }
}

/// A TOML experiment file.
///
/// ```toml
/// seeds = [0, 1, 2, 3, 4]
/// out_dir = "runs/blobs"
///
/// [dataset]
/// generator = { type = "gaussian_blobs", k = 4, spread = 0.4 }
/// n = 2016
/// labeled_per_class = 4
///
/// [train]
/// iterations = 20000
///
/// [assigner]
/// type = "sla"
/// bounds = { source = "wilson", confidence = 0.8 }
/// schedule = { kind = "linear_ramp" }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainSettings,
    pub assigner: AssignerSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SlaError::InvalidInput(e.to_string()))?;
        if cfg.seeds.is_empty() {
            return invalid("seed list is empty");
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SlaError::InvalidInput(e.to_string()))
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, o: &Overrides, gamma: Option<f64>) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        let wants_sla = o.rho.is_some()
            || o.bounds.is_some()
            || o.tolerance_factor.is_some()
            || gamma.is_some();
        match &mut self.assigner {
            AssignerSpec::Sla {
                bounds,
                gamma: g,
                tolerance_factor,
                schedule,
                ..
            } => {
                if let Some(rho) = o.rho {
                    *schedule = ScheduleKind::Constant { value: rho };
                }
                if let Some(values) = &o.bounds {
                    *bounds = BoundsSpec::Explicit {
                        values: values.clone(),
                    };
                }
                if let Some(tf) = o.tolerance_factor {
                    *tolerance_factor = tf;
                }
                if let Some(gamma) = gamma {
                    *g = gamma;
                }
            }
            _ if wants_sla => return invalid("allocation flags need an sla assigner"),
            _ => {}
        }
        Ok(self)
    }

    pub fn load_dataset(&self, run_seed: u64) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Import { path } => io::import_dataset(path),
            DatasetSource::Generate(g) => make_dataset(&self.dataset_spec(g, run_seed)),
        }
    }

    fn dataset_spec(&self, g: &GeneratedDataset, run_seed: u64) -> DatasetSpec {
        DatasetSpec {
            generator: g.generator,
            n: g.n,
            labeled_per_class: g.labeled_per_class,
            test_size: g.test_size,
            seed: g.seed.unwrap_or(run_seed),
        }
    }

    /// The full training configuration of one run.
    pub fn train_config(&self, dataset: &Dataset, seed: u64) -> Result<TrainConfig> {
        let assigner = match &self.assigner {
            AssignerSpec::Sla {
                bounds,
                gamma,
                tolerance_factor,
                max_iters,
                schedule,
            } => {
                let mut allocation =
                    AllocationConfig::new(bounds.resolve(&dataset.class_counts())?, 0.0, *gamma);
                allocation.tolerance_factor = *tolerance_factor;
                allocation.max_iters = *max_iters;
                Assigner::Sla {
                    allocation,
                    schedule: *schedule,
                }
            }
            AssignerSpec::ConfidenceThreshold { tau } => {
                Assigner::ConfidenceThreshold { tau: *tau }
            }
            AssignerSpec::PseudoLabel => Assigner::PseudoLabel,
            AssignerSpec::SupervisedOnly => Assigner::SupervisedOnly,
        };
        let t = &self.train;
        let config = TrainConfig {
            iterations: t.iterations,
            labeled_batch: t.labeled_batch,
            unlabeled_batch: t.unlabeled_batch,
            unlabeled_weight: t.unlabeled_weight,
            lr_peak: t.lr_peak,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            ema_decay: t.ema_decay,
            weak_noise: t.weak_noise,
            strong_noise: t.strong_noise,
            hidden: t.hidden,
            assigner,
            sla_every: t.sla_every,
            eval_every: t.eval_every,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Aggregate over the seeds of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mean_error: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single seed).
    pub std_error: f64,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub allocation_solves: usize,
    pub unconverged_solves: usize,
    /// Content hash of `config.toml` in the output directory.
    pub config_hash: String,
}

/// Per-seed record written next to the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    /// Hashes of imported dataset files, if any.
    pub input_hashes: Vec<(String, String)>,
    pub train_config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    pub final_ema_error: f64,
    pub final_error: f64,
    pub allocation_solves: usize,
    pub unconverged_solves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    pub seed: u64,
    pub iteration: usize,
    pub message: String,
    pub params: ClassifierParams,
    pub ema_params: ClassifierParams,
    pub scalings: Option<ScalingVars>,
    pub last_checkpoint: Option<crate::selftrain::CheckpointRecord>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn input_hashes(exp: &ExperimentConfig) -> Result<Vec<(String, String)>> {
    match &exp.dataset {
        DatasetSource::Import { path } => ["train.csv", "test.csv"]
            .iter()
            .map(|f| Ok((f.to_string(), io::content_hash(&fs::read(path.join(f))?))))
            .collect(),
        DatasetSource::Generate(_) => Ok(vec![]),
    }
}

/// Runs every seed of `exp` into `out`: `config.toml`, then per seed
/// `seed_<s>/trace.jsonl` and `seed_<s>/run.json`, then `summary.json`.
/// A numerical failure leaves `seed_<s>/diagnostic.json` behind.
pub fn run_experiment(exp: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    fs::create_dir_all(out)?;
    let snapshot = exp.to_toml()?;
    fs::write(out.join("config.toml"), &snapshot)?;
    let config_hash = io::content_hash(snapshot.as_bytes());
    let hashes = input_hashes(exp)?;

    let mut errors = Vec::with_capacity(exp.seeds.len());
    let (mut solves, mut unconverged) = (0, 0);
    for &seed in &exp.seeds {
        let dataset = exp.load_dataset(seed)?;
        let config = exp.train_config(&dataset, seed)?;
        let run_dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&run_dir)?;
        let mut trace = JsonlWriter::create(&run_dir.join("trace.jsonl"))?;

        let mut trainer = Trainer::new(&dataset, config.clone())?;
        while !trainer.is_done() {
            if let Err(e) = trainer.step() {
                if let SlaError::NumericalFailure(msg) = &e {
                    let path = run_dir.join("diagnostic.json");
                    io::write_json(
                        &path,
                        &Diagnostic {
                            seed,
                            iteration: trainer.iteration() + 1,
                            message: msg.clone(),
                            params: trainer.params().clone(),
                            ema_params: trainer.ema_params().clone(),
                            scalings: trainer.scalings().cloned(),
                            last_checkpoint: trainer.trace().last().cloned(),
                        },
                    )?;
                    eprintln!("diagnostic checkpoint: {}", path.display());
                }
                return Err(e);
            }
            if let Some(rec) = trainer.trace().last() {
                if rec.t == trainer.iteration() {
                    trace.write(rec)?;
                }
            }
        }
        let outcome = trainer.finish()?;
        let final_error = outcome.trace.last().map_or(f64::NAN, |r| r.test_error);
        let record = RunRecord {
            seed,
            config_hash: config_hash.clone(),
            input_hashes: hashes.clone(),
            dataset: match &exp.dataset {
                DatasetSource::Generate(g) => Some(exp.dataset_spec(g, seed)),
                DatasetSource::Import { .. } => None,
            },
            train_config: config,
            final_ema_error: outcome.final_ema_error,
            final_error,
            allocation_solves: outcome.allocation_solves,
            unconverged_solves: outcome.unconverged_solves,
        };
        io::write_json(&run_dir.join("run.json"), &record)?;
        println!("seed {seed}: ema test error {}", outcome.final_ema_error);
        errors.push(outcome.final_ema_error);
        solves += outcome.allocation_solves;
        unconverged += outcome.unconverged_solves;
    }
    let (mean_error, std_error) = mean_std(&errors);
    let summary = ExperimentSummary {
        mean_error,
        std_error,
        n_seeds: errors.len(),
        seeds: exp.seeds.clone(),
        errors,
        allocation_solves: solves,
        unconverged_solves: unconverged,
        config_hash,
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn load_experiment(
    path: &Path,
    overrides: &Overrides,
    gamma: Option<f64>,
) -> Result<(ExperimentConfig, PathBuf)> {
    let text = fs::read_to_string(path)?;
    let exp = ExperimentConfig::from_toml(&text)
        .map_err(|e| SlaError::InvalidInput(format!("{}: {e}", path.display())))?
        .with_overrides(overrides, gamma)?;
    let out = exp.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    Ok((exp, out))
}

pub fn cmd_train(args: &TrainArgs) -> i32 {
    report((|| {
        let (exp, out) = load_experiment(&args.config, &args.overrides, args.gamma)?;
        let summary = run_experiment(&exp, &out)?;
        println!(
            "mean_error={} std_error={} n_seeds={}",
            summary.mean_error, summary.std_error, summary.n_seeds
        );
        Ok(EXIT_OK)
    })())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub gamma: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub n_seeds: usize,
    pub unconverged_fraction: f64,
    /// More than half of the allocation solves hit the iteration cap.
    pub flagged: bool,
}

/// Runs the experiment once per gamma into `<out>/gamma_<g>` and writes
/// `<out>/sweep.json`.
pub fn cmd_sweep(args: &SweepArgs) -> i32 {
    report((|| {
        let (exp, out) = load_experiment(&args.config, &args.overrides, None)?;
        if !matches!(exp.assigner, AssignerSpec::Sla { .. }) {
            return invalid("sweep needs an sla assigner");
        }
        if args.gamma.is_empty() {
            return invalid("no gamma values");
        }
        let mut entries = Vec::new();
        for &gamma in &args.gamma {
            let exp = exp.clone().with_overrides(&no_overrides(), Some(gamma))?;
            let summary = run_experiment(&exp, &out.join(format!("gamma_{gamma}")))?;
            let unconverged_fraction = if summary.allocation_solves == 0 {
                0.0
            } else {
                summary.unconverged_solves as f64 / summary.allocation_solves as f64
            };
            let entry = SweepEntry {
                gamma,
                mean_error: summary.mean_error,
                std_error: summary.std_error,
                n_seeds: summary.n_seeds,
                unconverged_fraction,
                flagged: unconverged_fraction > 0.5,
            };
            println!(
                "gamma={gamma} mean_error={} std_error={} unconverged={:.3}{}",
                entry.mean_error,
                entry.std_error,
                unconverged_fraction,
                if entry.flagged { " (flagged)" } else { "" }
            );
            entries.push(entry);
        }
        io::write_json(&out.join("sweep.json"), &entries)?;
        Ok(EXIT_OK)
    })())
}

fn no_overrides() -> Overrides {
    Overrides {
        seed: None,
        out: None,
        rho: None,
        bounds: None,
        tolerance_factor: None,
    }
}
