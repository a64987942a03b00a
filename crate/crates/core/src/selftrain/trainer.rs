//! The self-training loop.
//!
//! Each iteration draws labeled and unlabeled minibatches, labels the weak
//! views of the unlabeled batch with the current model and assigner, takes a
//! Nesterov step on `L_l + lambda L_u` (strong views for the unlabeled term),
//! refreshes the cost rows of the visited examples and re-solves the
//! allocation problem at the scheduled `rho_t`, warm-started from the previous
//! scalings.

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assign::{assign_argmax, assign_confidence_threshold};
use super::data::{augment, Dataset};
use super::model::{evaluate, forward_batch, loss_and_grad, ClassifierParams, LossParts};
use super::optim::{cosine_lr, ema_update, nesterov_step};
use crate::alloc::{
    self, AllocationConfig, AllocationSchedule, CostMatrix, ScheduleKind, SoftLabel,
};
use crate::error::{invalid, Result, SlaError};
use crate::sinkhorn::{ScalingVars, SolveStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Assigner {
    /// Sinkhorn label allocation. `allocation.rho` is replaced every
    /// iteration by the schedule value.
    Sla {
        allocation: AllocationConfig,
        schedule: ScheduleKind,
    },
    ConfidenceThreshold {
        tau: f64,
    },
    PseudoLabel,
    SupervisedOnly,
}

fn default_sla_every() -> usize {
    1
}

fn default_eval_every() -> usize {
    500
}

fn default_hidden() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// `lambda`
    pub unlabeled_weight: f64,
    pub lr_peak: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub weak_noise: f64,
    pub strong_noise: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub assigner: Assigner,
    /// Re-solve the allocation every this many iterations.
    #[serde(default = "default_sla_every")]
    pub sla_every: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 20k iterations, batches 8/56, momentum 0.9,
    /// lambda 1, EMA 0.999, peak lr 0.03, weight decay 5e-4.
    pub fn desk_defaults(assigner: Assigner, seed: u64) -> Self {
        Self {
            iterations: 20_000,
            labeled_batch: 8,
            unlabeled_batch: 56,
            unlabeled_weight: 1.0,
            lr_peak: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            weak_noise: 0.05,
            strong_noise: 0.3,
            hidden: default_hidden(),
            assigner,
            sla_every: 1,
            eval_every: default_eval_every(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return invalid("need at least two iterations");
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return invalid("batch sizes must be positive");
        }
        if self.unlabeled_weight.is_nan() || self.unlabeled_weight < 0.0 {
            return invalid("unlabeled weight must be nonnegative");
        }
        if self.lr_peak.is_nan() || self.lr_peak <= 0.0 {
            return invalid("lr_peak must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid("momentum must be in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return invalid("weight decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return invalid("ema decay must be in [0, 1)");
        }
        if !(self.weak_noise >= 0.0 && self.strong_noise >= self.weak_noise) {
            return invalid("need 0 <= weak_noise <= strong_noise");
        }
        if self.sla_every == 0 || self.eval_every == 0 {
            return invalid("sla_every and eval_every must be positive");
        }
        match &self.assigner {
            Assigner::Sla {
                allocation,
                schedule,
            } => {
                allocation.validate()?;
                AllocationSchedule::new(*schedule, self.iterations)?;
            }
            Assigner::ConfidenceThreshold { tau } if !(*tau > 0.0 && *tau < 1.0) => {
                return invalid("confidence threshold must be in (0, 1)");
            }
            _ => {}
        }
        Ok(())
    }
}

/// One line of the metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub t: usize,
    pub rho_t: Option<f64>,
    pub test_error: f64,
    pub ema_test_error: f64,
    pub allocated_fraction: Option<f64>,
    pub per_class_mass: Option<Vec<f64>>,
    pub sinkhorn_iters: Option<usize>,
    pub col_residual: Option<f64>,
    pub lr: f64,
    pub loss: LossParts,
    /// Mean class mass of the soft labels used in this step.
    pub soft_label_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub allocation: Option<AllocationCheck>,
}

/// Constraint levels in force for the allocation recorded at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationCheck {
    pub converged: bool,
    pub total_mass: f64,
    /// `n (rho_t - mu+) - 1`
    pub mass_floor: f64,
    /// `1 + n b_j`
    pub class_caps: Vec<f64>,
    /// Sinkhorn tolerance `eps_t`.
    pub tolerance: f64,
    /// Largest row mass on the class block.
    pub max_row_mass: f64,
    /// Whether the solve ran at a stride greater than one iteration.
    pub strided: bool,
}

impl AllocationCheck {
    pub fn mass_floor_holds(&self) -> bool {
        self.total_mass >= self.mass_floor - self.tolerance
    }

    pub fn class_caps_hold(&self, per_class_mass: &[f64]) -> bool {
        per_class_mass
            .iter()
            .zip(&self.class_caps)
            .all(|(m, cap)| *m <= cap + self.tolerance)
    }
}

struct Streams {
    labeled_idx: ChaCha8Rng,
    unlabeled_idx: ChaCha8Rng,
    labeled_aug: ChaCha8Rng,
    unlabeled_aug: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn views(dataset: &Dataset, rows: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dataset.dim()));
    for (mut o, &i) in out.outer_iter_mut().zip(rows) {
        o.assign(&augment(dataset.features.row(i), sigma, rng));
    }
    out
}

struct SlaState {
    config: AllocationConfig,
    schedule: AllocationSchedule,
    scalings: ScalingVars,
    last_status: Option<SolveStatus>,
    last_rho: f64,
    solves: usize,
    unconverged: usize,
}

/// Owns the full state of a training run.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    unlabeled: Vec<usize>,
    params: ClassifierParams,
    ema: ClassifierParams,
    buffers: ClassifierParams,
    cost: CostMatrix,
    visited: Vec<bool>,
    sla: Option<SlaState>,
    streams: Streams,
    t: usize,
    trace: Vec<CheckpointRecord>,
    step_losses: Vec<LossParts>,
    last_soft_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub ema_params: ClassifierParams,
    pub params: ClassifierParams,
    pub trace: Vec<CheckpointRecord>,
    /// Loss of every step, in order.
    pub step_losses: Vec<LossParts>,
    pub final_ema_error: f64,
    /// Allocation solves run, and how many stopped at the iteration cap.
    pub allocation_solves: usize,
    pub unconverged_solves: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let unlabeled = dataset.unlabeled_indices();
        let k = dataset.num_classes;
        let sla = match &config.assigner {
            Assigner::Sla {
                allocation,
                schedule,
            } => {
                if allocation.upper_bounds.len() != k {
                    return invalid(format!(
                        "{} upper bounds for {k} classes",
                        allocation.upper_bounds.len()
                    ));
                }
                if unlabeled.is_empty() {
                    return invalid("SLA needs unlabeled examples");
                }
                Some(SlaState {
                    config: allocation.with_rho(0.0),
                    schedule: AllocationSchedule::new(*schedule, config.iterations)?,
                    scalings: ScalingVars::zeros(unlabeled.len() + 1, k + 1),
                    last_status: None,
                    solves: 0,
                    unconverged: 0,
                    last_rho: 0.0,
                })
            }
            _ => None,
        };
        let mut init_rng = stream(config.seed, 0);
        let params = ClassifierParams::init(dataset.dim(), config.hidden, k, &mut init_rng);
        let cost = CostMatrix::uniform(unlabeled.len().max(1), k)?;
        Ok(Self {
            dataset,
            ema: params.clone(),
            buffers: params.zeros_like(),
            params,
            cost,
            visited: vec![false; unlabeled.len()],
            unlabeled,
            sla,
            streams: Streams {
                labeled_idx: stream(config.seed, 1),
                unlabeled_idx: stream(config.seed, 2),
                labeled_aug: stream(config.seed, 3),
                unlabeled_aug: stream(config.seed, 4),
            },
            config,
            t: 0,
            trace: Vec::new(),
            step_losses: Vec::new(),
            last_soft_mass: 0.0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.iterations
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn ema_params(&self) -> &ClassifierParams {
        &self.ema
    }

    /// Cost rows of the unlabeled examples, in [`Dataset::unlabeled_indices`] order.
    pub fn cost_matrix(&self) -> &CostMatrix {
        &self.cost
    }

    /// Which unlabeled rows have been drawn into a batch so far.
    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn scalings(&self) -> Option<&ScalingVars> {
        self.sla.as_ref().map(|s| &s.scalings)
    }

    /// Status of the most recent allocation solve.
    pub fn last_solve(&self) -> Option<SolveStatus> {
        self.sla.as_ref().and_then(|s| s.last_status)
    }

    pub fn trace(&self) -> &[CheckpointRecord] {
        &self.trace
    }

    fn sample_batch(rng: &mut ChaCha8Rng, pool: usize, size: usize) -> Vec<usize> {
        if size <= pool {
            index::sample(rng, pool, size).into_vec()
        } else {
            (0..size).map(|_| rng.random_range(0..pool)).collect()
        }
    }

    /// Runs one iteration. Returns the loss of the step.
    pub fn step(&mut self) -> Result<LossParts> {
        if self.is_done() {
            return invalid("training already finished");
        }
        self.t += 1;
        let t = self.t;
        let cfg = &self.config;

        let lb = Self::sample_batch(
            &mut self.streams.labeled_idx,
            self.dataset.labeled_indices.len(),
            cfg.labeled_batch,
        );
        let labeled_rows: Vec<usize> = lb
            .iter()
            .map(|&i| self.dataset.labeled_indices[i])
            .collect();
        let labels: Vec<usize> = labeled_rows
            .iter()
            .map(|&i| self.dataset.labels[i].expect("labeled index"))
            .collect();
        let ub = if self.unlabeled.is_empty() {
            Vec::new()
        } else {
            Self::sample_batch(
                &mut self.streams.unlabeled_idx,
                self.unlabeled.len(),
                cfg.unlabeled_batch,
            )
        };
        let unlabeled_rows: Vec<usize> = ub.iter().map(|&i| self.unlabeled[i]).collect();

        let ds = self.dataset;
        let labeled_x = views(
            ds,
            &labeled_rows,
            cfg.weak_noise,
            &mut self.streams.labeled_aug,
        );
        let weak_x = views(
            ds,
            &unlabeled_rows,
            cfg.weak_noise,
            &mut self.streams.unlabeled_aug,
        );
        let strong_x = views(
            ds,
            &unlabeled_rows,
            cfg.strong_noise,
            &mut self.streams.unlabeled_aug,
        );

        // labels come from the pre-update model on weak views
        let weak_probs = forward_batch(&self.params, weak_x.view());
        let targets: Vec<SoftLabel> = match &cfg.assigner {
            Assigner::Sla { allocation, .. } => {
                let beta = self.sla.as_ref().expect("sla state").scalings.beta.to_vec();
                alloc::soft_labels(weak_probs.view(), &beta, allocation.gamma)?
            }
            Assigner::ConfidenceThreshold { tau } => {
                assign_confidence_threshold(weak_probs.view(), *tau)
            }
            Assigner::PseudoLabel => assign_argmax(weak_probs.view()),
            Assigner::SupervisedOnly => Vec::new(),
        };
        self.last_soft_mass = if targets.is_empty() {
            0.0
        } else {
            targets.iter().map(SoftLabel::mass).sum::<f64>() / targets.len() as f64
        };

        let unlabeled_x = if targets.is_empty() {
            strong_x.slice(ndarray::s![..0, ..]).to_owned()
        } else {
            strong_x
        };
        let (loss, grads) = loss_and_grad(
            &self.params,
            labeled_x.view(),
            &labels,
            unlabeled_x.view(),
            &targets,
            cfg.unlabeled_weight,
        );
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(SlaError::NumericalFailure(format!(
                "non-finite loss or gradient at iteration {t}"
            )));
        }
        let lr = cosine_lr(t, cfg.iterations, cfg.lr_peak);
        nesterov_step(
            &mut self.params,
            &grads,
            &mut self.buffers,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
        ema_update(&mut self.ema, &self.params, cfg.ema_decay);

        for (&i, p) in ub.iter().zip(weak_probs.outer_iter()) {
            let row = p.to_vec();
            self.cost.set_row(i, &row)?;
            self.visited[i] = true;
        }

        if let Some(sla) = self.sla.as_mut() {
            let rho = alloc::schedule_value(&sla.schedule, t)?;
            if t.is_multiple_of(cfg.sla_every) || t == cfg.iterations {
                sla.config = sla.config.with_rho(rho);
                let (scalings, status) =
                    alloc::allocate(&self.cost, &sla.config, Some(&sla.scalings)).map_err(|e| {
                        match e {
                            SlaError::NumericalFailure(msg) => SlaError::NumericalFailure(format!(
                                "allocation at iteration {t}: {msg}"
                            )),
                            other => other,
                        }
                    })?;
                sla.scalings = scalings;
                sla.last_status = Some(status);
                sla.solves += 1;
                sla.unconverged += usize::from(!status.converged);
                sla.last_rho = rho;
            }
        }

        self.step_losses.push(loss);
        if t.is_multiple_of(self.config.eval_every) || t == self.config.iterations {
            let record = self.checkpoint(loss, lr)?;
            self.trace.push(record);
        }
        Ok(loss)
    }

    fn checkpoint(&self, loss: LossParts, lr: f64) -> Result<CheckpointRecord> {
        let ds = self.dataset;
        let test_error = evaluate(&self.params, ds.test_features.view(), &ds.test_labels)?;
        let ema_test_error = evaluate(&self.ema, ds.test_features.view(), &ds.test_labels)?;
        let mut record = CheckpointRecord {
            t: self.t,
            rho_t: None,
            test_error,
            ema_test_error,
            allocated_fraction: None,
            per_class_mass: None,
            sinkhorn_iters: None,
            col_residual: None,
            lr,
            loss,
            soft_label_mass: self.last_soft_mass,
            allocation: None,
        };
        if let Some(sla) = &self.sla {
            let n = self.cost.n();
            let plan = alloc::allocation_plan(&self.cost, &sla.config, &sla.scalings)?;
            let summary = alloc::allocation_summary(&plan);
            let problem = alloc::build_padded_problem(&self.cost, &sla.config)?;
            let tolerance = alloc::solver_params(&problem, &sla.config)?.tolerance;
            let block = plan.slice(ndarray::s![..n, ..self.dataset.num_classes]);
            let max_row_mass = block.sum_axis(Axis(1)).fold(0.0f64, |a, &b| a.max(b));
            let status = sla.last_status;
            record.rho_t = Some(sla.last_rho);
            record.allocated_fraction = Some(summary.allocated_fraction);
            record.sinkhorn_iters = status.map(|s| s.iterations);
            record.col_residual = status.map(|s| s.residual);
            record.allocation = Some(AllocationCheck {
                converged: status.is_some_and(|s| s.converged),
                total_mass: summary.allocated_fraction * n as f64,
                mass_floor: sla.config.mass_floor(n),
                class_caps: (0..self.dataset.num_classes)
                    .map(|j| sla.config.class_cap(n, j))
                    .collect(),
                tolerance,
                max_row_mass,
                strided: self.config.sla_every > 1,
            });
            record.per_class_mass = Some(summary.per_class_mass);
        }
        Ok(record)
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let ds = self.dataset;
        let final_ema_error = evaluate(&self.ema, ds.test_features.view(), &ds.test_labels)?;
        let (allocation_solves, unconverged_solves) = self
            .sla
            .as_ref()
            .map_or((0, 0), |s| (s.solves, s.unconverged));
        Ok(TrainOutcome {
            allocation_solves,
            unconverged_solves,
            ema_params: self.ema,
            params: self.params,
            trace: self.trace,
            step_losses: self.step_losses,
            final_ema_error,
        })
    }
}

/// Runs the full training loop and returns the EMA classifier with its trace.
pub fn self_train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    while !trainer.is_done() {
        trainer.step()?;
    }
    trainer.finish()
}
