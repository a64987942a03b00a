//! Sinkhorn label allocation.
//!
//! The allocation LP over an `n x k` cost matrix
//!
//! ```text
//! minimize <Q, C>
//!   s.t.  Q >= 0,  Q 1_k <= 1_n,  Q^T 1_n <= 1_k + n b,  1^T Q 1 >= n (rho - mu+) - 1
//! ```
//!
//! with `mu = 1 - b^T 1`, becomes a balanced `(n+1) x (k+1)` transport problem
//! once the row, column and mass slacks are gathered into an extra row and
//! column of zero cost. [`build_padded_problem`] performs that reduction and
//! [`allocate`] solves it with the log-domain Sinkhorn solver.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::sinkhorn::{self, ScalingVars, SinkhornParams, SolveStatus, TransportProblem};

/// Probabilities are clamped to this floor before taking `-log p`.
pub const PROB_FLOOR: f64 = 1e-8;
/// Largest cost entry, `-log(PROB_FLOOR)`.
pub const COST_MAX: f64 = 18.420_680_743_952_367;
/// Rows with less than this much class mass count as abstained in summaries.
pub const ASSIGNED_THRESHOLD: f64 = 0.5;

const SIMPLEX_TOL: f64 = 1e-6;

/// Per-example, per-class label costs `-log p(j | x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    /// Wraps raw costs; entries must lie in `[0, COST_MAX]`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, k) = values.dim();
        if n == 0 {
            return invalid("cost matrix needs at least one row");
        }
        if k < 2 {
            return invalid(format!("cost matrix needs at least two classes, got {k}"));
        }
        if let Some(bad) = values.iter().find(|&&c| !(0.0..=COST_MAX).contains(&c)) {
            return invalid(format!("cost entry {bad} outside [0, {COST_MAX}]"));
        }
        Ok(Self { values })
    }

    /// Every entry `log k`, the cost of a uniform prediction.
    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::from_values(Array2::from_elem((n, k), (k as f64).ln()))
    }

    /// Overwrites row `i` with `-log max(p, PROB_FLOOR)`.
    pub fn set_row(&mut self, i: usize, probs: &[f64]) -> Result<()> {
        if i >= self.n() || probs.len() != self.k() {
            return invalid(format!("row {i} / width {} out of range", probs.len()));
        }
        check_simplex(probs, i)?;
        for (c, &p) in self.values.row_mut(i).iter_mut().zip(probs) {
            *c = clamped_cost(p);
        }
        Ok(())
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }
}

fn clamped_cost(p: f64) -> f64 {
    (-(p.max(PROB_FLOOR)).ln()).clamp(0.0, COST_MAX)
}

fn check_simplex(row: &[f64], index: usize) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return invalid(format!(
            "row {index} has a negative or non-finite probability"
        ));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return invalid(format!("row {index} sums to {s}, not 1"));
    }
    Ok(())
}

/// `C_ij = -log max(p_ij, PROB_FLOOR)`; rows must lie on the simplex.
pub fn cost_from_probabilities(probs: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    for (i, row) in probs.outer_iter().enumerate() {
        check_simplex(row.as_slice().unwrap_or(&row.to_vec()), i)?;
    }
    CostMatrix::from_values(probs.mapv(clamped_cost))
}

fn default_tolerance_factor() -> f64 {
    0.01
}

fn default_max_iters() -> usize {
    sinkhorn::DEFAULT_MAX_ITERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    /// Per-class caps `b` on the fraction of examples given each label.
    pub upper_bounds: Vec<f64>,
    /// Fraction `rho` of the examples that must receive label mass.
    pub rho: f64,
    pub gamma: f64,
    /// Sinkhorn tolerance is `tolerance_factor * ||c||_1`.
    #[serde(default = "default_tolerance_factor")]
    pub tolerance_factor: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

impl AllocationConfig {
    pub fn new(upper_bounds: Vec<f64>, rho: f64, gamma: f64) -> Self {
        Self {
            upper_bounds,
            rho,
            gamma,
            tolerance_factor: default_tolerance_factor(),
            max_iters: default_max_iters(),
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self {
            rho,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper_bounds.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return invalid("upper bounds must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return invalid(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.tolerance_factor > 0.0 && self.tolerance_factor.is_finite()) {
            return invalid("tolerance_factor must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        Ok(())
    }

    /// `mu = 1 - sum(b)`
    pub fn mu(&self) -> f64 {
        1.0 - self.upper_bounds.iter().sum::<f64>()
    }

    /// Lower bound on the class mass, `n (rho - mu+) - 1`.
    pub fn mass_floor(&self, n: usize) -> f64 {
        n as f64 * (self.rho - self.mu().max(0.0)) - 1.0
    }

    /// Upper bound on the mass of class `j`, `1 + n b_j`.
    pub fn class_cap(&self, n: usize, j: usize) -> f64 {
        1.0 + n as f64 * self.upper_bounds[j]
    }
}

/// Row and column targets of the padded problem for `n` examples.
pub fn padded_targets(n: usize, config: &AllocationConfig) -> (Array1<f64>, Array1<f64>) {
    let k = config.upper_bounds.len();
    let nf = n as f64;
    let mu = config.mu();
    let (mu_pos, mu_neg) = (mu.max(0.0), mu.min(0.0));
    let mut r = Array1::ones(n + 1);
    r[n] = 1.0 + k as f64 + nf * (1.0 - config.rho - mu_neg);
    let mut c = Array1::zeros(k + 1);
    for (cj, &b) in c.iter_mut().zip(&config.upper_bounds) {
        *cj = 1.0 + nf * b;
    }
    c[k] = 1.0 + nf * (1.0 - config.rho + mu_pos);
    (r, c)
}

/// Builds the `(n+1) x (k+1)` transport instance whose padding row and
/// column carry the slack variables at zero cost.
pub fn build_padded_problem(
    cost: &CostMatrix,
    config: &AllocationConfig,
) -> Result<TransportProblem> {
    config.validate()?;
    let (n, k) = (cost.n(), cost.k());
    if config.upper_bounds.len() != k {
        return invalid(format!(
            "{} upper bounds for {k} classes",
            config.upper_bounds.len()
        ));
    }
    let mut padded = Array2::zeros((n + 1, k + 1));
    padded.slice_mut(ndarray::s![..n, ..k]).assign(&cost.values);
    let (r, c) = padded_targets(n, config);
    TransportProblem::new(padded, r, c)
}

/// Sinkhorn parameters for a padded problem: tolerance scales with `||c||_1`.
pub fn solver_params(
    problem: &TransportProblem,
    config: &AllocationConfig,
) -> Result<SinkhornParams> {
    let tolerance = config.tolerance_factor * problem.col_targets().sum();
    SinkhornParams::new(config.gamma, tolerance, config.max_iters)
}

/// Solves the padded allocation problem. The returned scalings have lengths
/// `n+1` and `k+1`; the last entry of `beta` is the abstention threshold.
pub fn allocate(
    cost: &CostMatrix,
    config: &AllocationConfig,
    warm_start: Option<&ScalingVars>,
) -> Result<(ScalingVars, SolveStatus)> {
    let problem = build_padded_problem(cost, config)?;
    let params = solver_params(&problem, config)?;
    sinkhorn::sinkhorn_solve(&problem, &params, warm_start)
}

/// The padded plan implied by a set of scalings.
pub fn allocation_plan(
    cost: &CostMatrix,
    config: &AllocationConfig,
    scaling: &ScalingVars,
) -> Result<Array2<f64>> {
    let problem = build_padded_problem(cost, config)?;
    sinkhorn::transport_plan(&problem, scaling, config.gamma)
}

/// A label vector with mass at most one; the deficit is the abstention weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub weights: Vec<f64>,
    pub abstain_weight: f64,
}

impl SoftLabel {
    pub fn abstain(k: usize) -> Self {
        Self {
            weights: vec![0.0; k],
            abstain_weight: 1.0,
        }
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[class] = 1.0;
        Self {
            weights,
            abstain_weight: 0.0,
        }
    }

    /// Total class mass `eta = sum(q)`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, eta: f64) -> Self {
        let weights: Vec<f64> = self.weights.iter().map(|w| w * eta).collect();
        let abstain_weight = 1.0 - weights.iter().sum::<f64>();
        Self {
            weights,
            abstain_weight,
        }
    }
}

/// Rescales each probability row with the class scalings:
/// `q_j ∝ p_j^gamma exp(beta_j)`, normalized together with `exp(beta_{k+1})`.
pub fn soft_labels(probs: ArrayView2<'_, f64>, beta: &[f64], gamma: f64) -> Result<Vec<SoftLabel>> {
    let k = probs.ncols();
    if beta.len() != k + 1 {
        return invalid(format!(
            "beta has length {}, expected {}",
            beta.len(),
            k + 1
        ));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return invalid("beta must be finite");
    }
    let mut logits = vec![0.0; k + 1];
    probs
        .outer_iter()
        .enumerate()
        .map(|(i, row)| {
            let row = row.to_vec();
            check_simplex(&row, i)?;
            for (l, (&p, &b)) in logits.iter_mut().zip(row.iter().zip(beta)) {
                *l = gamma * p.ln() + b;
            }
            logits[k] = beta[k];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let weights = logits[..k].iter().map(|l| (l - m).exp() / z).collect();
            Ok(SoftLabel {
                weights,
                abstain_weight: (logits[k] - m).exp() / z,
            })
        })
        .collect()
}

/// Upper endpoints of two-sided Wilson score intervals for each class proportion.
pub fn wilson_upper_bounds(class_counts: &[u64], confidence: f64) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return invalid("no class counts");
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return invalid(format!("confidence must be in (0, 1), got {confidence}"));
    }
    let total: u64 = class_counts.iter().sum();
    if total == 0 {
        return invalid("class counts sum to zero");
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + confidence));
    let n = total as f64;
    let z2 = z * z;
    Ok(class_counts
        .iter()
        .map(|&count| {
            let p = count as f64 / n;
            let centre = p + z2 / (2.0 * n);
            let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            ((centre + spread) / (1.0 + z2 / n)).min(1.0)
        })
        .collect())
}

/// Empirical class proportions.
pub fn empirical_bounds(class_counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = class_counts.iter().sum();
    if total == 0 {
        return invalid("class counts sum to zero");
    }
    Ok(class_counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    LinearRamp,
    TruncatedRamp { cap: f64 },
    Constant { value: f64 },
}

/// Allocation fraction `rho_t` as a function of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationSchedule {
    pub kind: ScheduleKind,
    pub horizon: usize,
}

impl AllocationSchedule {
    pub fn new(kind: ScheduleKind, horizon: usize) -> Result<Self> {
        let s = Self { kind, horizon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScheduleKind::TruncatedRamp { cap: v } | ScheduleKind::Constant { value: v }
                if !(0.0..=1.0).contains(&v) =>
            {
                invalid(format!("schedule level {v} outside [0, 1]"))
            }
            ScheduleKind::LinearRamp | ScheduleKind::TruncatedRamp { .. } if self.horizon < 2 => {
                invalid("ramp schedules need a horizon of at least 2")
            }
            _ if self.horizon == 0 => invalid("horizon must be positive"),
            _ => Ok(()),
        }
    }
}

/// `rho_t` for `1 <= t <= T`.
pub fn schedule_value(schedule: &AllocationSchedule, t: usize) -> Result<f64> {
    schedule.validate()?;
    if t < 1 || t > schedule.horizon {
        return invalid(format!("t={t} outside [1, {}]", schedule.horizon));
    }
    let ramp = || (t - 1) as f64 / (schedule.horizon - 1) as f64;
    Ok(match schedule.kind {
        ScheduleKind::LinearRamp => ramp(),
        ScheduleKind::TruncatedRamp { cap } => cap.min(ramp()),
        ScheduleKind::Constant { value } => value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    /// Class mass on the `n x k` block divided by `n`.
    pub allocated_fraction: f64,
    pub per_class_mass: Vec<f64>,
    /// Rows whose class mass is below [`ASSIGNED_THRESHOLD`].
    pub abstained_rows: usize,
}

/// Diagnostics of a padded `(n+1) x (k+1)` plan.
pub fn allocation_summary(plan: &Array2<f64>) -> AllocationSummary {
    let (rows, cols) = plan.dim();
    let (n, k) = (rows.saturating_sub(1), cols.saturating_sub(1));
    let block = plan.slice(ndarray::s![..n, ..k]);
    let row_mass = block.sum_axis(Axis(1));
    AllocationSummary {
        allocated_fraction: if n == 0 { 0.0 } else { block.sum() / n as f64 },
        per_class_mass: block.sum_axis(Axis(0)).to_vec(),
        abstained_rows: row_mass.iter().filter(|&&m| m < ASSIGNED_THRESHOLD).count(),
    }
}

/// `sum_j q_j log(q_j / p_j)`, with `0 log 0 = 0`.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi / pi).ln())
        .sum()
}

/// Shannon entropy in nats.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter()
        .filter(|&&qi| qi > 0.0)
        .map(|&qi| qi * qi.ln())
        .sum::<f64>()
}
