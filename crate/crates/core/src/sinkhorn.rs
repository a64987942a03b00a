//! Log-domain Sinkhorn-Knopp iteration for balanced entropic optimal transport.
//!
//! The kernel `exp(-gamma * cost)` is never formed. Each round starts with an
//! exact log-sum-exp sweep, then iterates cheaply on the resulting plan (whose
//! entries are bounded by the marginals) and absorbs the multiplicative
//! scalings back into the log potentials. This keeps the solver usable when
//! `gamma * cost` reaches the thousands.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SlaError};

/// Log-scaling assigned to an entry whose target marginal is exactly zero.
pub const ZERO_MASS_SENTINEL: f64 = -1e30;
const SENTINEL_CUTOFF: f64 = -1e29;

pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[inline]
fn is_sentinel(x: f64) -> bool {
    x <= SENTINEL_CUTOFF
}

/// A balanced transport instance: nonnegative cost plus row and column targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    cost: Array2<f64>,
    row_targets: Array1<f64>,
    col_targets: Array1<f64>,
}

impl TransportProblem {
    pub fn new(
        cost: Array2<f64>,
        row_targets: Array1<f64>,
        col_targets: Array1<f64>,
    ) -> Result<Self> {
        let (m, p) = cost.dim();
        if m == 0 || p == 0 {
            return invalid("cost matrix must be non-empty");
        }
        if row_targets.len() != m || col_targets.len() != p {
            return invalid(format!(
                "marginal lengths ({}, {}) do not match cost shape {m}x{p}",
                row_targets.len(),
                col_targets.len()
            ));
        }
        if cost.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return invalid("cost entries must be finite and nonnegative");
        }
        if row_targets
            .iter()
            .chain(col_targets.iter())
            .any(|&t| !t.is_finite() || t < 0.0)
        {
            return invalid("marginal targets must be finite and nonnegative");
        }
        let (sr, sc) = (row_targets.sum(), col_targets.sum());
        if (sr - sc).abs() > 1e-6 * sr.max(1.0) {
            return invalid(format!("unbalanced marginals: sum(r)={sr}, sum(c)={sc}"));
        }
        Ok(Self {
            cost,
            row_targets,
            col_targets,
        })
    }

    pub fn cost(&self) -> ArrayView2<'_, f64> {
        self.cost.view()
    }

    pub fn row_targets(&self) -> &Array1<f64> {
        &self.row_targets
    }

    pub fn col_targets(&self) -> &Array1<f64> {
        &self.col_targets
    }

    /// `(rows, cols)`
    pub fn dim(&self) -> (usize, usize) {
        self.cost.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub gamma: f64,
    /// l1 threshold on the column residual.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl SinkhornParams {
    pub fn new(gamma: f64, tolerance: f64, max_iters: usize) -> Result<Self> {
        let params = Self {
            gamma,
            tolerance,
            max_iters,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return invalid(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Log-domain scalings. The plan is `exp(alpha_i - gamma * cost_ij + beta_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingVars {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

impl ScalingVars {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            alpha: Array1::zeros(rows),
            beta: Array1::zeros(cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStatus {
    pub converged: bool,
    pub iterations: usize,
    /// Final l1 column residual.
    pub residual: f64,
}

/// Streaming log-sum-exp over rows for every column: `log sum_i exp(alpha_i - scaled_ij)`.
fn column_lse(scaled: &Array2<f64>, alpha: &Array1<f64>, out: &mut Array1<f64>) {
    let p = scaled.ncols();
    let mut maxes = vec![f64::NEG_INFINITY; p];
    let mut sums = vec![0.0f64; p];
    for (row, &a) in scaled.outer_iter().zip(alpha.iter()) {
        if is_sentinel(a) {
            continue;
        }
        for ((&s, m), acc) in row.iter().zip(maxes.iter_mut()).zip(sums.iter_mut()) {
            let v = a - s;
            if v > *m {
                *acc = *acc * (*m - v).exp() + 1.0;
                *m = v;
            } else {
                *acc += (v - *m).exp();
            }
        }
    }
    for ((o, m), s) in out.iter_mut().zip(maxes).zip(sums) {
        *o = if m == f64::NEG_INFINITY {
            m
        } else {
            m + s.ln()
        };
    }
}

/// `log sum_j exp(beta_j - scaled_ij)` for a single row.
fn row_lse(row: ndarray::ArrayView1<'_, f64>, beta: &Array1<f64>) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (&s, &b) in row.iter().zip(beta.iter()) {
        if !is_sentinel(b) {
            m = m.max(b - s);
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let sum: f64 = row
        .iter()
        .zip(beta.iter())
        .filter(|(_, &b)| !is_sentinel(b))
        .map(|(&s, &b)| (b - s - m).exp())
        .sum();
    m + sum.ln()
}

fn column_residual(col_targets: &Array1<f64>, beta: &Array1<f64>, col_lse: &Array1<f64>) -> f64 {
    col_targets
        .iter()
        .zip(beta.iter())
        .zip(col_lse.iter())
        .map(|((&c, &b), &l)| {
            let mass = if is_sentinel(b) { 0.0 } else { (b + l).exp() };
            (c - mass).abs()
        })
        .sum()
}

fn log_targets(targets: &Array1<f64>) -> Array1<f64> {
    targets.mapv(|t| if t > 0.0 { t.ln() } else { ZERO_MASS_SENTINEL })
}

fn check_finite(scaling: &ScalingVars, residual: f64, iterations: usize) -> Result<()> {
    if !residual.is_finite()
        || scaling
            .alpha
            .iter()
            .chain(scaling.beta.iter())
            .any(|x| !x.is_finite())
    {
        return Err(SlaError::NumericalFailure(format!(
            "non-finite scaling or residual after {iterations} iterations"
        )));
    }
    Ok(())
}

/// One exact sweep in the log domain, given the current column log-sum-exps.
fn log_domain_sweep(
    scaled: &Array2<f64>,
    log_r: &Array1<f64>,
    log_c: &Array1<f64>,
    col_lse: &Array1<f64>,
    scaling: &mut ScalingVars,
) -> Result<()> {
    for j in 0..log_c.len() {
        scaling.beta[j] = if is_sentinel(log_c[j]) {
            ZERO_MASS_SENTINEL
        } else if col_lse[j] == f64::NEG_INFINITY {
            return Err(SlaError::NumericalFailure(format!(
                "column {j} has positive target but no reachable mass"
            )));
        } else {
            log_c[j] - col_lse[j]
        };
    }
    for (i, row) in scaled.outer_iter().enumerate() {
        scaling.alpha[i] = if is_sentinel(log_r[i]) {
            ZERO_MASS_SENTINEL
        } else {
            let l = row_lse(row, &scaling.beta);
            if l == f64::NEG_INFINITY {
                return Err(SlaError::NumericalFailure(format!(
                    "row {i} has positive target but no reachable mass"
                )));
            }
            log_r[i] - l
        };
    }
    Ok(())
}

const SCALING_BOUND: f64 = 1e30;
/// Plan entries below `exp(FLUSH_LOG)` are stored as zero. Together with
/// `SCALING_BOUND` this keeps every product in the sweeps out of the
/// subnormal range, where floating-point arithmetic is very slow.
const FLUSH_LOG: f64 = -500.0;

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Sweeps on the current plan `exp(alpha_i - scaled_ij + beta_j)` with
/// multiplicative scalings `u`, `v`, folded back into `alpha`, `beta` once
/// either leaves `[1/SCALING_BOUND, SCALING_BOUND]` or a denominator
/// vanishes. Entries of the stored plan are bounded by the marginals, so
/// nothing overflows; flushed entries carry negligible mass.
/// Returns the column residual of the folded scalings.
fn scaled_sweeps(
    problem: &TransportProblem,
    scaled: &Array2<f64>,
    params: &SinkhornParams,
    kernel: &mut Array2<f64>,
    scaling: &mut ScalingVars,
    iterations: &mut usize,
) -> f64 {
    let (m, p) = problem.dim();
    // stored column-major so both reductions run over contiguous slices
    let kernel = kernel.as_slice_mut().expect("kernel is contiguous");
    for j in 0..p {
        let b = scaling.beta[j];
        let col = &mut kernel[j * m..(j + 1) * m];
        for (i, k) in col.iter_mut().enumerate() {
            let a = scaling.alpha[i];
            let x = a - scaled[[i, j]] + b;
            *k = if is_sentinel(a) || is_sentinel(b) || x < FLUSH_LOG {
                0.0
            } else {
                x.exp()
            };
        }
    }
    let kernel = &*kernel;
    let r = problem
        .row_targets
        .as_slice()
        .expect("targets are contiguous");
    let c = &problem.col_targets;
    let mut u = vec![1.0f64; m];
    let mut v = vec![1.0f64; p];
    let mut u_next = vec![1.0f64; m];
    let mut row_sums = vec![0.0f64; m];
    let out_of_range = |x: f64| !(x > 1.0 / SCALING_BOUND && x < SCALING_BOUND);
    let kernel_t_u = |u: &[f64], out: &mut [f64]| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(&kernel[j * m..(j + 1) * m], u);
        }
    };

    // column sums of the plan as built
    let mut col_sums = vec![0.0f64; p];
    kernel_t_u(&u, &mut col_sums);
    let mut residual;
    loop {
        let mut stalled = false;
        for j in 0..p {
            if c[j] > 0.0 {
                if col_sums[j] > 0.0 {
                    v[j] = c[j] / col_sums[j];
                } else {
                    stalled = true;
                }
            }
        }
        let mut u_in_range = true;
        if !stalled {
            row_sums.copy_from_slice(&kernel[..m]);
            row_sums.iter_mut().for_each(|s| *s *= v[0]);
            for (j, &vj) in v.iter().enumerate().skip(1) {
                for (s, &k) in row_sums.iter_mut().zip(&kernel[j * m..(j + 1) * m]) {
                    *s += k * vj;
                }
            }
            // branch-free so it vectorizes; rows with zero target keep u = 1
            let (mut lo, mut hi, mut dead) = (f64::INFINITY, 0.0f64, false);
            for ((un, &ri), &s) in u_next.iter_mut().zip(r).zip(&row_sums) {
                let active = ri > 0.0;
                dead |= active & (s <= 0.0);
                let q = if active { ri / s } else { 1.0 };
                *un = q;
                lo = lo.min(q);
                hi = hi.max(q);
            }
            if dead {
                stalled = true;
            } else {
                std::mem::swap(&mut u, &mut u_next);
                u_in_range = !(out_of_range(lo) || out_of_range(hi));
            }
        }
        if stalled {
            // leave the remaining work to an exact log-domain sweep
            residual = f64::INFINITY;
            break;
        }
        *iterations += 1;
        kernel_t_u(&u, &mut col_sums);
        residual = c
            .iter()
            .zip(&col_sums)
            .zip(&v)
            .map(|((&cj, &s), &vj)| (cj - s * vj).abs())
            .sum();
        if residual <= params.tolerance
            || *iterations >= params.max_iters
            || !residual.is_finite()
            || !u_in_range
            || v.iter().any(|&x| out_of_range(x))
        {
            break;
        }
    }
    for (a, &ui) in scaling.alpha.iter_mut().zip(&u) {
        if !is_sentinel(*a) {
            *a += ui.ln();
        }
    }
    for (b, &vj) in scaling.beta.iter_mut().zip(&v) {
        if !is_sentinel(*b) {
            *b += vj.ln();
        }
    }
    if residual.is_infinite() {
        // not measured; the caller recomputes it in the log domain
        return f64::MAX;
    }
    residual
}

/// Runs Sinkhorn iteration (beta update, then alpha update) until the l1
/// column residual of the implied plan is at most `params.tolerance`, or
/// `params.max_iters` sweeps have been made.
///
/// A warm start is checked first: if it already satisfies the tolerance no
/// sweep is performed.
pub fn sinkhorn_solve(
    problem: &TransportProblem,
    params: &SinkhornParams,
    warm_start: Option<&ScalingVars>,
) -> Result<(ScalingVars, SolveStatus)> {
    params.validate()?;
    let (m, p) = problem.dim();
    let log_r = log_targets(&problem.row_targets);
    let log_c = log_targets(&problem.col_targets);

    let mut scaling = match warm_start {
        Some(w) => {
            if w.alpha.len() != m || w.beta.len() != p {
                return invalid(format!(
                    "warm start has shape ({}, {}), problem is {m}x{p}",
                    w.alpha.len(),
                    w.beta.len()
                ));
            }
            if w.alpha.iter().chain(w.beta.iter()).any(|x| !x.is_finite()) {
                return invalid("warm start contains non-finite entries");
            }
            w.clone()
        }
        None => ScalingVars::zeros(m, p),
    };
    for (a, &lr) in scaling.alpha.iter_mut().zip(log_r.iter()) {
        if is_sentinel(lr) {
            *a = ZERO_MASS_SENTINEL;
        }
    }
    for (b, &lc) in scaling.beta.iter_mut().zip(log_c.iter()) {
        if is_sentinel(lc) {
            *b = ZERO_MASS_SENTINEL;
        }
    }

    let scaled = problem.cost.mapv(|c| params.gamma * c);
    let mut col_lse = Array1::zeros(p);
    column_lse(&scaled, &scaling.alpha, &mut col_lse);
    let mut residual = column_residual(&problem.col_targets, &scaling.beta, &col_lse);
    let mut iterations = 0;
    let mut kernel = Array2::zeros((p, m));

    while residual > params.tolerance && iterations < params.max_iters {
        log_domain_sweep(&scaled, &log_r, &log_c, &col_lse, &mut scaling)?;
        iterations += 1;
        column_lse(&scaled, &scaling.alpha, &mut col_lse);
        residual = column_residual(&problem.col_targets, &scaling.beta, &col_lse);
        check_finite(&scaling, residual, iterations)?;
        if residual <= params.tolerance || iterations >= params.max_iters {
            break;
        }
        residual = scaled_sweeps(
            problem,
            &scaled,
            params,
            &mut kernel,
            &mut scaling,
            &mut iterations,
        );
        check_finite(&scaling, residual, iterations)?;
        if residual > params.tolerance {
            column_lse(&scaled, &scaling.alpha, &mut col_lse);
            residual = column_residual(&problem.col_targets, &scaling.beta, &col_lse);
        }
    }

    let status = SolveStatus {
        converged: residual <= params.tolerance,
        iterations,
        residual,
    };
    Ok((scaling, status))
}

/// Materializes `diag(exp(alpha)) exp(-gamma * cost) diag(exp(beta))`.
pub fn transport_plan(
    problem: &TransportProblem,
    scaling: &ScalingVars,
    gamma: f64,
) -> Result<Array2<f64>> {
    let (m, p) = problem.dim();
    if scaling.alpha.len() != m || scaling.beta.len() != p {
        return invalid(format!(
            "scalings have shape ({}, {}), problem is {m}x{p}",
            scaling.alpha.len(),
            scaling.beta.len()
        ));
    }
    let mut plan = Array2::zeros((m, p));
    for ((i, j), q) in plan.indexed_iter_mut() {
        let (a, b) = (scaling.alpha[i], scaling.beta[j]);
        if !is_sentinel(a) && !is_sentinel(b) {
            *q = (a - gamma * problem.cost[[i, j]] + b).exp();
        }
    }
    Ok(plan)
}

/// `(||r - plan 1||_1, ||c - plan^T 1||_1)`
pub fn marginal_residuals(problem: &TransportProblem, plan: &Array2<f64>) -> Result<(f64, f64)> {
    if plan.dim() != problem.dim() {
        return invalid(format!(
            "plan shape {:?} does not match problem shape {:?}",
            plan.dim(),
            problem.dim()
        ));
    }
    let rows = plan.sum_axis(ndarray::Axis(1));
    let cols = plan.sum_axis(ndarray::Axis(0));
    let row_res = (&problem.row_targets - &rows).mapv(f64::abs).sum();
    let col_res = (&problem.col_targets - &cols).mapv(f64::abs).sum();
    Ok((row_res, col_res))
}

/// Projects an approximately feasible plan onto the exact transport polytope.
///
/// Rows and columns are first scaled down to their targets, then the leftover
/// deficit is redistributed as a rank-one correction. The result satisfies
/// both marginals up to rounding.
pub fn round_to_feasible(problem: &TransportProblem, plan: &Array2<f64>) -> Result<Array2<f64>> {
    if plan.dim() != problem.dim() {
        return invalid("plan shape does not match problem shape");
    }
    let mut out = plan.mapv(|x| x.max(0.0));
    for (mut row, &r) in out.outer_iter_mut().zip(problem.row_targets.iter()) {
        let s = row.sum();
        if s > r {
            row.mapv_inplace(|x| x * r / s);
        }
    }
    for (mut col, &c) in out
        .axis_iter_mut(ndarray::Axis(1))
        .zip(problem.col_targets.iter())
    {
        let s = col.sum();
        if s > c {
            col.mapv_inplace(|x| x * c / s);
        }
    }
    let row_err = &problem.row_targets - &out.sum_axis(ndarray::Axis(1));
    let col_err = &problem.col_targets - &out.sum_axis(ndarray::Axis(0));
    let total = row_err.sum();
    if total > 0.0 {
        for ((i, j), q) in out.indexed_iter_mut() {
            *q += row_err[i].max(0.0) * col_err[j].max(0.0) / total;
        }
    }
    Ok(out)
}

/// `<plan, cost>`
pub fn objective(plan: &Array2<f64>, cost: ArrayView2<'_, f64>) -> f64 {
    plan.iter().zip(cost.iter()).map(|(q, c)| q * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn params(gamma: f64, tol: f64) -> SinkhornParams {
        SinkhornParams::new(gamma, tol, DEFAULT_MAX_ITERS).unwrap()
    }

    #[test]
    fn single_cell() {
        for gamma in [0.1, 1.0, 1000.0] {
            let prob = TransportProblem::new(array![[0.0]], array![2.0], array![2.0]).unwrap();
            let (s, status) = sinkhorn_solve(&prob, &params(gamma, 1e-12), None).unwrap();
            assert!(status.converged);
            assert_abs_diff_eq!(s.alpha[0] + s.beta[0], 2f64.ln(), epsilon = 1e-12);
            let plan = transport_plan(&prob, &s, gamma).unwrap();
            assert_abs_diff_eq!(plan[[0, 0]], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_by_two_is_near_identity() {
        let prob = TransportProblem::new(
            array![[0.0, 1.0], [1.0, 0.0]],
            array![1.0, 1.0],
            array![1.0, 1.0],
        )
        .unwrap();
        let gamma = 1000.0;
        let (s, status) = sinkhorn_solve(&prob, &params(gamma, 1e-9), None).unwrap();
        assert!(status.converged);
        assert!(status.residual <= 1e-9);
        let plan = transport_plan(&prob, &s, gamma).unwrap();
        assert_abs_diff_eq!(plan[[0, 0]], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(plan[[1, 1]], 1.0, epsilon = 1e-9);
        assert!(objective(&plan, prob.cost()) < 1e-9);
        // closed form: off-diagonal is exp(-gamma) times the matching diagonal
        // entry up to the scaling ratios, which are 1 by symmetry
        let bound = (-gamma).exp() * plan[[0, 0]].max(plan[[1, 1]]) * (1.0 + 1e-9);
        assert!(plan[[0, 1]] <= bound && plan[[1, 0]] <= bound);
    }

    #[test]
    fn zero_scalings_zero_cost_gives_ones() {
        let prob = TransportProblem::new(
            Array2::zeros((3, 2)),
            array![1.0, 1.0, 1.0],
            array![1.5, 1.5],
        )
        .unwrap();
        let plan = transport_plan(&prob, &ScalingVars::zeros(3, 2), 5.0).unwrap();
        assert!(plan.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn residuals_exact_and_empty() {
        let prob = TransportProblem::new(
            array![[1.0, 2.0], [3.0, 4.0]],
            array![1.0, 2.0],
            array![2.0, 1.0],
        )
        .unwrap();
        let exact = array![[1.0, 0.0], [1.0, 1.0]];
        assert_eq!(marginal_residuals(&prob, &exact).unwrap(), (0.0, 0.0));
        assert_eq!(
            marginal_residuals(&prob, &Array2::zeros((2, 2))).unwrap(),
            (3.0, 3.0)
        );
        assert!(marginal_residuals(&prob, &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn converged_plan_matches_marginals() {
        let prob = TransportProblem::new(
            array![
                [0.3, 1.2, 2.0],
                [0.7, 0.1, 0.4],
                [1.5, 0.9, 0.2],
                [0.0, 0.5, 1.0]
            ],
            array![1.0, 2.0, 1.5, 0.5],
            array![2.0, 1.0, 2.0],
        )
        .unwrap();
        let (s, status) = sinkhorn_solve(&prob, &params(10.0, 1e-8), None).unwrap();
        assert!(status.converged);
        let plan = transport_plan(&prob, &s, 10.0).unwrap();
        let (row_res, col_res) = marginal_residuals(&prob, &plan).unwrap();
        assert!(row_res < 1e-12, "row residual {row_res}");
        assert!(col_res <= 1e-8);
        assert!(plan.iter().all(|&x| x.is_finite() && x >= 0.0));
    }

    #[test]
    fn large_gamma_cost_does_not_underflow() {
        // gamma * cost ~ 1842, far past where exp underflows
        let c = 18.42;
        let prob = TransportProblem::new(
            array![[c, 0.0], [0.0, c], [c, c]],
            array![1.0, 1.0, 1.0],
            array![1.5, 1.5],
        )
        .unwrap();
        let (s, status) = sinkhorn_solve(&prob, &params(100.0, 1e-6), None).unwrap();
        assert!(status.converged);
        assert!(s.alpha.iter().chain(s.beta.iter()).all(|x| x.is_finite()));
    }

    #[test]
    fn zero_targets_use_sentinel() {
        let prob = TransportProblem::new(
            array![[0.5, 1.0, 0.2], [1.0, 0.3, 0.4]],
            array![0.0, 2.0],
            array![1.0, 0.0, 1.0],
        )
        .unwrap();
        let (s, status) = sinkhorn_solve(&prob, &params(1.0, 1e-10), None).unwrap();
        assert!(status.converged);
        assert_eq!(s.alpha[0], ZERO_MASS_SENTINEL);
        assert_eq!(s.beta[1], ZERO_MASS_SENTINEL);
        let plan = transport_plan(&prob, &s, 1.0).unwrap();
        assert_eq!(plan.row(0).sum(), 0.0);
        assert_eq!(plan.column(1).sum(), 0.0);
        assert!(plan.iter().all(|x| !x.is_nan()));
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let prob = TransportProblem::new(
            array![[0.0, 1.0], [1.0, 0.0]],
            array![1.0, 1.0],
            array![0.5, 1.5],
        )
        .unwrap();
        let p = SinkhornParams::new(1000.0, 1e-14, 1).unwrap();
        let (_, status) = sinkhorn_solve(&prob, &p, None).unwrap();
        assert!(!status.converged);
        assert_eq!(status.iterations, 1);
    }

    #[test]
    fn warm_start_terminates_immediately() {
        let prob = TransportProblem::new(
            array![[0.3, 1.2], [0.7, 0.1], [1.5, 0.9]],
            array![1.0, 1.0, 1.0],
            array![2.0, 1.0],
        )
        .unwrap();
        let p = params(50.0, 1e-6);
        let (s, _) = sinkhorn_solve(&prob, &p, None).unwrap();
        let (s2, status) = sinkhorn_solve(&prob, &p, Some(&s)).unwrap();
        assert!(status.iterations <= 2);
        assert!(status.converged);
        assert_eq!(s, s2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TransportProblem::new(array![[0.0]], array![1.0], array![2.0]).is_err());
        assert!(TransportProblem::new(array![[-1.0]], array![1.0], array![1.0]).is_err());
        assert!(TransportProblem::new(array![[f64::INFINITY]], array![1.0], array![1.0]).is_err());
        assert!(TransportProblem::new(array![[0.0, 1.0]], array![1.0], array![1.0]).is_err());
        assert!(SinkhornParams::new(0.0, 1.0, 10).is_err());
        assert!(SinkhornParams::new(1.0, 0.0, 10).is_err());
        assert!(SinkhornParams::new(1.0, 1.0, 0).is_err());
        let prob = TransportProblem::new(array![[0.0]], array![1.0], array![1.0]).unwrap();
        let bad = ScalingVars::zeros(2, 1);
        assert!(sinkhorn_solve(&prob, &params(1.0, 1e-3), Some(&bad)).is_err());
        assert!(transport_plan(&prob, &bad, 1.0).is_err());
    }

    #[test]
    fn rounding_restores_exact_feasibility() {
        let prob = TransportProblem::new(
            array![[0.3, 1.2], [0.7, 0.1], [1.5, 0.9]],
            array![1.0, 1.0, 1.0],
            array![2.0, 1.0],
        )
        .unwrap();
        let rough = array![[0.9, 0.2], [0.1, 0.8], [0.7, 0.1]];
        let fixed = round_to_feasible(&prob, &rough).unwrap();
        let (r, c) = marginal_residuals(&prob, &fixed).unwrap();
        assert!(r < 1e-12 && c < 1e-12);
        assert!(fixed.iter().all(|&x| x >= 0.0));
    }
}
