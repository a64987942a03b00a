//! Exact reference solvers.
//!
//! Transportation problems with integral marginals have integral optimal
//! vertices, so successive shortest paths on the bipartite flow network give
//! the exact LP optimum. Costs may be real-valued; only the marginals must be
//! integers.

use std::collections::BTreeSet;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::{self, AllocationConfig, CostMatrix};
use crate::error::{invalid, Result, SlaError};
use crate::sinkhorn::{self, SolveStatus, TransportProblem};

const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub plan: Array2<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    rev: usize,
}

struct FlowNetwork {
    adj: Vec<Vec<Edge>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> (usize, usize) {
        let fwd = self.adj[from].len();
        let bwd = self.adj[to].len();
        self.adj[from].push(Edge {
            to,
            cap,
            cost,
            rev: bwd,
        });
        self.adj[to].push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            rev: fwd,
        });
        (from, fwd)
    }

    /// Pushes `demand` units from `source` to `sink` along successive
    /// shortest paths. Dijkstra runs on reduced costs; all initial costs are
    /// nonnegative so zero potentials are feasible.
    fn min_cost_flow(&mut self, source: usize, sink: usize, demand: i64) -> Result<()> {
        let nodes = self.adj.len();
        let mut potential = vec![0.0f64; nodes];
        let mut remaining = demand;
        while remaining > 0 {
            let mut dist = vec![f64::INFINITY; nodes];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
            let mut done = vec![false; nodes];
            dist[source] = 0.0;
            loop {
                let u = (0..nodes)
                    .filter(|&v| !done[v] && dist[v].is_finite())
                    .min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
                let Some(u) = u else { break };
                done[u] = true;
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap <= 0 || done[e.to] {
                        continue;
                    }
                    // rounding can leave reduced costs a hair below zero
                    let reduced = (e.cost + potential[u] - potential[e.to]).max(0.0);
                    let cand = dist[u] + reduced;
                    if cand < dist[e.to] {
                        dist[e.to] = cand;
                        prev[e.to] = Some((u, ei));
                    }
                }
            }
            if !dist[sink].is_finite() {
                return Err(SlaError::Unsupported(format!(
                    "sink unreachable with {remaining} units left"
                )));
            }
            for (p, d) in potential.iter_mut().zip(&dist) {
                if d.is_finite() {
                    *p += d;
                }
            }
            let mut push = remaining;
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                push = push.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= push;
                self.adj[v][rev].cap += push;
                v = u;
            }
            remaining -= push;
        }
        Ok(())
    }
}

fn integral_targets(targets: &[f64], what: &str) -> Result<Vec<i64>> {
    targets
        .iter()
        .map(|&t| {
            let r = t.round();
            if (t - r).abs() > INTEGRALITY_TOL {
                Err(SlaError::Unsupported(format!(
                    "{what} target {t} is not integral"
                )))
            } else {
                Ok(r as i64)
            }
        })
        .collect()
}

/// Exact optimum of a balanced transportation problem with integral marginals.
pub fn exact_transport(problem: &TransportProblem) -> Result<ExactSolution> {
    let (m, p) = problem.dim();
    let rows = integral_targets(problem.row_targets().as_slice().unwrap(), "row")?;
    let cols = integral_targets(problem.col_targets().as_slice().unwrap(), "column")?;
    let total: i64 = rows.iter().sum();
    if total != cols.iter().sum::<i64>() {
        return invalid("row and column totals differ");
    }

    let (source, sink) = (0, m + p + 1);
    let mut net = FlowNetwork::new(m + p + 2);
    for (i, &r) in rows.iter().enumerate() {
        net.add_edge(source, 1 + i, r, 0.0);
    }
    let mut cells = Vec::with_capacity(m * p);
    let cost = problem.cost();
    for i in 0..m {
        for j in 0..p {
            let cap = rows[i].min(cols[j]);
            cells.push((
                (i, j),
                net.add_edge(1 + i, 1 + m + j, cap, cost[[i, j]]),
                cap,
            ));
        }
    }
    for (j, &c) in cols.iter().enumerate() {
        net.add_edge(1 + m + j, sink, c, 0.0);
    }
    net.min_cost_flow(source, sink, total)?;

    let mut plan = Array2::zeros((m, p));
    for ((i, j), (u, ei), cap) in cells {
        plan[[i, j]] = (cap - net.adj[u][ei].cap) as f64;
    }
    let objective = plan.iter().zip(cost.iter()).map(|(q, c)| q * c).sum();
    Ok(ExactSolution { plan, objective })
}

/// Exact solution of the allocation LP, restricted to the `n x k` block.
/// All padded targets must be integral.
pub fn exact_sla_lp(cost: &CostMatrix, config: &AllocationConfig) -> Result<ExactSolution> {
    let padded = alloc::build_padded_problem(cost, config)?;
    let full = exact_transport(&padded)?;
    let (n, k) = (cost.n(), cost.k());
    let plan = full.plan.slice(s![..n, ..k]).to_owned();
    Ok(ExactSolution {
        objective: full.objective,
        plan,
    })
}

/// Row-wise argmin, lowest index on ties.
pub fn assign_pseudo_labels(cost: &CostMatrix) -> Vec<usize> {
    cost.values()
        .outer_iter()
        .map(|row| argmin(row.iter().copied()))
        .collect()
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, v) in values.enumerate() {
        if v < best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// The `floor(rho n)` most confident rows, each with its argmin class.
pub fn assign_top_rho(cost: &CostMatrix, rho: f64) -> BTreeSet<(usize, usize)> {
    let labels = assign_pseudo_labels(cost);
    let values = cost.values();
    let mut order: Vec<usize> = (0..cost.n()).collect();
    order.sort_by(|&a, &b| {
        values[[a, labels[a]]]
            .total_cmp(&values[[b, labels[b]]])
            .then(a.cmp(&b))
    });
    let take = (rho.clamp(0.0, 1.0) * cost.n() as f64).floor() as usize;
    order
        .into_iter()
        .take(take)
        .map(|i| (i, labels[i]))
        .collect()
}

/// An allocation instance whose padded targets are integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaInstance {
    pub cost: Vec<Vec<f64>>,
    pub config: AllocationConfig,
}

impl SlaInstance {
    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        let n = self.cost.len();
        let k = self.cost.first().map_or(0, Vec::len);
        if self.cost.iter().any(|r| r.len() != k) {
            return invalid("ragged cost matrix");
        }
        let flat: Vec<f64> = self.cost.iter().flatten().copied().collect();
        CostMatrix::from_values(
            Array2::from_shape_vec((n, k), flat)
                .map_err(|e| SlaError::InvalidInput(e.to_string()))?,
        )
    }
}

/// Draws a random allocation instance with `n <= max_n`, `2 <= k <= max_k`.
///
/// Every `n b_j` and `n rho` is an integer, which keeps all padded targets
/// integral. Costs are negative log-probabilities of random softmax rows.
pub fn random_integral_instance<R: Rng>(
    rng: &mut R,
    max_n: usize,
    max_k: usize,
    gamma: f64,
) -> SlaInstance {
    let n = rng.random_range(1..=max_n.max(1));
    let k = rng.random_range(2..=max_k.max(2));
    let upper_bounds = (0..k)
        .map(|_| rng.random_range(0..=n) as f64 / n as f64)
        .collect();
    let rho = rng.random_range(0..=n) as f64 / n as f64;
    let cost = (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.5..2.5)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
            logits.iter().map(|l| z - l).collect()
        })
        .collect();
    let mut config = AllocationConfig::new(upper_bounds, rho, gamma);
    config.tolerance_factor = CERTIFY_TOLERANCE_FACTOR;
    config.max_iters = CERTIFY_MAX_ITERS;
    SlaInstance { cost, config }
}

/// Tolerance factor used for certification instances: `eps = 1e-6 ||c||_1`.
pub const CERTIFY_TOLERANCE_FACTOR: f64 = 1e-6;
/// At `gamma = 1000` and `eps = 1e-6 ||c||_1` some small instances need
/// close to a million sweeps.
pub const CERTIFY_MAX_ITERS: usize = 5_000_000;

/// Sinkhorn allocation compared with the exact LP optimum of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n: usize,
    pub k: usize,
    pub exact_objective: f64,
    /// `<plan, C>` over the class block of the Sinkhorn plan.
    pub sinkhorn_objective: f64,
    /// `sinkhorn_objective - exact_objective`
    pub gap: f64,
    /// `0.05 (1 + |exact_objective|)`
    pub allowed_gap: f64,
    pub tolerance: f64,
    pub row_residual: f64,
    pub col_residual: f64,
    pub status: SolveStatus,
    pub exact_plan: Array2<f64>,
    pub passed: bool,
}

/// Relative slack allowed between the Sinkhorn and exact objectives.
pub const GAP_FACTOR: f64 = 0.05;

/// Solves `instance` both ways. Passes when Sinkhorn converged, both
/// marginal residuals are within the tolerance and the objective gap is
/// within `GAP_FACTOR (1 + |LP*|)`.
pub fn certify(instance: &SlaInstance) -> Result<Certificate> {
    let cost = instance.cost_matrix()?;
    let cfg = &instance.config;
    let exact = exact_sla_lp(&cost, cfg)?;
    let problem = alloc::build_padded_problem(&cost, cfg)?;
    let params = alloc::solver_params(&problem, cfg)?;
    let (scaling, status) = sinkhorn::sinkhorn_solve(&problem, &params, None)?;
    let plan = sinkhorn::transport_plan(&problem, &scaling, cfg.gamma)?;
    let (row_residual, col_residual) = sinkhorn::marginal_residuals(&problem, &plan)?;
    let (n, k) = (cost.n(), cost.k());
    let sinkhorn_objective =
        sinkhorn::objective(&plan.slice(s![..n, ..k]).to_owned(), cost.values());
    let gap = sinkhorn_objective - exact.objective;
    let allowed_gap = GAP_FACTOR * (1.0 + exact.objective.abs());
    let passed = status.converged
        && row_residual <= params.tolerance
        && col_residual <= params.tolerance
        && gap.abs() <= allowed_gap;
    Ok(Certificate {
        n,
        k,
        exact_objective: exact.objective,
        sinkhorn_objective,
        gap,
        allowed_gap,
        tolerance: params.tolerance,
        row_residual,
        col_residual,
        status,
        exact_plan: exact.plan,
        passed,
    })
}
