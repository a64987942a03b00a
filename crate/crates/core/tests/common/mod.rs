//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;

/// Minimum of `<X, cost>` over all nonnegative integer matrices `X` with row
/// sums `r` and column sums `c`, by exhaustive enumeration.
pub fn brute_force_transport(cost: &Array2<f64>, r: &[i64], c: &[i64]) -> Option<f64> {
    fn go(
        cost: &Array2<f64>,
        cell: usize,
        row_left: &mut [i64],
        col_left: &mut [i64],
        acc: f64,
        best: &mut Option<f64>,
    ) {
        let (m, p) = cost.dim();
        if cell == m * p {
            if row_left.iter().chain(col_left.iter()).all(|&x| x == 0) {
                *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
            }
            return;
        }
        let (i, j) = (cell / p, cell % p);
        let hi = row_left[i].min(col_left[j]);
        // the last cell of a row must take whatever the row has left
        let lo = if j == p - 1 { row_left[i] } else { 0 };
        if lo > hi {
            return;
        }
        for x in lo..=hi {
            row_left[i] -= x;
            col_left[j] -= x;
            go(
                cost,
                cell + 1,
                row_left,
                col_left,
                acc + x as f64 * cost[[i, j]],
                best,
            );
            row_left[i] += x;
            col_left[j] += x;
        }
    }
    let mut best = None;
    go(cost, 0, &mut r.to_vec(), &mut c.to_vec(), 0.0, &mut best);
    best
}

/// Minimum of `<Q, C>` over 0/1 matrices `Q` with at most one class per row,
/// at most `caps[j]` rows in class `j` and at least `floor` rows assigned.
/// These are the integral points of the inequality-form allocation LP.
pub fn brute_force_allocation(
    cost: &Array2<f64>,
    caps: &[f64],
    floor: f64,
) -> Option<(f64, Vec<Option<usize>>)> {
    let (n, k) = cost.dim();
    let mut choice = vec![None; n];
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let total = (k + 1).pow(n as u32);
    for code in 0..total {
        let mut rest = code;
        let mut per_class = vec![0usize; k];
        let mut assigned = 0;
        let mut obj = 0.0;
        for (i, c) in choice.iter_mut().enumerate() {
            let d = rest % (k + 1);
            rest /= k + 1;
            *c = if d == k {
                None
            } else {
                per_class[d] += 1;
                assigned += 1;
                obj += cost[[i, d]];
                Some(d)
            };
        }
        let feasible = per_class
            .iter()
            .zip(caps)
            .all(|(&m, &cap)| m as f64 <= cap + 1e-9)
            && assigned as f64 >= floor - 1e-9;
        if feasible && best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, choice.clone()));
        }
    }
    best
}

/// Upper Wilson endpoint written as `(2np + z^2 + z sqrt(z^2 + 4np(1-p))) / (2(n + z^2))`.
pub fn wilson_upper(count: u64, total: u64, z: f64) -> f64 {
    let n = total as f64;
    let p = count as f64 / n;
    let num = 2.0 * n * p + z * z + z * (z * z + 4.0 * n * p * (1.0 - p)).sqrt();
    (num / (2.0 * (n + z * z))).min(1.0)
}

/// `Phi^{-1}(0.9)`, from Python's `statistics.NormalDist().inv_cdf(0.9)`.
pub const Z_90: f64 = 1.2815515655446008;

/// A random stochastic row of length `k` with entries bounded away from zero.
pub fn random_simplex_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Relative error between the analytic gradient of `loss_and_grad` and
/// central differences at step `1e-5`, over a random network and batch.
pub fn gradient_check(seed: u64) -> f64 {
    use ndarray::Array2;
    use rand::SeedableRng;
    use sla::alloc::SoftLabel;
    use sla::selftrain::{loss_and_grad, ClassifierParams};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..5);
    let hidden = rng.random_range(0..7);
    let k = rng.random_range(2..6);
    let mut params = ClassifierParams::init(d, hidden, k, &mut rng);
    for (t, _) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let nl = rng.random_range(1..5);
    let nu = rng.random_range(0..6);
    let lx = Array2::from_shape_fn((nl, d), |_| rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..nl).map(|_| rng.random_range(0..k)).collect();
    let ux = Array2::from_shape_fn((nu, d), |_| rng.random_range(-2.0..2.0));
    let targets: Vec<SoftLabel> = (0..nu)
        .map(|_| {
            let eta = rng.random_range(0.0..=1.0);
            let weights: Vec<f64> = random_simplex_row(&mut rng, k)
                .iter()
                .map(|q| q * eta)
                .collect();
            SoftLabel {
                abstain_weight: 1.0 - weights.iter().sum::<f64>(),
                weights,
            }
        })
        .collect();
    let lambda = rng.random_range(0.0..2.0);
    let total = |p: &ClassifierParams| {
        loss_and_grad(p, lx.view(), &labels, ux.view(), &targets, lambda)
            .0
            .total
    };

    let (_, grads) = loss_and_grad(&params, lx.view(), &labels, ux.view(), &targets, lambda);
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.to_vec()).collect();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    for tensor in 0..4 {
        let len = params.tensors()[tensor].len();
        for idx in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[tensor].0[idx] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[tensor].0[idx] -= h;
            numeric.push((total(&plus) - total(&minus)) / (2.0 * h));
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Solves at gamma 1000 with `eps = 1e-6 ||c||_1` and returns the class block.
fn sharp_block(cost: &sla::alloc::CostMatrix, k: usize, rho: f64) -> Result<Array2<f64>, String> {
    use sla::alloc::{allocate, allocation_plan, AllocationConfig};
    let mut cfg = AllocationConfig::new(vec![1.0; k], rho, 1000.0);
    cfg.tolerance_factor = 1e-6;
    cfg.max_iters = 5_000_000;
    let (scaling, status) = allocate(cost, &cfg, None).map_err(|e| e.to_string())?;
    if !status.converged {
        return Err(format!("not converged: {status:?}"));
    }
    let plan = allocation_plan(cost, &cfg, &scaling).map_err(|e| e.to_string())?;
    Ok(plan.slice(ndarray::s![..cost.n(), ..k]).to_owned())
}

/// Costs whose row minima sit at the given levels with every other entry at
/// least 0.1 above the minimum. Returns the matrix and each row's argmin.
fn separated_costs<R: Rng>(
    rng: &mut R,
    minima: &[f64],
    k: usize,
) -> (sla::alloc::CostMatrix, Vec<usize>) {
    let n = minima.len();
    let mut best = Vec::with_capacity(n);
    let mut values = Array2::zeros((n, k));
    for (mut row, &min) in values.outer_iter_mut().zip(minima) {
        let b = rng.random_range(0..k);
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == b {
                min
            } else {
                min + rng.random_range(0.1..3.0)
            };
        }
        best.push(b);
    }
    (sla::alloc::CostMatrix::from_values(values).unwrap(), best)
}

/// With `b = 1_k` and `rho = 1` every allocated row goes to its argmin, and
/// the mass floor `n - 1` leaves at most one row out.
pub fn pseudo_label_case(seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (rng.random_range(2..25), rng.random_range(2..5));
    let minima: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let (cost, best) = separated_costs(&mut rng, &minima, k);
    let block = sharp_block(&cost, k, 1.0)?;
    let mut assigned = 0;
    for (i, row) in block.outer_iter().enumerate() {
        if row.sum() >= 0.5 {
            assigned += 1;
            let argmax = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            if argmax != best[i] {
                return Err(format!("row {i} went to {argmax}, argmin is {}", best[i]));
            }
        }
    }
    if assigned + 1 < n {
        return Err(format!("{assigned} of {n} rows allocated"));
    }
    Ok(())
}

/// With `rho = 0.1` the allocated rows are the most confident ones. The
/// floor `rho n - 1` means `rho n - 1` or `rho n` rows are taken; one more
/// row of slack either way is allowed.
pub fn top_rho_case(seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (10 * rng.random_range(2..9), rng.random_range(2..5));
    // row minima on a shuffled grid 0.06 apart
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(&mut rng);
    let minima: Vec<f64> = rank.iter().map(|&r| 0.1 + 0.06 * r as f64).collect();
    let (cost, _) = separated_costs(&mut rng, &minima, k);
    let block = sharp_block(&cost, k, 0.1)?;
    let chosen: Vec<usize> = (0..n).filter(|&i| block.row(i).sum() >= 0.5).collect();
    let mut by_confidence: Vec<usize> = (0..n).collect();
    by_confidence.sort_by_key(|&i| rank[i]);
    let target = n / 10;
    let ok = (target.saturating_sub(1)..=target + 1).any(|m| {
        let mut top = by_confidence[..m].to_vec();
        top.sort();
        top == chosen
    });
    if ok {
        Ok(())
    } else {
        Err(format!(
            "n {n}: chose {chosen:?}, most confident {:?}",
            &by_confidence[..target + 1]
        ))
    }
}

/// Relative gap between `sum(r)` and `sum(c)` of the padded targets for a
/// random configuration.
pub fn marginal_balance_error(seed: u64) -> f64 {
    use rand::SeedableRng;
    use sla::alloc::{padded_targets, AllocationConfig};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..5000);
    let k = rng.random_range(2..12);
    let b = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let cfg = AllocationConfig::new(b, rng.random_range(0.0..=1.0), 100.0);
    let (r, c) = padded_targets(n, &cfg);
    assert!(r.iter().chain(c.iter()).all(|&x| x >= 1.0));
    (r.sum() - c.sum()).abs() / c.sum()
}

/// Relative gap in `sum_i [KL(Q_i || P_i) + H(Q_i)] = <Q, -log P>` for a random
/// pair of row-stochastic matrices. The right side is evaluated directly.
pub fn kl_identity_error(seed: u64) -> f64 {
    use rand::SeedableRng;
    use sla::alloc::{entropy, kl_divergence};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (rng.random_range(1..20), rng.random_range(2..8));
    let q: Vec<Vec<f64>> = (0..n).map(|_| random_simplex_row(&mut rng, k)).collect();
    let p: Vec<Vec<f64>> = (0..n).map(|_| random_simplex_row(&mut rng, k)).collect();
    let lhs: f64 = q
        .iter()
        .zip(&p)
        .map(|(qi, pi)| kl_divergence(qi, pi) + entropy(qi))
        .sum();
    let rhs: f64 = q
        .iter()
        .zip(&p)
        .flat_map(|(qi, pi)| qi.iter().zip(pi).map(|(a, b)| -a * b.ln()))
        .sum();
    (lhs - rhs).abs() / rhs.abs()
}
