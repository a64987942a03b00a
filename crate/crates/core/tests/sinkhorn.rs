use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sla::oracle::exact_transport;
use sla::sinkhorn::{
    marginal_residuals, objective, round_to_feasible, sinkhorn_solve, transport_plan, ScalingVars,
    SinkhornParams, TransportProblem,
};

fn integral_problem<R: Rng>(rng: &mut R, m: usize, p: usize, cost_hi: f64) -> TransportProblem {
    let total = rng.random_range(m.max(p)..=3 * m.max(p)) as i64;
    let mut split = |len: usize| {
        let mut v = vec![0.0; len];
        for _ in 0..total {
            v[rng.random_range(0..len)] += 1.0;
        }
        Array1::from(v)
    };
    let (r, c) = (split(m), split(p));
    let cost = Array2::from_shape_fn((m, p), |_| rng.random_range(0.0..cost_hi));
    TransportProblem::new(cost, r, c).unwrap()
}

fn tight(problem: &TransportProblem, gamma: f64) -> SinkhornParams {
    SinkhornParams::new(gamma, 1e-6 * problem.col_targets().sum(), 5_000_000).unwrap()
}

#[test]
fn six_by_three_within_gap_of_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let problem = integral_problem(&mut rng, 6, 3, 1.0);
        let (scaling, status) = sinkhorn_solve(&problem, &tight(&problem, 1000.0), None).unwrap();
        assert!(status.converged);
        let plan = transport_plan(&problem, &scaling, 1000.0).unwrap();
        let lp = exact_transport(&problem).unwrap().objective;
        let obj = objective(&plan, problem.cost());
        assert!(
            (obj - lp).abs() <= 0.05 * (1.0 + lp.abs()),
            "obj {obj} lp {lp}"
        );
    }
}

#[test]
fn two_by_two_off_diagonal_is_suppressed() {
    let gamma = 10.0;
    let problem = TransportProblem::new(
        array![[0.0, 1.0], [1.0, 0.0]],
        array![1.0, 1.0],
        array![1.0, 1.0],
    )
    .unwrap();
    let (scaling, _) = sinkhorn_solve(&problem, &tight(&problem, gamma), None).unwrap();
    let plan = transport_plan(&problem, &scaling, gamma).unwrap();
    // closed form: plan_ij = exp(alpha_i - gamma C_ij + beta_j)
    for i in 0..2 {
        for j in 0..2 {
            let direct =
                (scaling.alpha[i] - gamma * problem.cost()[[i, j]] + scaling.beta[j]).exp();
            assert_eq!(plan[[i, j]], direct);
        }
    }
    let bound = (-gamma).exp();
    assert!(plan[[0, 1]] <= bound * plan[[0, 0]] * (1.0 + 1e-9));
    assert!(plan[[1, 0]] <= bound * plan[[1, 1]] * (1.0 + 1e-9));
}

/// The entropic objective approaches the LP optimum from above as gamma grows.
#[test]
fn gap_non_increasing_in_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        // continuous random costs: the LP optimum is unique almost surely
        let problem = integral_problem(&mut rng, 4, 3, 1.0);
        let lp = exact_transport(&problem).unwrap().objective;
        let mut prev = f64::INFINITY;
        for gamma in [1.0, 10.0, 100.0, 1000.0] {
            let (scaling, status) =
                sinkhorn_solve(&problem, &tight(&problem, gamma), None).unwrap();
            assert!(status.converged, "gamma {gamma}: {status:?}");
            let plan = transport_plan(&problem, &scaling, gamma).unwrap();
            let gap = objective(&plan, problem.cost()) - lp;
            assert!(gap <= prev + 1e-6, "gamma {gamma}: gap {gap} after {prev}");
            prev = gap;
        }
    }
}

#[test]
fn plan_is_invariant_to_gauge_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = integral_problem(&mut rng, 5, 4, 2.0);
    let (scaling, _) = sinkhorn_solve(&problem, &tight(&problem, 50.0), None).unwrap();
    let plan = transport_plan(&problem, &scaling, 50.0).unwrap();
    for shift in [-7.5, 0.3, 12.0] {
        let shifted = ScalingVars {
            alpha: &scaling.alpha + shift,
            beta: &scaling.beta - shift,
        };
        let other = transport_plan(&problem, &shifted, 50.0).unwrap();
        for (a, b) in plan.iter().zip(other.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let problem = integral_problem(&mut rng, 30, 5, 3.0);
    let params = SinkhornParams::new(100.0, 1e-4, 100_000).unwrap();
    let a = sinkhorn_solve(&problem, &params, None).unwrap();
    let b = sinkhorn_solve(&problem, &params, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rounding_gives_exact_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let problem = integral_problem(&mut rng, 6, 3, 1.0);
        let params = SinkhornParams::new(100.0, 0.1, 10_000).unwrap();
        let (scaling, _) = sinkhorn_solve(&problem, &params, None).unwrap();
        let plan = transport_plan(&problem, &scaling, 100.0).unwrap();
        let feasible = round_to_feasible(&problem, &plan).unwrap();
        let (rr, cr) = marginal_residuals(&problem, &feasible).unwrap();
        assert!(rr < 1e-9 && cr < 1e-9, "{rr} {cr}");
        let lp = exact_transport(&problem).unwrap().objective;
        assert!(objective(&feasible, problem.cost()) >= lp - 1e-9);
    }
}

fn arb_problem() -> impl Strategy<Value = TransportProblem> {
    (1usize..6, 1usize..6, any::<u64>()).prop_map(|(m, p, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Array1<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
        let mut c: Array1<f64> = (0..p).map(|_| rng.random_range(0.1..3.0)).collect();
        c *= r.sum() / c.sum();
        let cost = Array2::from_shape_fn((m, p), |_| rng.random_range(0.0..COST_HI));
        TransportProblem::new(cost, r, c).unwrap()
    })
}

const COST_HI: f64 = 18.4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_plans_meet_their_marginals(problem in arb_problem(), gamma in prop::sample::select(vec![0.5, 5.0, 100.0])) {
        let tol = 1e-4 * problem.col_targets().sum();
        let params = SinkhornParams::new(gamma, tol, 1_000_000).unwrap();
        let (scaling, status) = sinkhorn_solve(&problem, &params, None).unwrap();
        prop_assert!(status.converged);
        let plan = transport_plan(&problem, &scaling, gamma).unwrap();
        prop_assert!(plan.iter().all(|x| x.is_finite() && *x >= 0.0));
        let (rr, cr) = marginal_residuals(&problem, &plan).unwrap();
        prop_assert!(cr <= tol * (1.0 + 1e-9), "col residual {} > {}", cr, tol);
        prop_assert!(rr <= 1e-9 * (1.0 + problem.row_targets().sum()), "row residual {}", rr);
        prop_assert!((status.residual - cr).abs() <= 1e-9 + 1e-6 * cr);
    }

    #[test]
    fn warm_start_from_solution_is_free(problem in arb_problem()) {
        let params = SinkhornParams::new(10.0, 1e-3, 1_000_000).unwrap();
        let (scaling, _) = sinkhorn_solve(&problem, &params, None).unwrap();
        let (again, status) = sinkhorn_solve(&problem, &params, Some(&scaling)).unwrap();
        prop_assert_eq!(status.iterations, 0);
        prop_assert_eq!(again, scaling);
    }
}
