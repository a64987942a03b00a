//! Solves a small transport problem exactly with min-cost flow and compares
//! it with entropic solutions at increasing gamma.
//!
//! cargo run --example exact_transport

use ndarray::array;
use sla::oracle::exact_transport;
use sla::sinkhorn::{objective, sinkhorn_solve, transport_plan, SinkhornParams, TransportProblem};

fn main() -> sla::Result<()> {
    let cost = array![
        [0.2, 1.5, 0.9],
        [1.1, 0.3, 0.8],
        [0.7, 0.6, 0.1],
        [0.4, 1.2, 1.4]
    ];
    let problem = TransportProblem::new(cost, array![2.0, 1.0, 2.0, 1.0], array![3.0, 1.0, 2.0])?;
    let exact = exact_transport(&problem)?;
    println!(
        "exact objective {:.6}\nplan\n{}",
        exact.objective, exact.plan
    );

    for gamma in [1.0, 10.0, 100.0, 1000.0] {
        let params = SinkhornParams::new(gamma, 1e-9, 1_000_000)?;
        let (scaling, status) = sinkhorn_solve(&problem, &params, None)?;
        let plan = transport_plan(&problem, &scaling, gamma)?;
        let obj = objective(&plan, problem.cost());
        println!(
            "gamma {gamma:>6}: objective {obj:.6}, gap {:.2e}, {} iterations",
            obj - exact.objective,
            status.iterations
        );
    }
    Ok(())
}
