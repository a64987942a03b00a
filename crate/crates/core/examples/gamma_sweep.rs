//! Entropic regularization strength versus distance to the exact allocation
//! optimum and solver effort, on one random instance.
//!
//! cargo run --release --example gamma_sweep

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sla::alloc::{allocate, allocation_plan};
use sla::oracle::{exact_sla_lp, random_integral_instance};
use sla::sinkhorn::objective;

fn main() -> sla::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let instance = loop {
        let inst = random_integral_instance(&mut rng, 10, 4, 1.0);
        if inst.cost.len() >= 8 && inst.config.rho >= 0.5 && inst.config.mu() < 0.0 {
            break inst;
        }
    };
    let cost = instance.cost_matrix()?;
    let (n, k) = (cost.n(), cost.k());
    let exact = exact_sla_lp(&cost, &instance.config)?;
    println!(
        "n={n} k={k} rho={} b={:?}",
        instance.config.rho, instance.config.upper_bounds
    );
    println!("exact objective {:.6}", exact.objective);
    for gamma in [1.0, 10.0, 100.0, 1000.0] {
        let mut config = instance.config.clone();
        config.gamma = gamma;
        let (scaling, status) = allocate(&cost, &config, None)?;
        let plan = allocation_plan(&cost, &config, &scaling)?;
        let block = plan.slice(ndarray::s![..n, ..k]).to_owned();
        let obj = objective(&block, cost.values());
        println!(
            "gamma {gamma:>6}: objective {obj:.6}, gap {:+.2e}, {:>7} iterations, converged {}",
            obj - exact.objective,
            status.iterations,
            status.converged
        );
    }
    Ok(())
}
