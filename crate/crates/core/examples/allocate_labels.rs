//! Allocates labels for a batch of classifier outputs and prints the soft
//! labels, the abstention weights and the per-class mass.
//!
//! cargo run --example allocate_labels

use ndarray::array;
use sla::alloc::{
    allocate, allocation_plan, allocation_summary, cost_from_probabilities, soft_labels,
    AllocationConfig,
};

fn main() -> sla::Result<()> {
    let probs = array![
        [0.90, 0.05, 0.05],
        [0.80, 0.15, 0.05],
        [0.85, 0.10, 0.05],
        [0.40, 0.35, 0.25],
        [0.10, 0.80, 0.10],
        [0.05, 0.15, 0.80],
    ];
    let cost = cost_from_probabilities(probs.view())?;
    // at most a third of the examples per class, and half of them labeled
    let mut config = AllocationConfig::new(vec![1.0 / 3.0; 3], 0.5, 100.0);
    config.tolerance_factor = 1e-4;
    let (scaling, status) = allocate(&cost, &config, None)?;
    println!(
        "sinkhorn: {} iterations, residual {:.2e}",
        status.iterations, status.residual
    );

    let beta = scaling.beta.to_vec();
    println!(
        "class scalings {:?}, abstention threshold {:.3}",
        &beta[..3],
        beta[3]
    );
    for (i, q) in soft_labels(probs.view(), &beta, config.gamma)?
        .iter()
        .enumerate()
    {
        let w: Vec<String> = q.weights.iter().map(|w| format!("{w:.3}")).collect();
        println!(
            "row {i}: q = [{}], abstain {:.3}",
            w.join(", "),
            q.abstain_weight
        );
    }

    let summary = allocation_summary(&allocation_plan(&cost, &config, &scaling)?);
    println!(
        "allocated fraction {:.3}, per-class mass {:?}",
        summary.allocated_fraction, summary.per_class_mass
    );
    Ok(())
}
