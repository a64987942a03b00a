//! Self-training on Gaussian blobs with 4 labels per class: label allocation
//! against the supervised baseline and two thresholding baselines.
//!
//! cargo run --release --example self_train -- [iterations] [seed]

use sla::alloc::{wilson_upper_bounds, AllocationConfig, ScheduleKind};
use sla::selftrain::{make_dataset, self_train, Assigner, DatasetKind, DatasetSpec, TrainConfig};

fn main() -> sla::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(3000, |s| s.parse().expect("iterations"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let dataset = make_dataset(&DatasetSpec {
        generator: DatasetKind::GaussianBlobs { k: 4, spread: 0.4 },
        n: 2016,
        labeled_per_class: 4,
        test_size: 1000,
        seed,
    })?;
    let bounds = wilson_upper_bounds(&dataset.class_counts(), 0.8)?;
    let assigners = [
        ("supervised", Assigner::SupervisedOnly),
        ("pseudo-label", Assigner::PseudoLabel),
        (
            "threshold 0.95",
            Assigner::ConfidenceThreshold { tau: 0.95 },
        ),
        (
            "allocation",
            Assigner::Sla {
                allocation: AllocationConfig::new(bounds, 0.0, 100.0),
                schedule: ScheduleKind::LinearRamp,
            },
        ),
    ];
    for (name, assigner) in assigners {
        let mut config = TrainConfig::desk_defaults(assigner, seed);
        config.iterations = iterations;
        config.eval_every = iterations / 5;
        let out = self_train(&dataset, &config)?;
        let curve: Vec<String> = out
            .trace
            .iter()
            .map(|r| format!("{:.3}", r.ema_test_error))
            .collect();
        println!(
            "{name:>15}: final EMA error {:.4}  [{}]",
            out.final_ema_error,
            curve.join(" ")
        );
        if let Some(last) = out.trace.last().and_then(|r| r.allocated_fraction) {
            println!("{:>15}  allocated fraction at the end {last:.3}", "");
        }
    }
    Ok(())
}
