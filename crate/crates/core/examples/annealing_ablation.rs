//! Allocation schedules compared on one dataset: the linear ramp, a ramp
//! truncated at 0.5, and full allocation from the first iteration.
//!
//! cargo run --release --example annealing_ablation -- [iterations] [seed]

use sla::alloc::{
    empirical_bounds, schedule_value, AllocationConfig, AllocationSchedule, ScheduleKind,
};
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
    let bounds = empirical_bounds(&dataset.class_counts())?;
    for schedule in [
        ScheduleKind::LinearRamp,
        ScheduleKind::TruncatedRamp { cap: 0.5 },
        ScheduleKind::Constant { value: 1.0 },
    ] {
        let s = AllocationSchedule::new(schedule, iterations)?;
        let rho: Vec<String> = [1, iterations / 2, iterations]
            .iter()
            .map(|&t| schedule_value(&s, t).map(|v| format!("{v:.2}")))
            .collect::<sla::Result<_>>()?;
        let assigner = Assigner::Sla {
            allocation: AllocationConfig::new(bounds.clone(), 0.0, 100.0),
            schedule,
        };
        let mut config = TrainConfig::desk_defaults(assigner, seed);
        config.iterations = iterations;
        let out = self_train(&dataset, &config)?;
        println!(
            "{schedule:?}: rho at start/middle/end {}, final EMA error {:.4}, {} of {} solves unconverged",
            rho.join("/"),
            out.final_ema_error,
            out.unconverged_solves,
            out.allocation_solves
        );
    }
    Ok(())
}
