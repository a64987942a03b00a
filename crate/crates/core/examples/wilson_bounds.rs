//! Class-proportion upper bounds from labeled counts: empirical versus Wilson.
//!
//! cargo run --example wilson_bounds

use sla::alloc::{empirical_bounds, wilson_upper_bounds};

fn main() -> sla::Result<()> {
    for counts in [vec![4u64; 10], vec![25, 25, 25, 25], vec![1, 3, 12]] {
        let empirical = empirical_bounds(&counts)?;
        println!("counts {counts:?}");
        for confidence in [0.5, 0.8, 0.95] {
            let wilson = wilson_upper_bounds(&counts, confidence)?;
            let fmt: Vec<String> = wilson.iter().map(|b| format!("{b:.4}")).collect();
            println!("  wilson@{confidence}: [{}]", fmt.join(", "));
        }
        let fmt: Vec<String> = empirical.iter().map(|b| format!("{b:.4}")).collect();
        println!("  empirical:   [{}]", fmt.join(", "));
    }
    Ok(())
}
