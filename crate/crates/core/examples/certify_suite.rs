//! Certifies Sinkhorn label allocation against the exact LP on random
//! instances with integral padded targets.
//!
//! cargo run --release --example certify_suite -- [count] [gamma]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sla::oracle::{certify, random_integral_instance};

fn main() -> sla::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(20, |s| s.parse().expect("count"));
    let gamma: f64 = args.next().map_or(1000.0, |s| s.parse().expect("gamma"));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut passed = 0;
    for i in 0..count {
        let instance = random_integral_instance(&mut rng, 10, 4, gamma);
        let cert = certify(&instance)?;
        println!(
            "{i:>3}: n={:>2} k={} exact {:>8.4} sinkhorn {:>8.4} gap {:+.2e} / {:.2e} {}",
            cert.n,
            cert.k,
            cert.exact_objective,
            cert.sinkhorn_objective,
            cert.gap,
            cert.allowed_gap,
            if cert.passed { "ok" } else { "FAIL" }
        );
        passed += usize::from(cert.passed);
    }
    println!("{passed}/{count} certified");
    Ok(())
}
