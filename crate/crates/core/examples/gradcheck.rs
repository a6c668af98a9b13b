//! Finite-difference check of the whole network (every parameter element)
//! for each router, then the same check with one gradient sign flipped.
//!
//!     cargo run --release --example gradcheck

use rescaps::experiment::{gradcheck, gradcheck_config, GradFault};
use rescaps::routing::RoutingKind;

fn main() -> rescaps::Result<()> {
    for routing in RoutingKind::ALL {
        for (depth, skip) in [(3, false), (5, true)] {
            let report = gradcheck(&gradcheck_config(routing, depth, skip), None)?;
            println!(
                "{routing} depth {depth} skip {skip}: max rel {:.2e} over {} groups -> {}",
                report.max_rel,
                report.groups.len(),
                if report.passed { "pass" } else { "FAIL" }
            );
        }
    }
    let cfg = gradcheck_config(RoutingKind::Rba, 3, false);
    let fault = GradFault::FlipSign("caps0.w".into());
    let report = gradcheck(&cfg, Some(&fault))?;
    let worst = report.groups.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel)).unwrap();
    println!("flipped caps0.w: passed = {}, worst group {} (rel {:.2})", report.passed, worst.name, worst.max_rel);
    Ok(())
}
