//! Monte-Carlo check of the `(delta, c_delta)` robustness inequality for each
//! rule under the worst-radius adversary.

use byzsim::harness::{robustness_monte_carlo, Adversary, RobustnessScenario};
use byzsim::{AggregatorKind, AggregatorSpec, MetaKind, MetaSpec};

fn main() -> byzsim::Result<()> {
    let (m, d, replications) = (20, 10, 2_000);
    println!("{:<26} {:>6} {:>10} {:>10} {:>6}", "aggregation", "delta", "ratio", "bound", "pass");
    for delta in [0.1, 0.3] {
        for kind in [AggregatorKind::Cwtm, AggregatorKind::Cwmed, AggregatorKind::Krum, AggregatorKind::GeometricMedian] {
            for meta in [MetaKind::None, MetaKind::Ctma] {
                let scenario = RobustnessScenario::new(m, delta, d, Adversary::WorstRadius, replications, 7);
                let spec = MetaSpec::new(meta, AggregatorSpec::new(kind, delta));
                let r = robustness_monte_carlo(&scenario, &spec)?;
                println!(
                    "{:<26} {:>6.2} {:>10.4} {:>10} {:>6}",
                    r.aggregation,
                    delta,
                    r.ratio,
                    r.bound.map_or("-".into(), |b| format!("{b:.3}")),
                    r.pass.map_or("-", |p| if p { "yes" } else { "NO" })
                );
            }
        }
    }
    Ok(())
}
