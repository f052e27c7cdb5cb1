//! Estimator error of mu2-SGD against worker momentum and plain SGD on a
//! noisy quadratic with no Byzantine workers.
//!
//! mu2-SGD's error shrinks like `1/t`; momentum's stays at a floor set by
//! its fixed `beta`.

use std::sync::Arc;

use byzsim::attacks::{AttackKind, AttackSpec};
use byzsim::engine::TrainConfig;
use byzsim::harness::variance_probe;
use byzsim::problems::{ProblemInstance, QuadraticParams};
use byzsim::{AggregatorKind, AggregatorSpec, EstimatorConfig, MetaSpec};

fn main() -> byzsim::Result<()> {
    let problem = Arc::new(ProblemInstance::generate_quadratic(&QuadraticParams::new(10, 8, 1.0, 1), &[])?);
    let seeds: Vec<u64> = (0..16).collect();
    let rounds = 256;
    println!("{:<28} {:>10} {:>10} {:>10} {:>8}", "estimator", "E|e_1|^2", "E|e_16|^2", "E|e_256|^2", "slope");
    for estimator in [EstimatorConfig::mu2(), EstimatorConfig::momentum(0.9), EstimatorConfig::sgd()] {
        let mut config = TrainConfig::new(
            problem.clone(),
            0.0,
            AttackSpec::new(AttackKind::None),
            MetaSpec::bare(AggregatorSpec::new(AggregatorKind::Average, 0.0)),
            estimator,
            0.0,
            rounds,
            0,
        );
        config.eta = config.theory_eta();
        let report = variance_probe(&config, &seeds)?;
        println!(
            "{:<28} {:>10.4} {:>10.4} {:>10.5} {:>8.3}",
            report.estimator,
            report.eps_sq[0],
            report.eps_sq[15],
            report.eps_sq[rounds - 1],
            report.slope_from(16)
        );
    }
    Ok(())
}
