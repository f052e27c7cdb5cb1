//! Learning-rate sweep: the range of step sizes over which each estimator
//! stays within a factor 2 of its best final loss.

use std::sync::Arc;

use byzsim::attacks::{AttackKind, AttackSpec};
use byzsim::context::default_byzantine_set;
use byzsim::engine::TrainConfig;
use byzsim::harness::lr_sweep;
use byzsim::problems::{ProblemInstance, QuadraticParams};
use byzsim::{AggregatorKind, AggregatorSpec, EstimatorConfig, MetaKind, MetaSpec};

fn main() -> byzsim::Result<()> {
    let (m, delta) = (8, 0.25);
    let problem = Arc::new(ProblemInstance::generate_quadratic(
        &QuadraticParams::new(20, m, 1.0, 3),
        &default_byzantine_set(delta, m),
    )?);
    let template = TrainConfig::new(
        problem,
        delta,
        AttackSpec::new(AttackKind::SignFlip),
        MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(AggregatorKind::Cwtm, delta)),
        EstimatorConfig::mu2(),
        0.0,
        200,
        0,
    );
    let grid: Vec<f64> = (0..13).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect();
    let seeds: Vec<u64> = (0..8).collect();
    let estimators = [EstimatorConfig::mu2(), EstimatorConfig::momentum(0.9)];
    let report = lr_sweep(&template, &estimators, &grid, &seeds)?;

    print!("{:>10}", "eta");
    for e in &estimators {
        print!(" {:>28}", e.label());
    }
    println!();
    for (g, eta) in grid.iter().enumerate() {
        print!("{eta:>10.1e}");
        for e in 0..estimators.len() {
            print!(" {:>28.3e}", report.points[e * grid.len() + g].final_loss);
        }
        println!();
    }
    for w in &report.widths {
        println!("{}: good interval [{:.0e}, {:.0e}], {:.1} decades", w.estimator, w.eta_low, w.eta_high, w.decades);
    }
    println!("theory step 1/(4LT) = {:.2e}", template.theory_eta());
    Ok(())
}
