use std::sync::Arc;

use byzsim::aggregators::{AggregatorKind, AggregatorSpec};
use byzsim::attacks::{AttackKind, AttackSpec};
use byzsim::context::default_byzantine_set;
use byzsim::engine::TrainConfig;
use byzsim::estimators::EstimatorConfig;
use byzsim::harness::lr_sweep;
use byzsim::meta::{MetaKind, MetaSpec};
use byzsim::problems::{ProblemInstance, QuadraticParams};

#[test]
fn theory_learning_rate_lies_in_mu2_good_interval() {
    let (m, delta) = (8, 0.25);
    let byz = default_byzantine_set(delta, m);
    let problem = Arc::new(ProblemInstance::generate_quadratic(&QuadraticParams::new(20, m, 1.0, 3), &byz).unwrap());
    let aggregation = MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(AggregatorKind::Cwtm, delta));
    let template = TrainConfig::new(
        problem,
        delta,
        AttackSpec::new(AttackKind::SignFlip),
        aggregation,
        EstimatorConfig::mu2(),
        0.0,
        200,
        0,
    );
    let theory = template.theory_eta();
    let mut grid: Vec<f64> = (0..7).map(|k| 10f64.powf(-4.0 + k as f64)).collect();
    grid.push(theory);
    let seeds: Vec<u64> = (0..8).collect();
    let report = lr_sweep(&template, &[EstimatorConfig::mu2()], &grid, &seeds).unwrap();
    let w = report.width(&EstimatorConfig::mu2().label()).unwrap();
    assert!(w.eta_low <= theory && theory <= w.eta_high, "{theory} outside [{}, {}]", w.eta_low, w.eta_high);
}
