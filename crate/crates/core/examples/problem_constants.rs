//! Constants of the two problem families and their Monte-Carlo verification.

use byzsim::context::default_byzantine_set;
use byzsim::problems::{verify_constants, ProblemInstance, QuadraticParams, SoftmaxParams};

fn show(name: &str, p: &ProblemInstance) {
    let c = p.constants;
    println!("{name}");
    println!(
        "  L = {:.4}  sigma = {:.4}  sigma_L = {:.4}  xi = {:.4}  D = {:.4}",
        c.lipschitz, c.sigma, c.sigma_l, c.xi, c.diameter
    );
    println!("  sigma_tilde^2 = {:.4}", p.sigma_tilde_sq());
    let report = verify_constants(p, 8, 500);
    println!(
        "  observed/declared: sigma^2 {:.3}  sigma_L^2 {:.3}  xi^2 {:.3}  L {:.3}",
        report.noise_ratio, report.sigma_l_ratio, report.xi_ratio, report.lipschitz_ratio
    );
    if report.violations.is_empty() {
        println!("  no violations");
    }
    for v in &report.violations {
        println!("  violation: {v}");
    }
}

fn main() -> byzsim::Result<()> {
    let byzantine = default_byzantine_set(0.2, 10);
    let quadratic = ProblemInstance::generate_quadratic(&QuadraticParams::new(10, 10, 1.0, 2), &byzantine)?;
    show("heterogeneous quadratic (d = 10, m = 10)", &quadratic);
    let softmax = ProblemInstance::generate_softmax(&SoftmaxParams::new(8, 10, 2), &byzantine)?;
    show("softmax regression (8 features, 10 classes)", &softmax);
    Ok(())
}
