//! Monte-Carlo checks of the robustness and variance bounds, the
//! learning-rate sweep and aggregator micro-benchmarks.
//!
//! Every report records its seeds and is reproducible bit for bit. Bound
//! checks use `mean <= bound * (1 + BOUND_MARGIN) + 3 SE`.

pub mod bench;
pub mod robustness;
pub mod sweep;
pub mod variance;

pub use bench::{bench_aggregators, BenchMethod, BenchReport, BenchRow};
pub use robustness::{robustness_monte_carlo, Adversary, RobustnessReport, RobustnessScenario};
pub use sweep::{final_losses, lr_sweep, SweepPoint, SweepReport};
pub use variance::{deviation_probe, variance_probe, DeviationReport, VarianceReport};

/// Relative slack on analytic upper bounds.
pub const BOUND_MARGIN: f64 = 0.05;

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `mean <= bound (1 + margin) + 3 se`.
pub fn within_bound(mean: f64, se: f64, bound: f64) -> bool {
    mean <= bound * (1.0 + BOUND_MARGIN) + 3.0 * se
}

/// Renders a table as CSV under a `# config_hash=` line.
pub fn table_csv(config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for r in rows {
        writer.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    format!("# config_hash={config_hash}\n{body}")
}
