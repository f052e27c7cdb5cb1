//! Every base aggregation rule on one set of worker vectors with two outliers,
//! next to its `c_delta` coefficient.

use byzsim::aggregators::{geometric_median_objective, krum_scores};
use byzsim::{AggregatorKind, AggregatorSpec, WorkerVector};

fn main() -> byzsim::Result<()> {
    let delta = 0.2;
    let mut vectors: Vec<WorkerVector> = (0..8)
        .map(|i| {
            let s = i as f64 * 0.1;
            WorkerVector::from([1.0 + s, -0.5 + s * s])
        })
        .collect();
    // Two colluding outliers.
    vectors.push(WorkerVector::from([40.0, 40.0]));
    vectors.push(WorkerVector::from([40.0, 40.0]));

    println!("m = {}, delta = {delta}", vectors.len());
    for kind in [
        AggregatorKind::Average,
        AggregatorKind::Cwtm,
        AggregatorKind::Cwmed,
        AggregatorKind::Krum,
        AggregatorKind::GeometricMedian,
    ] {
        let spec = AggregatorSpec::new(kind, delta);
        let out = spec.aggregate(&vectors)?;
        let c = spec.c_delta().map_or("-".to_string(), |c| format!("{c:.4}"));
        println!("{:<18} {:>10.4} {:>10.4}   c_delta {c}", kind.name(), out.as_slice()[0], out.as_slice()[1]);
    }

    let scores = krum_scores(&vectors, delta)?;
    println!("krum scores: {:?}", scores.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>());
    let gm = AggregatorSpec::new(AggregatorKind::GeometricMedian, delta).aggregate(&vectors)?;
    println!("geometric median objective: {:.6}", geometric_median_objective(&vectors, gm.as_slice()));
    Ok(())
}
