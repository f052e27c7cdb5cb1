//! CTMA on top of each base rule: the robustness coefficient before and after
//! composition, and the CTMA selection around a base-rule anchor.

use byzsim::meta::{ctma_selection, nnm};
use byzsim::{seeded_rng, AggregatorKind, AggregatorSpec, MetaKind, MetaSpec, WorkerVector};

fn main() -> byzsim::Result<()> {
    let delta = 0.25;
    let mut rng = seeded_rng(11, &[0]);
    let mut vectors: Vec<WorkerVector> = (0..6)
        .map(|_| WorkerVector::new((0..3).map(|_| rng.standard_normal()).collect()))
        .collect();
    vectors.push(WorkerVector::from([25.0, 0.0, 0.0]));
    vectors.push(WorkerVector::from([-25.0, 0.0, 0.0]));

    println!("{:<24} {:>10} {:>10}  output", "rule", "c_delta", "composed");
    for kind in [AggregatorKind::Cwtm, AggregatorKind::Cwmed, AggregatorKind::Krum, AggregatorKind::GeometricMedian] {
        let base = AggregatorSpec::new(kind, delta);
        let meta = MetaSpec::new(MetaKind::Ctma, base);
        let out = meta.aggregate(&vectors, &mut rng)?;
        let composed = meta.c_delta()?.value().map_or("-".into(), |c| format!("{c:.3}"));
        println!(
            "{:<24} {:>10.3} {:>10}  {:?}",
            meta.label(),
            base.c_delta()?,
            composed,
            out.as_slice().iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }

    let anchor = AggregatorSpec::new(AggregatorKind::Cwmed, delta).aggregate(&vectors)?;
    let mut kept = ctma_selection(&vectors, &anchor, delta);
    kept.sort_unstable();
    println!("CTMA keeps workers {kept:?} around the median anchor");

    let mixed = nnm(&vectors, delta)?;
    let spread = |vs: &[WorkerVector]| vs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    println!("largest norm before NNM {:.2}, after {:.2}", spread(&vectors), spread(&mixed));
    Ok(())
}
