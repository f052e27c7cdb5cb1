//! Wall-clock scaling of each aggregation step with the number of workers.
//!
//! CTMA on top of a precomputed anchor costs a sort of the distances, so its
//! exponent in `m` stays close to 1; NNM's pairwise distances grow like `m^2`.

use byzsim::harness::{bench_aggregators, BenchMethod};

fn main() -> byzsim::Result<()> {
    let m_grid = [8, 16, 32, 64, 128];
    let report = bench_aggregators(&BenchMethod::ALL, &m_grid, 2_000, 7, 1)?;
    print!("{:<22}", "method");
    for m in m_grid {
        print!(" {:>10}", format!("m={m}"));
    }
    println!(" {:>9}", "exponent");
    for method in BenchMethod::ALL {
        print!("{:<22}", method.name());
        for row in report.rows.iter().filter(|r| r.method == method) {
            print!(" {:>8}us", row.median_ns / 1_000);
        }
        println!(" {:>9.2}", report.exponent(method).unwrap_or(f64::NAN));
    }
    Ok(())
}
