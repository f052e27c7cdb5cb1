//! Wall-clock scaling of the aggregation rules in the number of inputs.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loglog_slope;
use crate::aggregators::{self, AggregatorKind, AggregatorSpec};
use crate::error::{Error, Result};
use crate::meta;
use crate::rng::{domain, seeded_rng};
use crate::vector::WorkerVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// CTMA's own work given a precomputed anchor.
    CtmaExcludingBase,
    Nnm,
    Bucketing,
    Average,
    Cwtm,
    Cwmed,
    Krum,
    GeometricMedian,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 8] = [
        BenchMethod::CtmaExcludingBase,
        BenchMethod::Nnm,
        BenchMethod::Bucketing,
        BenchMethod::Average,
        BenchMethod::Cwtm,
        BenchMethod::Cwmed,
        BenchMethod::Krum,
        BenchMethod::GeometricMedian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::CtmaExcludingBase => "ctma_excluding_base",
            BenchMethod::Nnm => "nnm",
            BenchMethod::Bucketing => "bucketing",
            BenchMethod::Average => "average",
            BenchMethod::Cwtm => "cwtm",
            BenchMethod::Cwmed => "cwmed",
            BenchMethod::Krum => "krum",
            BenchMethod::GeometricMedian => "geometric_median",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub m: usize,
    pub median_ns: u64,
    /// Vectors fed to the base rule (Bucketing) or produced (NNM).
    pub output_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub d: usize,
    pub delta: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
    /// Log-log slope of median time against `m`, per method.
    pub exponents: Vec<(BenchMethod, f64)>,
}

impl BenchReport {
    pub fn exponent(&self, method: BenchMethod) -> Option<f64> {
        self.exponents.iter().find(|e| e.0 == method).map(|e| e.1)
    }
}

const BENCH_DELTA: f64 = 0.2;
const BUCKET_SIZE: usize = 2;

fn run_once(method: BenchMethod, inputs: &[WorkerVector], anchor: &WorkerVector, seed: u64) -> Result<usize> {
    let spec = |kind| AggregatorSpec::new(kind, BENCH_DELTA);
    Ok(match method {
        BenchMethod::CtmaExcludingBase => {
            black_box(meta::ctma_with_anchor(inputs, anchor, BENCH_DELTA)?);
            1
        }
        BenchMethod::Nnm => black_box(meta::nnm(inputs, BENCH_DELTA)?).len(),
        BenchMethod::Bucketing => {
            let mut rng = seeded_rng(seed, &[domain::BUCKETING, 0]);
            black_box(meta::bucketing(inputs, BUCKET_SIZE, &mut rng)?).len()
        }
        BenchMethod::Average => {
            black_box(aggregators::average(inputs)?);
            1
        }
        BenchMethod::Cwtm => {
            black_box(spec(AggregatorKind::Cwtm).aggregate(inputs)?);
            1
        }
        BenchMethod::Cwmed => {
            black_box(spec(AggregatorKind::Cwmed).aggregate(inputs)?);
            1
        }
        BenchMethod::Krum => {
            black_box(spec(AggregatorKind::Krum).aggregate(inputs)?);
            1
        }
        BenchMethod::GeometricMedian => {
            black_box(spec(AggregatorKind::GeometricMedian).aggregate(inputs)?);
            1
        }
    })
}

/// Median single-call times over `repetitions` after one warm-up call, for
/// Gaussian inputs of dimension `d`.
pub fn bench_aggregators(
    methods: &[BenchMethod],
    m_grid: &[usize],
    d: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if methods.is_empty() || m_grid.is_empty() || repetitions == 0 || d == 0 {
        return Err(Error::EmptyInput("benchmark grid"));
    }
    let mut rows = Vec::new();
    for &m in m_grid {
        let mut rng = seeded_rng(seed, &[domain::PROBE, m as u64]);
        let inputs: Vec<WorkerVector> = (0..m)
            .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
            .collect();
        let anchor = aggregators::cwtm(&inputs, BENCH_DELTA)?;
        for &method in methods {
            let output_count = run_once(method, &inputs, &anchor, seed)?;
            let mut times: Vec<u64> = (0..repetitions)
                .map(|_| {
                    let start = Instant::now();
                    run_once(method, &inputs, &anchor, seed).map(|_| start.elapsed().as_nanos() as u64)
                })
                .collect::<Result<_>>()?;
            times.sort_unstable();
            rows.push(BenchRow {
                method,
                m,
                median_ns: times[times.len() / 2],
                output_count,
            });
        }
    }
    let exponents = methods
        .iter()
        .map(|&method| {
            let (ms, ts): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.m as f64, r.median_ns.max(1) as f64))
                .unzip();
            (method, loglog_slope(&ms, &ts))
        })
        .collect();
    Ok(BenchReport {
        d,
        delta: BENCH_DELTA,
        repetitions,
        seed,
        rows,
        exponents,
    })
}
