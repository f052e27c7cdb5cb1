//! Learning-rate sweeps.
//!
//! The good interval of a method is the contiguous run of grid points around
//! its best learning rate whose mean final excess loss is within a factor 2
//! of the best; its width is measured in decades.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mean_se;
use crate::engine::{run_training, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;

/// A run counts as diverged when `Delta_T > DIVERGENCE_FACTOR * Delta_1`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Final excess loss of `template` replayed once per seed.
pub fn final_losses(template: &TrainConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = template.clone();
            c.seed = seed;
            let trace = run_training(&c).map_err(|e| e.source)?;
            Ok(trace.final_excess_loss().expect("at least one round"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub estimator: String,
    pub eta: f64,
    /// Mean `Delta_1` over seeds.
    pub initial_loss: f64,
    /// Mean `Delta_T` over seeds; infinite if a run failed.
    pub final_loss: f64,
    pub final_loss_se: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalWidth {
    pub estimator: String,
    pub best_eta: f64,
    pub eta_low: f64,
    pub eta_high: f64,
    /// `log10(eta_high / eta_low)`.
    pub decades: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub eta_grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub widths: Vec<IntervalWidth>,
}

impl SweepReport {
    pub fn width(&self, estimator: &str) -> Option<&IntervalWidth> {
        self.widths.iter().find(|w| w.estimator == estimator)
    }
}

/// Good-interval width of one method from its `(eta, final loss)` points,
/// sorted by `eta`.
pub fn good_interval(estimator: &str, points: &[(f64, f64)]) -> Option<IntervalWidth> {
    let (best_idx, best) = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.1.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, p)| (i, p.1))?;
    let good = |k: usize| points[k].1 <= 2.0 * best;
    let mut lo = best_idx;
    while lo > 0 && good(lo - 1) {
        lo -= 1;
    }
    let mut hi = best_idx;
    while hi + 1 < points.len() && good(hi + 1) {
        hi += 1;
    }
    Some(IntervalWidth {
        estimator: estimator.to_string(),
        best_eta: points[best_idx].0,
        eta_low: points[lo].0,
        eta_high: points[hi].0,
        decades: (points[hi].0 / points[lo].0).log10(),
    })
}

/// Trains every estimator at every grid learning rate over all seeds.
pub fn lr_sweep(
    template: &TrainConfig,
    estimators: &[EstimatorConfig],
    eta_grid: &[f64],
    seeds: &[u64],
) -> Result<SweepReport> {
    if eta_grid.is_empty() || seeds.is_empty() || estimators.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let mut grid = eta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let jobs: Vec<(usize, f64, u64)> = (0..estimators.len())
        .flat_map(|e| grid.iter().flat_map(move |&eta| seeds.iter().map(move |&s| (e, eta, s))))
        .collect();
    let runs: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(e, eta, seed)| {
            let mut c = template.clone();
            c.estimator = estimators[e];
            c.eta = eta;
            c.seed = seed;
            c.theory_mode = false;
            match run_training(&c) {
                Ok(trace) => (trace.rows[0].excess_loss, trace.final_excess_loss().expect("at least one round")),
                Err(err) => (
                    err.trace.rows.first().map_or(f64::NAN, |r| r.excess_loss),
                    f64::INFINITY,
                ),
            }
        })
        .collect();
    let mut points = Vec::new();
    let mut widths = Vec::new();
    let per = seeds.len();
    for (e, est) in estimators.iter().enumerate() {
        let label = est.label();
        let mut curve = Vec::new();
        for (g, &eta) in grid.iter().enumerate() {
            let base = (e * grid.len() + g) * per;
            let chunk = &runs[base..base + per];
            let initial = chunk.iter().map(|r| r.0).sum::<f64>() / per as f64;
            let finals: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            let (final_loss, final_loss_se) = if finals.iter().all(|f| f.is_finite()) {
                mean_se(&finals)
            } else {
                (f64::INFINITY, f64::NAN)
            };
            let diverged = !matches!(
                final_loss.partial_cmp(&(DIVERGENCE_FACTOR * initial)),
                Some(Ordering::Less | Ordering::Equal)
            );
            curve.push((eta, if diverged { f64::INFINITY } else { final_loss }));
            points.push(SweepPoint {
                estimator: label.clone(),
                eta,
                initial_loss: initial,
                final_loss,
                final_loss_se,
                diverged,
            });
        }
        if let Some(w) = good_interval(&label, &curve) {
            widths.push(w);
        }
    }
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        eta_grid: grid,
        points,
        widths,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::aggregators::{AggregatorKind, AggregatorSpec};
    use crate::attacks::AttackSpec;
    use crate::meta::MetaSpec;
    use crate::problems::{ProblemInstance, QuadraticParams};

    #[test]
    fn interval_is_contiguous_around_the_best() {
        let pts = [(1e-3, 10.0), (1e-2, 1.5), (1e-1, 1.0), (1.0, 5.0), (10.0, 1.9)];
        let w = good_interval("m", &pts).unwrap();
        assert_eq!((w.eta_low, w.eta_high, w.best_eta), (1e-2, 1e-1, 1e-1));
        assert!((w.decades - 1.0).abs() < 1e-12);
        let single = good_interval("m", &[(0.5, 3.0)]).unwrap();
        assert_eq!(single.decades, 0.0);
    }

    #[test]
    fn tiny_eta_makes_no_progress_and_one_point_matches_training() {
        let p = Arc::new(ProblemInstance::generate_quadratic(&QuadraticParams::new(4, 4, 1.0, 1), &[]).unwrap());
        let c = TrainConfig::new(
            p,
            0.0,
            AttackSpec::default(),
            MetaSpec::bare(AggregatorSpec::new(AggregatorKind::Average, 0.0)),
            EstimatorConfig::mu2(),
            1e-9,
            20,
            0,
        );
        let r = lr_sweep(&c, &[EstimatorConfig::mu2()], &[1e-9], &[7]).unwrap();
        let pt = &r.points[0];
        assert!((pt.final_loss - pt.initial_loss).abs() < 1e-5 * pt.initial_loss);
        let mut single = c.clone();
        single.seed = 7;
        assert_eq!(pt.final_loss, run_training(&single).unwrap().final_excess_loss().unwrap());
    }
}
