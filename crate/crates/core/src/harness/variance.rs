//! Multi-seed estimates of the estimator error `E||eps_t||^2` and of the
//! aggregated deviation `E||d_hat_t - grad f(x_t)||^2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loglog_slope, mean_se, BOUND_MARGIN};
use crate::engine::{aggregation_c_delta, deviation_bound, run_training, TrainConfig, TrainingTrace};
use crate::error::{Error, Result};

fn run_seeds(template: &TrainConfig, seeds: &[u64]) -> Result<Vec<TrainingTrace>> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = template.clone();
            c.seed = seed;
            run_training(&c).map_err(|e| e.source)
        })
        .collect()
}

/// Per-round mean and standard error across runs of `value(row)`.
fn per_round(traces: &[TrainingTrace], value: impl Fn(&crate::engine::TraceRow) -> f64) -> (Vec<f64>, Vec<f64>) {
    let rounds = traces[0].rows.len();
    (0..rounds)
        .map(|k| mean_se(&traces.iter().map(|tr| value(&tr.rows[k])).collect::<Vec<_>>()))
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub estimator: String,
    pub seeds: Vec<u64>,
    pub honest_count: usize,
    pub sigma_tilde_sq: f64,
    /// Mean over seeds and honest workers of `||eps_t^(i)||^2`, one entry per round.
    pub eps_sq: Vec<f64>,
    pub eps_sq_se: Vec<f64>,
    pub collective_eps_sq: Vec<f64>,
    pub collective_eps_sq_se: Vec<f64>,
}

impl VarianceReport {
    pub fn rounds(&self) -> usize {
        self.eps_sq.len()
    }

    /// Rounds where `E||eps_t||^2 > sigma_tilde^2 / t + 3 SE`.
    pub fn worker_violations(&self) -> Vec<usize> {
        (1..=self.rounds())
            .filter(|&t| self.eps_sq[t - 1] > self.sigma_tilde_sq / t as f64 + 3.0 * self.eps_sq_se[t - 1])
            .collect()
    }

    /// Rounds where the collective error exceeds `sigma_tilde^2 / (t |G|) + 3 SE`.
    pub fn collective_violations(&self) -> Vec<usize> {
        let g = self.honest_count as f64;
        (1..=self.rounds())
            .filter(|&t| {
                self.collective_eps_sq[t - 1] > self.sigma_tilde_sq / (t as f64 * g) + 3.0 * self.collective_eps_sq_se[t - 1]
            })
            .collect()
    }

    /// Log-log slope of `E||eps_t||^2` against `t` over rounds `t_min..=T`.
    pub fn slope_from(&self, t_min: usize) -> f64 {
        let ts: Vec<f64> = (t_min..=self.rounds()).map(|t| t as f64).collect();
        loglog_slope(&ts, &self.eps_sq[t_min - 1..])
    }

    /// `max_t t E||eps_t||^2`.
    pub fn max_scaled_error(&self) -> f64 {
        self.eps_sq
            .iter()
            .enumerate()
            .map(|(k, e)| e * (k + 1) as f64)
            .fold(0.0, f64::max)
    }
}

/// Replays `template` once per seed and summarises the estimator error.
pub fn variance_probe(template: &TrainConfig, seeds: &[u64]) -> Result<VarianceReport> {
    let traces = run_seeds(template, seeds)?;
    let (eps_sq, eps_sq_se) = per_round(&traces, |r| r.mean_eps_sq);
    let (collective_eps_sq, collective_eps_sq_se) = per_round(&traces, |r| r.collective_eps_sq);
    Ok(VarianceReport {
        estimator: template.estimator.label(),
        seeds: seeds.to_vec(),
        honest_count: template.problem.honest.len(),
        sigma_tilde_sq: template.problem.sigma_tilde_sq(),
        eps_sq,
        eps_sq_se,
        collective_eps_sq,
        collective_eps_sq_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub aggregation: String,
    pub seeds: Vec<u64>,
    pub c_delta: f64,
    pub dev_sq: Vec<f64>,
    pub dev_sq_se: Vec<f64>,
    /// `4 s/(t m) + 12 c s/t + 6 c xi^2` per round.
    pub bound: Vec<f64>,
}

impl DeviationReport {
    /// Rounds where `mean + 3 SE > bound (1 + margin)`.
    pub fn violations(&self) -> Vec<usize> {
        (0..self.dev_sq.len())
            .filter(|&k| self.dev_sq[k] + 3.0 * self.dev_sq_se[k] > self.bound[k] * (1.0 + BOUND_MARGIN))
            .map(|k| k + 1)
            .collect()
    }

    /// Smallest `bound / (mean + 3 SE)` over rounds.
    pub fn min_headroom(&self) -> f64 {
        (0..self.dev_sq.len())
            .map(|k| self.bound[k] / (self.dev_sq[k] + 3.0 * self.dev_sq_se[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Replays `template` once per seed and compares the aggregated deviation
/// with its bound under the aggregation's composed `c_delta`.
pub fn deviation_probe(template: &TrainConfig, seeds: &[u64]) -> Result<DeviationReport> {
    let traces = run_seeds(template, seeds)?;
    let (dev_sq, dev_sq_se) = per_round(&traces, |r| r.dev_sq);
    let c_delta = aggregation_c_delta(&template.aggregation, template.byzantine_set().len())?;
    let p = &template.problem;
    let bound = (1..=dev_sq.len())
        .map(|t| deviation_bound(p.sigma_tilde_sq(), p.constants.xi, c_delta, template.workers(), t))
        .collect();
    Ok(DeviationReport {
        aggregation: template.aggregation.label(),
        seeds: seeds.to_vec(),
        c_delta,
        dev_sq,
        dev_sq_se,
        bound,
    })
}
