//! Monte-Carlo estimates of `E||x_hat - x_bar_G||^2 / rho^2`.
//!
//! Honest worker `i` draws `x_i ~ N(mu_i, sigma^2 I)` with fixed means
//! `mu_i = spread * u_i`, `u_i ~ N(0, I/d)`, so
//!
//! ```text
//! rho^2 = (1/|G|) sum_i ||mu_i - mu_bar||^2 + sigma^2 d (1 - 1/|G|)
//! ```
//!
//! The Byzantine workers are the last `floor(delta m)` indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_se, within_bound};
use crate::attacks::{apply_attack, AttackKind, AttackSpec};
use crate::context::{byzantine_count, default_byzantine_set, RoundContext};
use crate::error::{Error, Result};
use crate::meta::MetaSpec;
use crate::rng::{domain, seeded_rng, RandomStream};
use crate::vector::{mean_of, WorkerVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Byzantine workers submit honest-looking draws.
    None,
    SignFlip,
    Little,
    Empire,
    /// Byzantine workers collude at `x_bar_G + r rho u` for a fixed unit `u`;
    /// the worst radius of the grid is reported.
    WorstRadius,
}

impl Adversary {
    pub const ALL: [Adversary; 5] = [
        Adversary::None,
        Adversary::SignFlip,
        Adversary::Little,
        Adversary::Empire,
        Adversary::WorstRadius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Adversary::None => "none",
            Adversary::SignFlip => "sign_flip",
            Adversary::Little => "little",
            Adversary::Empire => "empire",
            Adversary::WorstRadius => "worst_radius",
        }
    }

    fn attack(self) -> Option<AttackSpec> {
        match self {
            Adversary::SignFlip => Some(AttackSpec::new(AttackKind::SignFlip)),
            Adversary::Little => Some(AttackSpec::new(AttackKind::Little)),
            Adversary::Empire => Some(AttackSpec::new(AttackKind::Empire)),
            Adversary::None | Adversary::WorstRadius => None,
        }
    }
}

pub fn default_radius_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessScenario {
    pub m: usize,
    pub delta: f64,
    pub d: usize,
    pub sigma: f64,
    pub spread: f64,
    pub adversary: Adversary,
    pub replications: usize,
    pub seed: u64,
    /// Radii in units of `rho` for [`Adversary::WorstRadius`].
    #[serde(default = "default_radius_grid")]
    pub radius_grid: Vec<f64>,
}

impl RobustnessScenario {
    pub fn new(m: usize, delta: f64, d: usize, adversary: Adversary, replications: usize, seed: u64) -> Self {
        Self {
            m,
            delta,
            d,
            sigma: 1.0,
            spread: 1.0,
            adversary,
            replications,
            seed,
            radius_grid: default_radius_grid(),
        }
    }

    pub fn byzantine(&self) -> Vec<usize> {
        default_byzantine_set(self.delta, self.m)
    }

    pub fn honest_count(&self) -> usize {
        self.m - byzantine_count(self.delta, self.m)
    }

    /// Fixed per-worker means for all `m` workers.
    pub fn means(&self) -> Vec<WorkerVector> {
        let scale = self.spread / (self.d as f64).sqrt();
        (0..self.m)
            .map(|i| {
                let mut rng = seeded_rng(self.seed, &[domain::PROBLEM, i as u64]);
                (0..self.d).map(|_| scale * rng.standard_normal()).collect()
            })
            .collect()
    }

    /// Closed-form `rho^2`.
    pub fn rho_sq(&self) -> f64 {
        let means = self.means();
        let g = self.honest_count();
        let mu_bar = mean_of(&means[..g], self.d);
        let spread = means[..g].iter().map(|mu| mu.dist_sq(&mu_bar)).sum::<f64>() / g as f64;
        spread + self.sigma * self.sigma * self.d as f64 * (1.0 - 1.0 / g as f64)
    }

    /// Brute-force `rho^2` and its standard error from `draws` honest draws.
    pub fn rho_sq_empirical(&self, draws: usize) -> (f64, f64) {
        let means = self.means();
        let g = self.honest_count();
        let samples: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|rep| {
                let mut rng = seeded_rng(self.seed, &[domain::PROBE, rep as u64]);
                let xs = self.draw(&means[..g], &mut rng);
                let bar = mean_of(&xs, self.d);
                xs.iter().map(|x| x.dist_sq(&bar)).sum::<f64>() / g as f64
            })
            .collect();
        mean_se(&samples)
    }

    fn draw(&self, means: &[WorkerVector], rng: &mut RandomStream) -> Vec<WorkerVector> {
        means
            .iter()
            .map(|mu| mu.iter().map(|m| m + self.sigma * rng.standard_normal()).collect())
            .collect()
    }

    fn direction(&self) -> WorkerVector {
        let mut rng = seeded_rng(self.seed, &[domain::PROBE, u64::MAX]);
        let u: WorkerVector = (0..self.d).map(|_| rng.standard_normal()).collect();
        let n = u.norm();
        u.scaled(1.0 / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub aggregation: String,
    pub adversary: Adversary,
    pub m: usize,
    pub delta: f64,
    pub d: usize,
    pub replications: usize,
    pub seed: u64,
    pub rho_sq: f64,
    pub rho_sq_empirical: f64,
    pub rho_sq_se: f64,
    /// `|analytic - empirical| <= 3 SE`.
    pub rho_check: bool,
    /// `E||x_hat - x_bar_G||^2`.
    pub mean_sq_error: f64,
    pub se: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    /// Theoretical `c_delta`, absent for rules with only empirical guarantees.
    pub bound: Option<f64>,
    /// Radius (in units of `rho`) that produced the reported error.
    pub worst_radius: Option<f64>,
    /// `None` when there is no bound to check.
    pub pass: Option<bool>,
}

impl RobustnessReport {
    pub fn margin(&self) -> Option<f64> {
        self.bound.map(|b| b - self.ratio)
    }
}

/// Draws `scenario.replications` rounds of honest vectors, applies the
/// adversary and aggregates with `aggregation`.
pub fn robustness_monte_carlo(scenario: &RobustnessScenario, aggregation: &MetaSpec) -> Result<RobustnessReport> {
    robustness_monte_carlo_with_draws(scenario, aggregation, 100_000)
}

/// [`robustness_monte_carlo`] with a chosen number of draws for the `rho^2`
/// cross-check.
pub fn robustness_monte_carlo_with_draws(scenario: &RobustnessScenario, aggregation: &MetaSpec, rho_draws: usize) -> Result<RobustnessReport> {
    aggregation.validate()?;
    if scenario.replications == 0 || scenario.m == 0 || scenario.d == 0 {
        return Err(Error::invalid("replications", "m, d and replications must be positive"));
    }
    let byzantine = scenario.byzantine();
    let g = scenario.honest_count();
    let means = scenario.means();
    let rho_sq = scenario.rho_sq();
    let (rho_emp, rho_se) = scenario.rho_sq_empirical(rho_draws);
    let rho = rho_sq.sqrt();
    let direction = scenario.direction();
    let radii: Vec<f64> = match scenario.adversary {
        Adversary::WorstRadius => scenario.radius_grid.clone(),
        _ => vec![0.0],
    };
    if radii.is_empty() {
        return Err(Error::EmptyInput("radius grid"));
    }
    let attack = scenario.adversary.attack();
    let ctx = RoundContext::new(1, scenario.m, scenario.delta, byzantine.clone(), scenario.seed)?;

    let per_rep: Vec<Result<Vec<f64>>> = (0..scenario.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seeded_rng(scenario.seed, &[domain::MONTE_CARLO, rep as u64]);
            let all = scenario.draw(&means, &mut rng);
            let honest = &all[..g];
            let bar = mean_of(honest, scenario.d);
            radii
                .iter()
                .map(|&r| {
                    let byz: Vec<WorkerVector> = match (scenario.adversary, &attack) {
                        (Adversary::WorstRadius, _) => {
                            let mut p = bar.clone();
                            p.axpy(r * rho, &direction);
                            vec![p; byzantine.len()]
                        }
                        (_, Some(spec)) => apply_attack(spec, honest, &all[g..], &ctx)?,
                        _ => all[g..].to_vec(),
                    };
                    let inputs: Vec<WorkerVector> = honest.iter().cloned().chain(byz).collect();
                    let mut agg_rng = seeded_rng(scenario.seed, &[domain::BUCKETING, rep as u64]);
                    let out = aggregation.aggregate(&inputs, &mut agg_rng)?;
                    Ok(out.dist_sq(&bar))
                })
                .collect()
        })
        .collect();
    let per_rep: Vec<Vec<f64>> = per_rep.into_iter().collect::<Result<_>>()?;

    let mut best: Option<(f64, f64, f64)> = None;
    for (k, &r) in radii.iter().enumerate() {
        let errs: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
        let (mean, se) = mean_se(&errs);
        if best.is_none_or(|b| mean > b.0) {
            best = Some((mean, se, r));
        }
    }
    let (mean, se, radius) = best.expect("radius grid is nonempty");
    let (ratio, ratio_se) = if rho_sq > 0.0 {
        (mean / rho_sq, se / rho_sq)
    } else if mean == 0.0 {
        (0.0, 0.0)
    } else {
        (f64::INFINITY, 0.0)
    };
    let bound = if byzantine.is_empty() && aggregation.base.kind == crate::aggregators::AggregatorKind::Average {
        Some(0.0)
    } else {
        match aggregation.c_delta() {
            Ok(b) => b.value(),
            Err(Error::NotRobust(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(RobustnessReport {
        aggregation: aggregation.label(),
        adversary: scenario.adversary,
        m: scenario.m,
        delta: scenario.delta,
        d: scenario.d,
        replications: scenario.replications,
        seed: scenario.seed,
        rho_sq,
        rho_sq_empirical: rho_emp,
        rho_sq_se: rho_se,
        rho_check: (rho_emp - rho_sq).abs() <= 3.0 * rho_se,
        mean_sq_error: mean,
        se,
        ratio,
        ratio_se,
        bound,
        worst_radius: (scenario.adversary == Adversary::WorstRadius).then_some(radius),
        pass: bound.map(|b| within_bound(ratio, ratio_se, b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{AggregatorKind, AggregatorSpec};
    use crate::meta::MetaKind;

    #[test]
    fn ctma_at_zero_delta_is_exact() {
        let s = RobustnessScenario::new(10, 0.0, 4, Adversary::SignFlip, 1000, 1);
        for kind in [AggregatorKind::Cwtm, AggregatorKind::Krum, AggregatorKind::Cwmed] {
            let agg = MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(kind, 0.0));
            let r = robustness_monte_carlo_with_draws(&s, &agg, 2000).unwrap();
            assert_eq!(r.bound, Some(0.0));
            assert!(r.mean_sq_error < 1e-28, "{kind:?}: {}", r.mean_sq_error);
            assert_eq!(r.pass, Some(true));
        }
    }

    #[test]
    fn identical_noiseless_honest_workers_are_recovered() {
        for adversary in Adversary::ALL {
            let mut s = RobustnessScenario::new(8, 0.25, 3, adversary, 200, 2);
            s.sigma = 0.0;
            s.spread = 0.0;
            assert_eq!(s.rho_sq(), 0.0);
            for kind in [AggregatorKind::Cwtm, AggregatorKind::Cwmed, AggregatorKind::Krum, AggregatorKind::GeometricMedian] {
                let r = robustness_monte_carlo_with_draws(&s, &MetaSpec::bare(AggregatorSpec::new(kind, 0.25)), 10).unwrap();
                assert_eq!(r.mean_sq_error, 0.0, "{kind:?} vs {adversary:?}");
                assert_eq!(r.ratio, 0.0);
            }
        }
    }

    #[test]
    fn analytic_rho_matches_draws() {
        let s = RobustnessScenario::new(12, 0.25, 6, Adversary::Empire, 10, 3);
        let (emp, se) = s.rho_sq_empirical(20_000);
        assert!((emp - s.rho_sq()).abs() <= 3.0 * se);
    }

    #[test]
    fn reports_are_reproducible() {
        let s = RobustnessScenario::new(10, 0.2, 4, Adversary::Little, 300, 4);
        let agg = MetaSpec::new(MetaKind::Bucketing, AggregatorSpec::new(AggregatorKind::Cwmed, 0.2));
        assert_eq!(robustness_monte_carlo_with_draws(&s, &agg, 100).unwrap(), robustness_monte_carlo_with_draws(&s, &agg, 100).unwrap());
    }

    #[test]
    fn average_has_no_bound_under_attack() {
        let s = RobustnessScenario::new(10, 0.2, 4, Adversary::Empire, 100, 4);
        let r = robustness_monte_carlo_with_draws(&s, &MetaSpec::bare(AggregatorSpec::new(AggregatorKind::Average, 0.2)), 100).unwrap();
        assert_eq!(r.bound, None);
        assert_eq!(r.pass, None);
    }
}
