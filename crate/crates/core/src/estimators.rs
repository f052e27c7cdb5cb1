//! Per-worker gradient estimators and Anytime iterate averaging.
//!
//! The corrected momentum of mu2-SGD evaluates one sample at two points:
//!
//! ```text
//! d_t = g(x_t; z_t) + (1 - beta_t) (d_{t-1} - g(x_{t-1}; z_t)),   d_1 = g(x_1; z_1)
//! ```
//!
//! and the query points are the weighted averages
//! `x_t = sum_k alpha_k w_k / alpha_{1:t}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::WorkerVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sgd,
    Momentum,
    Mu2,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Momentum => "momentum",
            EstimatorKind::Mu2 => "mu2",
        }
    }
}

/// Momentum weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `beta_t = 1/t`.
    Reciprocal,
    Fixed(f64),
}

/// Anytime weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// `alpha_t = t`.
    Linear,
    /// Constant averaging weight `gamma`, i.e. `alpha_t = C alpha_{1:t-1}` with
    /// `gamma = C / (C + 1)`. The server step then uses a unit multiplier.
    FixedGamma(f64),
}

/// Weights in force at round `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    /// Multiplier on the aggregated vector in the `w` update.
    pub alpha: f64,
    pub beta: f64,
    /// Weight of `w_t` in `x_t = gamma w_t + (1 - gamma) x_{t-1}`.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub alpha: AlphaSchedule,
    pub beta: BetaSchedule,
}

impl EstimatorConfig {
    /// mu2-SGD with `alpha_t = t`, `beta_t = 1/t`.
    pub fn mu2() -> Self {
        Self {
            kind: EstimatorKind::Mu2,
            alpha: AlphaSchedule::Linear,
            beta: BetaSchedule::Reciprocal,
        }
    }

    /// mu2-SGD with constant `gamma` and `beta`.
    pub fn mu2_fixed(gamma: f64, beta: f64) -> Self {
        Self {
            kind: EstimatorKind::Mu2,
            alpha: AlphaSchedule::FixedGamma(gamma),
            beta: BetaSchedule::Fixed(beta),
        }
    }

    /// Worker momentum `m_t = beta m_{t-1} + (1 - beta) g_t` on plain SGD iterates.
    pub fn momentum(beta: f64) -> Self {
        Self {
            kind: EstimatorKind::Momentum,
            alpha: AlphaSchedule::FixedGamma(1.0),
            beta: BetaSchedule::Fixed(beta),
        }
    }

    pub fn sgd() -> Self {
        Self {
            kind: EstimatorKind::Sgd,
            alpha: AlphaSchedule::FixedGamma(1.0),
            beta: BetaSchedule::Fixed(0.0),
        }
    }

    pub fn label(&self) -> String {
        let alpha = match self.alpha {
            AlphaSchedule::Linear => "alpha=t".to_string(),
            AlphaSchedule::FixedGamma(g) => format!("gamma={g}"),
        };
        let beta = match self.beta {
            BetaSchedule::Reciprocal => "beta=1/t".to_string(),
            BetaSchedule::Fixed(b) => format!("beta={b}"),
        };
        format!("{}({alpha},{beta})", self.kind.name())
    }

    pub fn validate(&self) -> Result<()> {
        if let BetaSchedule::Fixed(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid("beta", format!("{b} is outside [0, 1]")));
            }
        }
        if let AlphaSchedule::FixedGamma(g) = self.alpha {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::invalid("gamma", format!("{g} is outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self, t: usize) -> Result<StepWeights> {
        schedule(self.alpha, self.beta, t)
    }
}

/// Weights for round `t >= 1`. `beta_1 = 1` always so the first estimate is
/// the plain stochastic gradient.
pub fn schedule(alpha: AlphaSchedule, beta: BetaSchedule, t: usize) -> Result<StepWeights> {
    if t < 1 {
        return Err(Error::invalid("t", "rounds start at 1"));
    }
    let tf = t as f64;
    let beta = match beta {
        _ if t == 1 => 1.0,
        BetaSchedule::Reciprocal => 1.0 / tf,
        BetaSchedule::Fixed(b) => b,
    };
    let (alpha, gamma) = match alpha {
        // alpha_t / alpha_{1:t} = t / (t (t + 1) / 2)
        AlphaSchedule::Linear => (tf, 2.0 / (tf + 1.0)),
        AlphaSchedule::FixedGamma(g) => (1.0, if t == 1 { 1.0 } else { g }),
    };
    Ok(StepWeights { alpha, beta, gamma })
}

/// `g_at_xt + (1 - beta_t) (d_prev - g_at_xprev)`; both gradients must come
/// from the same sample.
pub fn mu2_update(
    d_prev: &WorkerVector,
    g_at_xt: &WorkerVector,
    g_at_xprev: &WorkerVector,
    beta_t: f64,
) -> Result<WorkerVector> {
    check_beta(beta_t)?;
    let dim = g_at_xt.dim();
    d_prev.check_dim(dim)?;
    g_at_xprev.check_dim(dim)?;
    let keep = 1.0 - beta_t;
    Ok((0..dim)
        .map(|j| g_at_xt[j] + keep * (d_prev[j] - g_at_xprev[j]))
        .collect())
}

/// `beta m_prev + (1 - beta) g`.
pub fn momentum_update(m_prev: &WorkerVector, g: &WorkerVector, beta: f64) -> Result<WorkerVector> {
    check_beta(beta)?;
    m_prev.check_dim(g.dim())?;
    Ok(m_prev.iter().zip(g.iter()).map(|(m, x)| beta * m + (1.0 - beta) * x).collect())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} is outside [0, 1]")));
    }
    Ok(())
}

/// Estimator memory carried by one worker across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub kind: EstimatorKind,
    /// Previous momentum or corrected momentum; `None` before round 1.
    pub d_prev: Option<WorkerVector>,
    /// Last completed round.
    pub t: usize,
}

impl EstimatorState {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, d_prev: None, t: 0 }
    }

    /// Whether the next update needs a gradient at the previous query point.
    pub fn needs_previous_point(&self) -> bool {
        self.kind == EstimatorKind::Mu2 && self.d_prev.is_some()
    }

    /// Advances to the next round. `g_now` is the sample gradient at `x_t`;
    /// `g_prev_point` is the same sample's gradient at `x_{t-1}` (mu2 only,
    /// from round 2 on).
    pub fn advance(
        &mut self,
        weights: &StepWeights,
        g_now: WorkerVector,
        g_prev_point: Option<&WorkerVector>,
    ) -> Result<WorkerVector> {
        let next = match (self.kind, &self.d_prev) {
            (_, None) | (EstimatorKind::Sgd, _) => g_now,
            (EstimatorKind::Momentum, Some(prev)) => momentum_update(prev, &g_now, weights.beta)?,
            (EstimatorKind::Mu2, Some(prev)) => {
                let g_prev = g_prev_point
                    .ok_or_else(|| Error::invalid("g_prev_point", "mu2 needs the gradient at x_{t-1}"))?;
                mu2_update(prev, &g_now, g_prev, weights.beta)?
            }
        };
        self.d_prev = Some(next.clone());
        self.t += 1;
        Ok(next)
    }
}

/// Running weighted average of the iterates `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnytimeState {
    pub x_current: WorkerVector,
    pub alpha_cumsum: f64,
}

impl AnytimeState {
    /// `x_1 = w_1` with weight `alpha_1`.
    pub fn new(w1: WorkerVector, alpha1: f64) -> Self {
        Self {
            x_current: w1,
            alpha_cumsum: alpha1,
        }
    }
}

/// `x_new = (alpha_new w_new + alpha_{1:t} x_t) / (alpha_{1:t} + alpha_new)`.
pub fn anytime_step(state: &AnytimeState, w_new: &WorkerVector, alpha_new: f64) -> Result<AnytimeState> {
    if alpha_new.is_nan() || alpha_new <= 0.0 {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    w_new.check_dim(state.x_current.dim())?;
    let cumsum = state.alpha_cumsum + alpha_new;
    let x = w_new
        .iter()
        .zip(state.x_current.iter())
        .map(|(w, x)| (alpha_new * w + state.alpha_cumsum * x) / cumsum)
        .collect();
    Ok(AnytimeState {
        x_current: x,
        alpha_cumsum: cumsum,
    })
}

/// `x_new = gamma w_new + (1 - gamma) x_t`.
pub fn anytime_step_gamma(state: &AnytimeState, w_new: &WorkerVector, gamma: f64) -> Result<AnytimeState> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("{gamma} is outside (0, 1]")));
    }
    w_new.check_dim(state.x_current.dim())?;
    let x = w_new
        .iter()
        .zip(state.x_current.iter())
        .map(|(w, x)| gamma * w + (1.0 - gamma) * x)
        .collect();
    Ok(AnytimeState {
        x_current: x,
        alpha_cumsum: state.alpha_cumsum,
    })
}
