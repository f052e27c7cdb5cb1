//! Byzantine behaviours.
//!
//! Vector attacks see every honest submission of the current round before
//! answering. `LabelFlip` acts on the data pipeline instead: Byzantine workers
//! run the honest estimator on labels `9 - y`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::context::RoundContext;
use crate::error::{Error, Result};
use crate::vector::{common_dim, mean_of, WorkerVector};

pub use crate::problems::flip_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    SignFlip,
    Little,
    Empire,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::None,
        AttackKind::LabelFlip,
        AttackKind::SignFlip,
        AttackKind::Little,
        AttackKind::Empire,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::Little => "little",
            AttackKind::Empire => "empire",
        }
    }

    /// Whether Byzantine workers compute on flipped labels.
    pub fn flips_labels(self) -> bool {
        self == AttackKind::LabelFlip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default)]
    pub kind: AttackKind,
    /// Empire scale.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Little deviation in standard deviations; computed from `(m, f)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max_override: Option<f64>,
}

fn default_epsilon() -> f64 {
    0.5
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self::new(AttackKind::None)
    }
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            epsilon: default_epsilon(),
            z_max_override: None,
        }
    }

    pub fn with_z_max(mut self, z_max: f64) -> Self {
        self.z_max_override = Some(z_max);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if let Some(z) = self.z_max_override {
            if !z.is_finite() {
                return Err(Error::invalid("z_max_override", "must be finite"));
            }
        }
        Ok(())
    }

    /// The Little deviation used with `m` workers of which `f` are Byzantine.
    pub fn z_max(&self, m: usize, f: usize) -> f64 {
        self.z_max_override.unwrap_or_else(|| little_z_max(m, f))
    }
}

/// `Phi^{-1}((m - f - s) / (m - f))` with `s = floor(m/2 + 1) - f`, clamped at 0.
pub fn little_z_max(m: usize, f: usize) -> f64 {
    if f >= m {
        return 0.0;
    }
    let s = (m / 2 + 1) as f64 - f as f64;
    let honest = (m - f) as f64;
    let p = (honest - s) / honest;
    if p <= 0.5 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let normal = Normal::standard();
    normal.inverse_cdf(p).max(0.0)
}

/// Coordinate-wise population standard deviation.
pub fn population_std(vectors: &[WorkerVector]) -> Result<WorkerVector> {
    let dim = common_dim(vectors)?;
    let mean = mean_of(vectors, dim);
    let n = vectors.len() as f64;
    Ok((0..dim)
        .map(|j| {
            let var = vectors.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect())
}

/// Byzantine submissions for one round, in `ctx.byzantine_set` order.
///
/// `own_outputs[k]` is what Byzantine worker `ctx.byzantine_set[k]` would
/// have sent had it been honest (on flipped data under `LabelFlip`).
pub fn apply_attack(
    spec: &AttackSpec,
    honest_outputs: &[WorkerVector],
    own_outputs: &[WorkerVector],
    ctx: &RoundContext,
) -> Result<Vec<WorkerVector>> {
    spec.validate()?;
    let f = ctx.byzantine_set.len();
    if f == 0 {
        return Ok(Vec::new());
    }
    let omniscient = matches!(spec.kind, AttackKind::Little | AttackKind::Empire);
    if omniscient && honest_outputs.is_empty() {
        return Err(Error::EmptyInput("honest outputs for an omniscient attack"));
    }
    if !omniscient && own_outputs.len() != f {
        return Err(Error::invalid(
            "own_outputs",
            format!("{} vectors for {f} Byzantine workers", own_outputs.len()),
        ));
    }
    match spec.kind {
        AttackKind::None | AttackKind::LabelFlip => Ok(own_outputs.to_vec()),
        AttackKind::SignFlip => Ok(own_outputs.iter().map(|v| v.scaled(-1.0)).collect()),
        AttackKind::Empire => {
            let dim = common_dim(honest_outputs)?;
            let target = mean_of(honest_outputs, dim).scaled(-spec.epsilon);
            Ok(vec![target; f])
        }
        AttackKind::Little => {
            let dim = common_dim(honest_outputs)?;
            let mean = mean_of(honest_outputs, dim);
            let std = population_std(honest_outputs)?;
            let z = spec.z_max(ctx.m, f);
            let target: WorkerVector = mean.iter().zip(std.iter()).map(|(mu, s)| mu - z * s).collect();
            if !target.is_finite() {
                return Err(Error::NonFinite("little attack output"));
            }
            Ok(vec![target; f])
        }
    }
}
