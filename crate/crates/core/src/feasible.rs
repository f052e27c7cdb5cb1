//! The feasible set `K`, fixed to a Euclidean ball.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::WorkerVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub center: WorkerVector,
    pub radius: f64,
}

impl FeasibleSet {
    pub fn ball(center: WorkerVector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("{radius} is not a nonnegative finite number")));
        }
        if !center.is_finite() {
            return Err(Error::NonFinite("ball center"));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Diameter `D = 2 * radius`.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn distance_to_center(&self, x: &WorkerVector) -> f64 {
        x.dist(&self.center)
    }

    /// Membership with an absolute slack for round-off.
    pub fn contains(&self, x: &WorkerVector, slack: f64) -> bool {
        x.dim() == self.dim() && self.distance_to_center(x) <= self.radius + slack
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, x: &WorkerVector) -> Result<WorkerVector> {
        x.check_dim(self.dim())?;
        if !x.is_finite() {
            return Err(Error::NonFinite("projection input"));
        }
        let offset = x.sub(&self.center);
        let dist = self.distance_to_center(x);
        if dist <= self.radius {
            return Ok(x.clone());
        }
        // Shrink by an ulp at a time until the result is inside, so that
        // projecting a projected point is exactly the identity.
        let mut factor = self.radius / dist;
        let mut shrink = f64::EPSILON;
        loop {
            let mut out = self.center.clone();
            out.axpy(factor, &offset);
            if self.distance_to_center(&out) <= self.radius {
                return Ok(out);
            }
            factor *= 1.0 - shrink;
            shrink = (2.0 * shrink).min(1.0);
        }
    }
}
