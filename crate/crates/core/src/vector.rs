//! Dense `f64` vectors exchanged between workers and the parameter server.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A d-dimensional real vector: a gradient, a momentum, or a corrected
/// momentum submitted by one worker in one round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerVector(Vec<f64>);

impl WorkerVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &WorkerVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn dist_sq(&self, other: &WorkerVector) -> f64 {
        dist_sq(&self.0, &other.0)
    }

    pub fn dist(&self, other: &WorkerVector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    /// `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &WorkerVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            *a *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> WorkerVector {
        WorkerVector(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn add(&self, other: &WorkerVector) -> WorkerVector {
        WorkerVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &WorkerVector) -> WorkerVector {
        WorkerVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for WorkerVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl From<&[f64]> for WorkerVector {
    fn from(values: &[f64]) -> Self {
        Self(values.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for WorkerVector {
    fn from(values: [f64; N]) -> Self {
        Self(values.to_vec())
    }
}

impl Deref for WorkerVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WorkerVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl FromIterator<f64> for WorkerVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums in a fixed order.
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            lanes[k] += d * d;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Checks that `vectors` is nonempty, equal-dimensional and finite, returning `d`.
pub fn common_dim(vectors: &[WorkerVector]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::EmptyInput("worker vectors"))?;
    let dim = first.dim();
    for v in vectors {
        v.check_dim(dim)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("worker vector"));
        }
    }
    Ok(dim)
}

/// Coordinate-wise mean with a fixed left-to-right summation order. A
/// coordinate on which all inputs agree is returned exactly.
pub fn mean_of<'a, I>(vectors: I, dim: usize) -> WorkerVector
where
    I: IntoIterator<Item = &'a WorkerVector>,
{
    let mut acc = vec![0.0; dim];
    let mut first: Option<&WorkerVector> = None;
    let mut constant = vec![true; dim];
    let mut count = 0usize;
    for v in vectors {
        let f = *first.get_or_insert(v);
        for j in 0..dim {
            acc[j] += v[j];
            constant[j] &= v[j] == f[j];
        }
        count += 1;
    }
    let n = count.max(1) as f64;
    for j in 0..dim {
        acc[j] = match first {
            Some(f) if constant[j] => f[j],
            _ => acc[j] / n,
        };
    }
    WorkerVector(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = WorkerVector::from([3.0, 4.0]);
        assert_eq!(a.norm(), 5.0);
        let b = WorkerVector::from([1.0, 1.0]);
        assert_eq!(a.sub(&b).as_slice(), &[2.0, 3.0]);
        assert_eq!(a.dist_sq(&b), 13.0);
        let mut c = a.clone();
        c.axpy(-2.0, &b);
        assert_eq!(c.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn common_dim_rejects_mismatch_and_nan() {
        assert!(matches!(common_dim(&[]), Err(Error::EmptyInput(_))));
        let bad = [WorkerVector::from([1.0]), WorkerVector::from([1.0, 2.0])];
        assert!(matches!(
            common_dim(&bad),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
        let nan = [WorkerVector::from([f64::NAN])];
        assert!(matches!(common_dim(&nan), Err(Error::NonFinite(_))));
    }
}
