//! Baseline aggregation rules and their `(c_delta, delta)`-robustness coefficients.
//!
//! | rule  | c_delta, with r = delta / (1 - 2 delta) | cost           |
//! |-------|------------------------------------------|----------------|
//! | CWTM  | r (1 + r)                                | O(d m log m)   |
//! | Krum  | 1 + r                                    | O(d m^2)       |
//! | GM    | (1 + r)^2                                | iterative      |
//! | CWMed | (1 + r)^2                                | O(d m log m)   |
//! | Avg   | not robust                               | O(d m)         |

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::context::{byzantine_count, check_delta};
use crate::error::{Error, Result};
use crate::vector::{common_dim, dist_sq, mean_of, WorkerVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Average,
    Cwtm,
    Cwmed,
    Krum,
    GeometricMedian,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 5] = [
        AggregatorKind::Average,
        AggregatorKind::Cwtm,
        AggregatorKind::Cwmed,
        AggregatorKind::Krum,
        AggregatorKind::GeometricMedian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Average => "average",
            AggregatorKind::Cwtm => "cwtm",
            AggregatorKind::Cwmed => "cwmed",
            AggregatorKind::Krum => "krum",
            AggregatorKind::GeometricMedian => "geometric_median",
        }
    }
}

pub const DEFAULT_GM_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_GM_MAX_ITERATIONS: usize = 100_000;

fn default_gm_tolerance() -> f64 {
    DEFAULT_GM_TOLERANCE
}

fn default_gm_max_iterations() -> usize {
    DEFAULT_GM_MAX_ITERATIONS
}

/// A baseline aggregation rule together with the fraction bound it is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_gm_tolerance")]
    pub gm_tolerance: f64,
    #[serde(default = "default_gm_max_iterations")]
    pub gm_max_iterations: usize,
}

impl AggregatorSpec {
    pub fn new(kind: AggregatorKind, delta: f64) -> Self {
        Self {
            kind,
            delta,
            gm_tolerance: DEFAULT_GM_TOLERANCE,
            gm_max_iterations: DEFAULT_GM_MAX_ITERATIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.gm_tolerance.is_nan() || self.gm_tolerance <= 0.0 {
            return Err(Error::invalid("gm_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn aggregate(&self, vectors: &[WorkerVector]) -> Result<WorkerVector> {
        match self.kind {
            AggregatorKind::Average => average(vectors),
            AggregatorKind::Cwtm => cwtm(vectors, self.delta),
            AggregatorKind::Cwmed => cwmed(vectors),
            AggregatorKind::Krum => krum(vectors, self.delta),
            AggregatorKind::GeometricMedian => {
                geometric_median(vectors, self.gm_tolerance, self.gm_max_iterations)
            }
        }
    }

    pub fn c_delta(&self) -> Result<f64> {
        c_delta_bound(self)
    }
}

pub fn average(vectors: &[WorkerVector]) -> Result<WorkerVector> {
    let dim = common_dim(vectors)?;
    Ok(mean_of(vectors, dim))
}

fn sorted_column(vectors: &[WorkerVector], j: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(vectors.iter().map(|v| v[j]));
    buf.sort_unstable_by(f64::total_cmp);
}

/// Coordinate-wise trimmed mean: drop the `floor(delta*m)` largest and smallest
/// values of every coordinate and average the rest.
pub fn cwtm(vectors: &[WorkerVector], delta: f64) -> Result<WorkerVector> {
    check_delta(delta)?;
    let dim = common_dim(vectors)?;
    let m = vectors.len();
    let k = byzantine_count(delta, m);
    if 2 * k >= m {
        return Err(Error::TooMuchTrimming { trimmed: k, count: m });
    }
    let kept = (m - 2 * k) as f64;
    let mut column = Vec::with_capacity(m);
    Ok((0..dim)
        .map(|j| {
            sorted_column(vectors, j, &mut column);
            let kept_values = &column[k..m - k];
            if kept_values[0] == kept_values[kept_values.len() - 1] {
                kept_values[0]
            } else {
                kept_values.iter().sum::<f64>() / kept
            }
        })
        .collect())
}

/// Coordinate-wise median; even counts average the two middle order statistics.
pub fn cwmed(vectors: &[WorkerVector]) -> Result<WorkerVector> {
    let dim = common_dim(vectors)?;
    let m = vectors.len();
    let mut column = Vec::with_capacity(m);
    Ok((0..dim)
        .map(|j| {
            sorted_column(vectors, j, &mut column);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect())
}

/// Krum scores: sum of squared distances to the `m - f - 2` nearest other vectors.
pub fn krum_scores(vectors: &[WorkerVector], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    common_dim(vectors)?;
    let m = vectors.len();
    let f = byzantine_count(delta, m);
    if m < f + 3 {
        return Err(Error::KrumTooFewInputs { m, f });
    }
    let neighbors = m - f - 2;
    let mut dists = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = dist_sq(&vectors[i], &vectors[j]);
            dists[i * m + j] = d;
            dists[j * m + i] = d;
        }
    }
    let mut row = Vec::with_capacity(m - 1);
    Ok((0..m)
        .map(|i| {
            row.clear();
            row.extend((0..m).filter(|&j| j != i).map(|j| dists[i * m + j]));
            row.sort_unstable_by(f64::total_cmp);
            row[..neighbors].iter().sum()
        })
        .collect())
}

/// Krum: the single input with minimal score, lowest index on ties.
pub fn krum(vectors: &[WorkerVector], delta: f64) -> Result<WorkerVector> {
    let scores = krum_scores(vectors, delta)?;
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("krum has at least three inputs");
    Ok(vectors[best].clone())
}

/// Sum of Euclidean distances from `y` to every input.
pub fn geometric_median_objective(vectors: &[WorkerVector], y: &[f64]) -> f64 {
    vectors.iter().map(|v| dist_sq(v, y).sqrt()).sum()
}

const COINCIDENCE: f64 = 1e-12;

/// Epsilon-approximate geometric median by Weiszfeld iteration started from the
/// coordinate-wise median.
///
/// Iterates landing on an input point use the Vardi-Zhang modification: the
/// point is returned if its subgradient condition certifies optimality,
/// otherwise the iterate steps off it along the descent direction.
pub fn geometric_median(
    vectors: &[WorkerVector],
    tolerance: f64,
    max_iterations: usize,
) -> Result<WorkerVector> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    let dim = common_dim(vectors)?;
    let mut y = cwmed(vectors)?;
    let scale = 1.0 + y.norm();

    for _ in 0..max_iterations {
        let mut numer = vec![0.0; dim];
        let mut weight_sum = 0.0;
        // Sum of unit vectors pointing from y to the non-coincident inputs.
        let mut pull = vec![0.0; dim];
        let mut coincident = 0usize;
        for v in vectors {
            let dist = dist_sq(v, &y).sqrt();
            if dist <= COINCIDENCE * scale {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            weight_sum += w;
            for j in 0..dim {
                numer[j] += w * v[j];
                pull[j] += w * (v[j] - y[j]);
            }
        }
        if weight_sum == 0.0 {
            return Ok(y);
        }
        let pull_norm = pull.iter().map(|p| p * p).sum::<f64>().sqrt();
        let weiszfeld: Vec<f64> = numer.iter().map(|n| n / weight_sum).collect();

        let next: WorkerVector = if coincident == 0 {
            // The objective's gradient at y is -pull.
            if pull_norm < tolerance {
                return Ok(y);
            }
            WorkerVector::new(weiszfeld)
        } else {
            let k = coincident as f64;
            if pull_norm <= k {
                return Ok(y);
            }
            let lambda = k / pull_norm;
            (0..dim)
                .map(|j| (1.0 - lambda) * weiszfeld[j] + lambda * y[j])
                .collect()
        };
        let moved = next.dist(&y);
        y = next;
        if moved < tolerance {
            return Ok(y);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iterations,
        last_iterate: y,
    })
}

/// Theoretical `c_delta` for a robust rule.
pub fn c_delta_bound(spec: &AggregatorSpec) -> Result<f64> {
    check_delta(spec.delta)?;
    let r = spec.delta / (1.0 - 2.0 * spec.delta);
    match spec.kind {
        AggregatorKind::Average => Err(Error::NotRobust("average")),
        AggregatorKind::Cwtm => Ok(r * (1.0 + r)),
        AggregatorKind::Krum => Ok(1.0 + r),
        AggregatorKind::Cwmed | AggregatorKind::GeometricMedian => Ok((1.0 + r) * (1.0 + r)),
    }
}

/// Orders indices by `(key, index)`, the deterministic tie-break used by every
/// distance-sorting rule in the crate.
pub(crate) fn argsort_by_key(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_unstable_by(|&a, &b| match keys[a].total_cmp(&keys[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx
}
