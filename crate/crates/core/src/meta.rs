//! Meta-aggregators wrapping a baseline rule: CTMA, plus NNM and Bucketing
//! as comparison baselines.
//!
//! CTMA anchors on the baseline output `x0`, keeps the `ceil((1 - delta) m)`
//! inputs closest to it and averages them. Beyond computing `x0` this costs
//! `O(d m + m log m)`, against `O(d m^2)` for nearest-neighbour mixing.

use serde::{Deserialize, Serialize};

use crate::aggregators::{argsort_by_key, AggregatorSpec};
use crate::context::{check_delta, keep_count};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::vector::{common_dim, dist_sq, mean_of, WorkerVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    #[default]
    None,
    Ctma,
    Nnm,
    Bucketing,
    NnmThenCtma,
}

impl MetaKind {
    pub fn name(self) -> &'static str {
        match self {
            MetaKind::None => "none",
            MetaKind::Ctma => "ctma",
            MetaKind::Nnm => "nnm",
            MetaKind::Bucketing => "bucketing",
            MetaKind::NnmThenCtma => "nnm_then_ctma",
        }
    }
}

/// A robustness coefficient that is either a usable constant or only
/// measurable empirically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustnessBound {
    Bound(f64),
    EmpiricalOnly,
}

impl RobustnessBound {
    pub fn value(self) -> Option<f64> {
        match self {
            RobustnessBound::Bound(c) => Some(c),
            RobustnessBound::EmpiricalOnly => None,
        }
    }
}

fn default_bucket_size() -> usize {
    2
}

/// Full aggregation pipeline: optional pre-mixing, a baseline rule, optional
/// CTMA post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSpec {
    #[serde(default)]
    pub kind: MetaKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_bucket_size")]
    pub bucket_size: usize,
    pub base: AggregatorSpec,
}

impl MetaSpec {
    pub fn new(kind: MetaKind, base: AggregatorSpec) -> Self {
        Self {
            kind,
            delta: base.delta,
            bucket_size: default_bucket_size(),
            base,
        }
    }

    pub fn bare(base: AggregatorSpec) -> Self {
        Self::new(MetaKind::None, base)
    }

    pub fn with_bucket_size(mut self, bucket_size: usize) -> Self {
        self.bucket_size = bucket_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        self.base.validate()?;
        if self.bucket_size == 0 {
            return Err(Error::invalid("bucket_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Human-readable label such as `cwtm+ctma`.
    pub fn label(&self) -> String {
        match self.kind {
            MetaKind::None => self.base.kind.name().to_string(),
            MetaKind::Ctma => format!("{}+ctma", self.base.kind.name()),
            MetaKind::Nnm => format!("nnm+{}", self.base.kind.name()),
            MetaKind::Bucketing => format!("bucketing+{}", self.base.kind.name()),
            MetaKind::NnmThenCtma => format!("nnm+{}+ctma", self.base.kind.name()),
        }
    }

    pub fn aggregate(&self, vectors: &[WorkerVector], rng: &mut RandomStream) -> Result<WorkerVector> {
        match self.kind {
            MetaKind::None => self.base.aggregate(vectors),
            MetaKind::Ctma => ctma(vectors, &self.base, self.delta),
            MetaKind::Nnm => self.base.aggregate(&nnm(vectors, self.delta)?),
            MetaKind::Bucketing => self.base.aggregate(&bucketing(vectors, self.bucket_size, rng)?),
            MetaKind::NnmThenCtma => ctma(&nnm(vectors, self.delta)?, &self.base, self.delta),
        }
    }

    pub fn c_delta(&self) -> Result<RobustnessBound> {
        composed_c_delta(self)
    }
}

/// CTMA given a precomputed anchor `x0`.
pub fn ctma_with_anchor(vectors: &[WorkerVector], anchor: &WorkerVector, delta: f64) -> Result<WorkerVector> {
    check_delta(delta)?;
    let dim = common_dim(vectors)?;
    anchor.check_dim(dim)?;
    let keep = keep_count(delta, vectors.len());
    if keep == 0 {
        return Err(Error::EmptyInput("CTMA selection"));
    }
    let distances: Vec<f64> = vectors.iter().map(|v| dist_sq(v, anchor)).collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    if keep < vectors.len() {
        // Only the boundary between kept and discarded matters, then the kept
        // prefix is put in a fixed order for a reproducible summation.
        let cmp = |a: &usize, b: &usize| distances[*a].total_cmp(&distances[*b]).then(a.cmp(b));
        order.select_nth_unstable_by(keep - 1, cmp);
        order.truncate(keep);
        order.sort_unstable();
    }
    Ok(mean_of(order.iter().map(|&i| &vectors[i]), dim))
}

/// Indices CTMA keeps, in `(distance, index)` order.
pub fn ctma_selection(vectors: &[WorkerVector], anchor: &WorkerVector, delta: f64) -> Vec<usize> {
    let distances: Vec<f64> = vectors.iter().map(|v| dist_sq(v, anchor)).collect();
    let mut order = argsort_by_key(&distances);
    order.truncate(keep_count(delta, vectors.len()));
    order
}

/// Centered Trimmed Meta Aggregator.
pub fn ctma(vectors: &[WorkerVector], base: &AggregatorSpec, delta: f64) -> Result<WorkerVector> {
    let anchor = base.aggregate(vectors)?;
    ctma_with_anchor(vectors, &anchor, delta)
}

/// Nearest-neighbour mixing: every input is replaced by the mean of its
/// `ceil((1 - delta) m)` nearest inputs, itself included.
pub fn nnm(vectors: &[WorkerVector], delta: f64) -> Result<Vec<WorkerVector>> {
    check_delta(delta)?;
    let dim = common_dim(vectors)?;
    let m = vectors.len();
    let keep = keep_count(delta, m).max(1);
    let mut dists = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = dist_sq(&vectors[i], &vectors[j]);
            dists[i * m + j] = d;
            dists[j * m + i] = d;
        }
    }
    let mut order: Vec<usize> = Vec::with_capacity(m);
    Ok((0..m)
        .map(|i| {
            let row = &dists[i * m..(i + 1) * m];
            order.clear();
            order.extend(0..m);
            // Self first, then (distance, index).
            let cmp = |a: &usize, b: &usize| {
                (*a != i)
                    .cmp(&(*b != i))
                    .then(row[*a].total_cmp(&row[*b]))
                    .then(a.cmp(b))
            };
            if keep < m {
                order.select_nth_unstable_by(keep - 1, cmp);
                order.truncate(keep);
            }
            order.sort_unstable();
            mean_of(order.iter().map(|&j| &vectors[j]), dim)
        })
        .collect())
}

/// Bucketing under an explicit permutation of `0..m`.
pub fn bucketing_with_permutation(
    vectors: &[WorkerVector],
    bucket_size: usize,
    permutation: &[usize],
) -> Result<Vec<WorkerVector>> {
    if bucket_size == 0 {
        return Err(Error::invalid("bucket_size", "must be at least 1"));
    }
    let dim = common_dim(vectors)?;
    if permutation.len() != vectors.len() {
        return Err(Error::invalid("permutation", "length differs from the input count"));
    }
    Ok(permutation
        .chunks(bucket_size)
        .map(|bucket| mean_of(bucket.iter().map(|&i| &vectors[i]), dim))
        .collect())
}

/// Bucketing: shuffle, split into `ceil(m / bucket_size)` consecutive buckets,
/// and average each bucket.
pub fn bucketing(vectors: &[WorkerVector], bucket_size: usize, rng: &mut RandomStream) -> Result<Vec<WorkerVector>> {
    let mut permutation: Vec<usize> = (0..vectors.len()).collect();
    rng.shuffle(&mut permutation);
    bucketing_with_permutation(vectors, bucket_size, &permutation)
}

/// Robustness coefficient of the whole pipeline. CTMA turns a base `c` into
/// `16 delta (1 + c)`; NNM and Bucketing only carry order-of-magnitude
/// guarantees and report [`RobustnessBound::EmpiricalOnly`].
pub fn composed_c_delta(meta: &MetaSpec) -> Result<RobustnessBound> {
    check_delta(meta.delta)?;
    match meta.kind {
        MetaKind::None => meta.base.c_delta().map(RobustnessBound::Bound),
        MetaKind::Ctma => {
            let c = meta.base.c_delta()?;
            Ok(RobustnessBound::Bound(ctma_c_delta(meta.delta, c)))
        }
        MetaKind::Nnm | MetaKind::Bucketing | MetaKind::NnmThenCtma => Ok(RobustnessBound::EmpiricalOnly),
    }
}

pub fn ctma_c_delta(delta: f64, base_c_delta: f64) -> f64 {
    16.0 * delta * (1.0 + base_c_delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{average, AggregatorKind};
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    fn scalars(xs: &[f64]) -> Vec<WorkerVector> {
        xs.iter().map(|&x| WorkerVector::from([x])).collect()
    }

    fn random_set(seed: u64, m: usize, d: usize) -> Vec<WorkerVector> {
        let mut rng = seeded_rng(seed, &[m as u64, d as u64, 99]);
        (0..m)
            .map(|_| (0..d).map(|_| 2.0 * rng.standard_normal() + 1.0).collect())
            .collect()
    }

    #[test]
    fn ctma_example() {
        let base = AggregatorSpec::new(AggregatorKind::Cwmed, 0.25);
        let out = ctma(&scalars(&[0.0, 1.0, 2.0, 100.0]), &base, 0.25).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn ctma_at_zero_delta_is_the_average() {
        let v = random_set(3, 9, 4);
        for kind in AggregatorKind::ALL {
            let base = AggregatorSpec::new(kind, 0.0);
            assert_eq!(ctma(&v, &base, 0.0).unwrap(), average(&v).unwrap());
        }
    }

    #[test]
    fn ctma_identical_inputs() {
        let v = vec![WorkerVector::from([2.0, -1.0]); 7];
        let base = AggregatorSpec::new(AggregatorKind::Krum, 0.2);
        assert_eq!(ctma(&v, &base, 0.2).unwrap().as_slice(), &[2.0, -1.0]);
    }

    #[test]
    fn ctma_propagates_base_errors() {
        let base = AggregatorSpec::new(AggregatorKind::Krum, 0.4);
        assert!(matches!(
            ctma(&scalars(&[0.0, 1.0, 2.0]), &base, 0.4),
            Err(Error::KrumTooFewInputs { .. })
        ));
    }

    #[test]
    fn nnm_examples() {
        let out = nnm(&scalars(&[0.0, 1.0, 2.0, 100.0]), 0.25).unwrap();
        let got: Vec<f64> = out.iter().map(|v| v[0]).collect();
        assert_eq!(&got[..3], &[1.0, 1.0, 1.0]);
        assert!((got[3] - 103.0 / 3.0).abs() < 1e-12);

        let v = random_set(5, 6, 3);
        let mean = average(&v).unwrap();
        for out in nnm(&v, 0.0).unwrap() {
            assert!(out.dist(&mean) < 1e-12);
        }

        let same = vec![WorkerVector::from([4.0]); 5];
        assert_eq!(nnm(&same, 0.2).unwrap(), same);
    }

    #[test]
    fn bucketing_examples() {
        let v = scalars(&[0.0, 2.0, 4.0, 6.0]);
        // 1-based permutation (3, 1, 4, 2).
        let out = bucketing_with_permutation(&v, 2, &[2, 0, 3, 1]).unwrap();
        assert_eq!(out, scalars(&[2.0, 4.0]));

        let mut rng = seeded_rng(1, &[0]);
        let all = bucketing(&v, 4, &mut rng).unwrap();
        assert_eq!(all, scalars(&[3.0]));

        let singles = bucketing(&v, 1, &mut rng).unwrap();
        let mut vals: Vec<f64> = singles.iter().map(|x| x[0]).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![0.0, 2.0, 4.0, 6.0]);

        let odd = bucketing(&scalars(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2, &mut rng).unwrap();
        assert_eq!(odd.len(), 3);
        assert!(bucketing(&v, 0, &mut rng).is_err());
    }

    #[test]
    fn composed_bounds() {
        let krum = AggregatorSpec::new(AggregatorKind::Krum, 0.25);
        // 16 * 0.25 * (1 + c) with c = 1 + 0.25 / 0.5 = 1.5.
        let meta = MetaSpec::new(MetaKind::Ctma, krum);
        assert!((meta.c_delta().unwrap().value().unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(ctma_c_delta(0.25, 1.0), 8.0);

        let zero = MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(AggregatorKind::Cwtm, 0.0));
        assert_eq!(zero.c_delta().unwrap(), RobustnessBound::Bound(0.0));

        let cwtm = MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(AggregatorKind::Cwtm, 0.1));
        assert!((cwtm.c_delta().unwrap().value().unwrap() - 1.825).abs() < 1e-12);

        let nnm = MetaSpec::new(MetaKind::Nnm, AggregatorSpec::new(AggregatorKind::Cwtm, 0.1));
        assert_eq!(nnm.c_delta().unwrap(), RobustnessBound::EmpiricalOnly);
        let bare = MetaSpec::bare(AggregatorSpec::new(AggregatorKind::Cwtm, 0.2));
        assert!((bare.c_delta().unwrap().value().unwrap() - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn kept_set_dominates_discarded_set() {
        for seed in 0..50 {
            let v = random_set(seed, 13, 5);
            let base = AggregatorSpec::new(AggregatorKind::Cwmed, 0.3);
            let anchor = base.aggregate(&v).unwrap();
            let kept = ctma_selection(&v, &anchor, 0.3);
            assert_eq!(kept.len(), keep_count(0.3, 13));
            let worst_kept = kept.iter().map(|&i| v[i].dist(&anchor)).fold(0.0, f64::max);
            let best_dropped = (0..13)
                .filter(|i| !kept.contains(i))
                .map(|i| v[i].dist(&anchor))
                .fold(f64::INFINITY, f64::min);
            assert!(worst_kept <= best_dropped);
            let direct = mean_of(kept.iter().map(|&i| &v[i]), 5);
            let fast = ctma_with_anchor(&v, &anchor, 0.3).unwrap();
            assert!(direct.dist(&fast) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ctma_translation_equivariant(seed in 0u64..500, shift in -20.0f64..20.0) {
            let v = random_set(seed, 10, 3);
            let c = WorkerVector::from([shift, 1.0, -shift]);
            let moved: Vec<WorkerVector> = v.iter().map(|x| x.add(&c)).collect();
            for kind in [AggregatorKind::Cwtm, AggregatorKind::Cwmed, AggregatorKind::Krum] {
                let base = AggregatorSpec::new(kind, 0.2);
                let a = ctma(&v, &base, 0.2).unwrap().add(&c);
                let b = ctma(&moved, &base, 0.2).unwrap();
                prop_assert!(a.dist(&b) < 1e-9 * (1.0 + shift.abs()));
            }
        }
    }
}
