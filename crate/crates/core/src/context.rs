//! Per-round identifiers shared by the engine, the attacks and the harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Guards `floor(0.3 * 20)` and friends against products like 5.999...
const COUNT_SLACK: f64 = 1e-9;

/// `floor(delta * m)`: the number of Byzantine workers a fraction bound admits.
pub fn byzantine_count(delta: f64, m: usize) -> usize {
    (delta * m as f64 + COUNT_SLACK).floor().max(0.0) as usize
}

/// `ceil((1 - delta) * m)`: how many inputs CTMA and NNM keep.
pub fn keep_count(delta: f64, m: usize) -> usize {
    (((1.0 - delta) * m as f64) - COUNT_SLACK).ceil().clamp(0.0, m as f64) as usize
}

pub fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::invalid("delta", format!("{delta} is outside [0, 1/2)")));
    }
    Ok(())
}

/// The Byzantine set used by default: the last `floor(delta * m)` worker indices.
pub fn default_byzantine_set(delta: f64, m: usize) -> Vec<usize> {
    let f = byzantine_count(delta, m);
    (m - f..m).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    /// 1-based round index.
    pub t: usize,
    pub m: usize,
    pub delta: f64,
    /// Sorted, deduplicated Byzantine worker indices.
    pub byzantine_set: Vec<usize>,
    pub seed: u64,
}

impl RoundContext {
    pub fn new(t: usize, m: usize, delta: f64, byzantine_set: Vec<usize>, seed: u64) -> Result<Self> {
        check_delta(delta)?;
        if t == 0 {
            return Err(Error::invalid("t", "rounds are 1-based"));
        }
        let mut byzantine_set = byzantine_set;
        byzantine_set.sort_unstable();
        byzantine_set.dedup();
        if let Some(&bad) = byzantine_set.iter().find(|&&i| i >= m) {
            return Err(Error::invalid("byzantine_set", format!("index {bad} >= m = {m}")));
        }
        let limit = byzantine_count(delta, m);
        if byzantine_set.len() > limit {
            return Err(Error::invalid(
                "byzantine_set",
                format!("{} Byzantine workers exceed floor(delta*m) = {limit}", byzantine_set.len()),
            ));
        }
        Ok(Self {
            t,
            m,
            delta,
            byzantine_set,
            seed,
        })
    }

    pub fn is_byzantine(&self, worker: usize) -> bool {
        self.byzantine_set.binary_search(&worker).is_ok()
    }

    pub fn honest_set(&self) -> Vec<usize> {
        (0..self.m).filter(|&i| !self.is_byzantine(i)).collect()
    }

    pub fn honest_count(&self) -> usize {
        self.m - self.byzantine_set.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_robust_to_rounding() {
        assert_eq!(byzantine_count(0.3, 20), 6);
        assert_eq!(byzantine_count(0.1, 30), 3);
        assert_eq!(byzantine_count(0.25, 4), 1);
        assert_eq!(byzantine_count(0.0, 10), 0);
        assert_eq!(keep_count(0.25, 4), 3);
        assert_eq!(keep_count(0.3, 20), 14);
        assert_eq!(keep_count(0.0, 7), 7);
        assert_eq!(keep_count(0.2, 7), 6);
    }

    #[test]
    fn context_validation() {
        assert!(RoundContext::new(1, 8, 0.5, vec![], 0).is_err());
        assert!(RoundContext::new(0, 8, 0.25, vec![], 0).is_err());
        assert!(RoundContext::new(1, 8, 0.25, vec![8], 0).is_err());
        assert!(RoundContext::new(1, 8, 0.25, vec![0, 1, 2], 0).is_err());
        let ctx = RoundContext::new(1, 8, 0.25, vec![7, 6], 0).unwrap();
        assert_eq!(ctx.byzantine_set, vec![6, 7]);
        assert_eq!(ctx.honest_set(), (0..6).collect::<Vec<_>>());
        assert!(ctx.honest_count() as f64 >= (1.0 - ctx.delta) * 8.0);
    }

    #[test]
    fn default_set_takes_the_tail() {
        assert_eq!(default_byzantine_set(0.25, 8), vec![6, 7]);
        assert!(default_byzantine_set(0.0, 8).is_empty());
    }
}
