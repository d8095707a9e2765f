//! Deterministic mergeable quantile summary.
//!
//! Holds a sorted list of weighted samples. While the number of pooled values
//! stays within `capacity` every weight is 1 and rank queries are exact. Past
//! that, adjacent pairs are fused (keeping the lower value on even rounds and
//! the upper on odd rounds), so each compaction round moves any rank by at
//! most the largest item weight. Merging is order-preserving, and the merge
//! tree is fixed by the caller, so output depends only on input order.

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSummary {
    values: Vec<f64>,
    weights: Vec<u64>,
    total: u64,
    min: f64,
    max: f64,
    capacity: usize,
    rounds: u32,
}

impl QuantileSummary {
    pub fn from_values(mut values: Vec<f64>, capacity: usize) -> Self {
        assert!(capacity >= 2, "summary capacity must be >= 2");
        values.sort_by(f64::total_cmp);
        let total = values.len() as u64;
        let min = values.first().copied().unwrap_or(f64::INFINITY);
        let max = values.last().copied().unwrap_or(f64::NEG_INFINITY);
        let weights = vec![1; values.len()];
        let mut s = Self {
            values,
            weights,
            total,
            min,
            max,
            capacity,
            rounds: 0,
        };
        s.compact();
        s
    }

    pub fn merge(self, other: Self) -> Self {
        if other.total == 0 {
            return self;
        }
        if self.total == 0 {
            return other;
        }
        let n = self.values.len() + other.values.len();
        let mut values = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let (mut i, mut j) = (0, 0);
        while i < self.values.len() || j < other.values.len() {
            // ties take the left operand first
            let take_left = j == other.values.len()
                || (i < self.values.len() && self.values[i].total_cmp(&other.values[j]).is_le());
            if take_left {
                values.push(self.values[i]);
                weights.push(self.weights[i]);
                i += 1;
            } else {
                values.push(other.values[j]);
                weights.push(other.weights[j]);
                j += 1;
            }
        }
        let mut s = Self {
            values,
            weights,
            total: self.total + other.total,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            capacity: self.capacity.min(other.capacity),
            rounds: self.rounds.max(other.rounds),
        };
        s.compact();
        s
    }

    fn compact(&mut self) {
        while self.values.len() > self.capacity {
            let keep_upper = self.rounds % 2 == 1;
            let n = self.values.len();
            let mut values = Vec::with_capacity(n / 2 + 1);
            let mut weights = Vec::with_capacity(n / 2 + 1);
            let mut k = 0;
            while k + 1 < n {
                values.push(if keep_upper { self.values[k + 1] } else { self.values[k] });
                weights.push(self.weights[k] + self.weights[k + 1]);
                k += 2;
            }
            if k < n {
                values.push(self.values[k]);
                weights.push(self.weights[k]);
            }
            self.values = values;
            self.weights = weights;
            self.rounds += 1;
        }
    }

    /// Number of pooled values.
    pub fn count(&self) -> u64 {
        self.total
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// True while no compaction has happened, i.e. ranks are exact.
    pub fn is_exact(&self) -> bool {
        self.rounds == 0
    }

    /// Value holding 0-based rank `rank` in the pooled sort order.
    pub fn value_at_rank(&self, rank: u64) -> f64 {
        let mut cum = 0;
        for (v, w) in self.values.iter().zip(&self.weights) {
            if cum + w > rank {
                return *v;
            }
            cum += w;
        }
        self.max
    }

    /// Interior equi-population edges: the values at ranks `floor(k n / bins)`
    /// for `k = 1..bins`.
    pub fn edges(&self, bins: usize) -> Vec<f64> {
        let n = self.total as u128;
        (1..bins)
            .map(|k| self.value_at_rank(((k as u128 * n) / bins as u128) as u64))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_below_capacity() {
        let s = QuantileSummary::from_values((1..=100).rev().map(f64::from).collect(), 1000);
        assert!(s.is_exact());
        assert_eq!(s.edges(10), (1..10).map(|k| (10 * k + 1) as f64).collect::<Vec<_>>());
        assert_eq!((s.min(), s.max()), (1.0, 100.0));
    }

    #[test]
    fn merge_matches_single_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let whole = QuantileSummary::from_values(vals.clone(), 1 << 20);
        let parts = vals
            .chunks(333)
            .map(|c| QuantileSummary::from_values(c.to_vec(), 1 << 20))
            .reduce(QuantileSummary::merge)
            .unwrap();
        assert_eq!(whole.edges(16), parts.edges(16));
        assert_eq!(parts.count(), 5000);
    }

    #[test]
    fn compacted_ranks_stay_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f64> = (0..40_000).map(|_| rng.random::<f64>()).collect();
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let s = vals
            .chunks(1000)
            .map(|c| QuantileSummary::from_values(c.to_vec(), 2048))
            .reduce(QuantileSummary::merge)
            .unwrap();
        assert!(!s.is_exact());
        assert_eq!((s.min(), s.max()), (sorted[0], sorted[39_999]));
        for (k, e) in s.edges(8).iter().enumerate() {
            let want = (k + 1) * 40_000 / 8;
            let rank = sorted.partition_point(|v| v < e);
            let err = (rank as i64 - want as i64).unsigned_abs();
            assert!(err < 400, "edge {k} rank error {err}");
        }
    }

    #[test]
    fn empty_summary() {
        let s = QuantileSummary::from_values(vec![], 4);
        assert_eq!(s.count(), 0);
        let t = QuantileSummary::from_values(vec![2.0], 4);
        assert_eq!(s.merge(t).count(), 1);
    }
}
