use alloc::vec::Vec;

use crate::error::{config_err, data_err};
use crate::Result;

/// Maps a numeric value to a bucket index through sorted boundaries.
///
/// A value equal to a boundary falls into the lower bucket.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bucketizer {
    boundaries: Vec<f64>,
}

/// Linear interpolation between order statistics of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl Bucketizer {
    /// Boundaries at the empirical `k / num_buckets` quantiles, deduplicated.
    /// Boundaries at or above the maximum are dropped, so a constant field
    /// yields a single bucket.
    pub fn fit(values: &[f64], num_buckets: usize) -> Result<Self> {
        if num_buckets < 2 {
            return Err(config_err!("num_buckets must be at least 2, got {num_buckets}"));
        }
        if values.is_empty() {
            return Err(data_err!("cannot fit a bucketizer on zero values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(data_err!("numeric field contains non-finite values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = sorted[sorted.len() - 1];
        let mut boundaries: Vec<f64> = Vec::with_capacity(num_buckets - 1);
        for k in 1..num_buckets {
            let b = quantile(&sorted, k as f64 / num_buckets as f64);
            if b < max && boundaries.last().is_none_or(|&last| b > last) {
                boundaries.push(b);
            }
        }
        Ok(Self { boundaries })
    }

    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.iter().any(|b| !b.is_finite()) {
            return Err(config_err!("bucket boundaries must be finite and strictly increasing"));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn num_buckets(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bucket(&self, value: f64) -> u64 {
        self.boundaries.partition_point(|&b| b < value) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn quartiles_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let b = Bucketizer::fit(&values, 4).unwrap();
        assert_eq!(b.boundaries(), &[25.75, 50.5, 75.25]);
        assert_eq!(b.num_buckets(), 4);
    }

    #[test]
    fn constant_field_is_one_bucket() {
        let b = Bucketizer::fit(&[3.0; 10], 5).unwrap();
        assert!(b.boundaries().is_empty());
        assert_eq!(b.bucket(3.0), 0);
        assert_eq!(b.bucket(1e9), 0);
    }

    #[test]
    fn two_point_split() {
        let b = Bucketizer::fit(&[1.0, 2.0], 2).unwrap();
        assert_eq!(b.boundaries().len(), 1);
        let x = b.boundaries()[0];
        assert!(x > 1.0 && x <= 2.0);
        assert_eq!(b.bucket(1.0), 0);
        assert_eq!(b.bucket(2.0), 1);
    }

    #[test]
    fn ties_go_low() {
        let b = Bucketizer::from_boundaries(vec![1.0, 2.0]).unwrap();
        assert_eq!(b.bucket(1.0), 0);
        assert_eq!(b.bucket(1.5), 1);
        assert_eq!(b.bucket(2.0), 1);
        assert_eq!(b.bucket(2.1), 2);
    }

    #[test]
    fn bad_inputs() {
        assert!(Bucketizer::fit(&[1.0], 1).is_err());
        assert!(Bucketizer::fit(&[], 3).is_err());
        assert!(Bucketizer::fit(&[f64::NAN], 3).is_err());
        assert!(Bucketizer::from_boundaries(vec![2.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn bucket_is_monotone(values in proptest::collection::vec(-1e3f64..1e3, 1..200), n in 2usize..20,
                              a in -2e3f64..2e3, b in -2e3f64..2e3) {
            let bk = Bucketizer::fit(&values, n).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bk.bucket(lo) <= bk.bucket(hi));
            prop_assert!(bk.num_buckets() <= n);
        }
    }
}
