use alloc::vec::Vec;

use super::{day_of, Sample};
use crate::error::{config_err, data_err};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// The earliest `fraction` of samples (by timestamp) go to train.
    Fraction(f64),
    /// Samples whose day index is below the boundary go to train.
    DayBoundary { first_test_day: i64 },
}

/// Stable sort by timestamp, then a prefix/suffix split. Every train
/// timestamp is ≤ every test timestamp.
pub fn split_by_time(mut samples: Vec<Sample>, spec: SplitSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    samples.sort_by_key(|s| s.timestamp);
    let cut = match spec {
        SplitSpec::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(config_err!("split fraction must be in (0, 1), got {f}"));
            }
            libm::round(samples.len() as f64 * f) as usize
        }
        SplitSpec::DayBoundary { first_test_day } => samples.partition_point(|s| day_of(s.timestamp) < first_test_day),
    };
    if cut == 0 || cut == samples.len() {
        return Err(data_err!("time split leaves an empty side ({cut} of {} samples in train)", samples.len()));
    }
    let test = samples.split_off(cut);
    Ok((samples, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SECONDS_PER_DAY;
    use proptest::prelude::*;

    fn at(ts: i64, tag: f64) -> Sample {
        Sample { timestamp: ts, target: Some(tag), ..Sample::default() }
    }

    #[test]
    fn fraction_prefix() {
        let samples: Vec<Sample> = (0..10).rev().map(|i| at(i, i as f64)).collect();
        let (train, test) = split_by_time(samples, SplitSpec::Fraction(0.8)).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let max_train = train.iter().map(|s| s.timestamp).max().unwrap();
        let min_test = test.iter().map(|s| s.timestamp).min().unwrap();
        assert!(max_train <= min_test);
    }

    #[test]
    fn day_boundary() {
        let samples: Vec<Sample> = (1..=10).map(|d| at(d * SECONDS_PER_DAY + 5, d as f64)).collect();
        let (train, test) = split_by_time(samples, SplitSpec::DayBoundary { first_test_day: 10 }).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].target, Some(10.0));
    }

    #[test]
    fn equal_timestamps_keep_order() {
        let samples: Vec<Sample> = (0..10).map(|i| at(42, i as f64)).collect();
        let (train, test) = split_by_time(samples, SplitSpec::Fraction(0.5)).unwrap();
        assert_eq!(train.iter().map(|s| s.target.unwrap()).collect::<Vec<_>>(), [0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(test[0].target, Some(5.0));
    }

    #[test]
    fn empty_side_is_error() {
        let samples: Vec<Sample> = (0..3).map(|i| at(i, 0.0)).collect();
        assert!(split_by_time(samples.clone(), SplitSpec::DayBoundary { first_test_day: 100 }).is_err());
        assert!(split_by_time(samples.clone(), SplitSpec::Fraction(0.01)).is_err());
        assert!(split_by_time(samples, SplitSpec::Fraction(1.5)).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_input(ts in proptest::collection::vec(0i64..50, 2..60), f in 0.05f64..0.95) {
            let samples: Vec<Sample> = ts.iter().enumerate().map(|(i, &t)| at(t, i as f64)).collect();
            if let Ok((train, test)) = split_by_time(samples.clone(), SplitSpec::Fraction(f)) {
                prop_assert_eq!(train.len() + test.len(), samples.len());
                let mut tags: Vec<i64> = train.iter().chain(&test).map(|s| s.target.unwrap() as i64).collect();
                tags.sort();
                prop_assert_eq!(tags, (0..samples.len() as i64).collect::<Vec<_>>());
                let max_train = train.iter().map(|s| s.timestamp).max().unwrap();
                prop_assert!(test.iter().all(|s| s.timestamp >= max_train));
            }
        }
    }
}
