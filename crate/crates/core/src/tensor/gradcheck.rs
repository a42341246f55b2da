//! Central finite differences against the tape's analytic gradients.

use super::{Gradients, ParamStore};

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradcheckReport {
    /// Scalar parameters compared.
    pub checked: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over entries with magnitude ≥ `NEAR_ZERO`.
    pub worst_relative: f64,
    /// Largest `|a − n|` over entries with magnitude below `NEAR_ZERO`.
    pub worst_absolute: f64,
    /// Entries that exceeded their tolerance.
    pub failures: usize,
}

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;
/// Gradient magnitude below which the absolute tolerance applies.
pub const NEAR_ZERO: f64 = 1e-4;

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradcheckReport) {
        self.checked += other.checked;
        self.worst_relative = self.worst_relative.max(other.worst_relative);
        self.worst_absolute = self.worst_absolute.max(other.worst_absolute);
        self.failures += other.failures;
    }

    /// Records one analytic/numeric pair.
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = libm::fabs(analytic - numeric);
        let scale = libm::fabs(analytic).max(libm::fabs(numeric));
        if scale < NEAR_ZERO {
            self.worst_absolute = self.worst_absolute.max(diff);
            if diff.is_nan() || diff >= ABS_TOL {
                self.failures += 1;
            }
        } else {
            let rel = diff / scale;
            self.worst_relative = self.worst_relative.max(rel);
            if rel.is_nan() || rel >= REL_TOL {
                self.failures += 1;
            }
        }
    }
}

/// Perturbs every scalar of `store` by `±STEP`, evaluates `loss` and compares
/// the central difference with `analytic`. The store is restored afterwards.
pub fn finite_difference_check<F>(store: &mut ParamStore, analytic: &Gradients, mut loss: F) -> GradcheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradcheckReport::default();
    for id in store.ids().collect::<alloc::vec::Vec<_>>() {
        for i in 0..store.get(id).data().len() {
            let original = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = original + STEP;
            let plus = loss(store);
            store.get_mut(id).data_mut()[i] = original - STEP;
            let minus = loss(store);
            store.get_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            report.record(analytic.get(id).data()[i], numeric);
        }
    }
    report
}
