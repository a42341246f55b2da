//! Samples, numeric bucketization, time-ordered splits and a synthetic
//! click → order funnel generator.

mod bucketize;
mod funnel;
mod split;

use alloc::string::String;
use alloc::vec::Vec;

use crate::embedding::{FieldValue, Schema};

pub use bucketize::Bucketizer;
pub use funnel::{funnel_schema, generate_funnel, FunnelConfig};
pub use split::{split_by_time, SplitSpec};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Day index of a Unix-seconds timestamp.
pub fn day_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECONDS_PER_DAY)
}

/// Position of a sample inside a ranked list (one query or request).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListMembership {
    pub list_id: u64,
    pub item_id: u64,
    /// Order count of the item within the list.
    pub weight: f64,
}

/// One (user, query, item) interaction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    /// One value per schema field, in schema order.
    pub features: Vec<FieldValue>,
    /// One value per dataset label column; `NaN` marks a missing label.
    pub labels: Vec<f64>,
    /// Numeric target of regression datasets.
    pub target: Option<f64>,
    pub timestamp: i64,
    pub list: Option<ListMembership>,
}

/// Samples together with their schema and label column names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub schema: Schema,
    pub label_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same schema and labels, different samples.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset { schema: self.schema.clone(), label_names: self.label_names.clone(), samples }
    }

    /// Appends a label column computed from each sample.
    pub fn add_label_column(&mut self, name: impl Into<String>, f: impl Fn(&Sample) -> f64) {
        self.label_names.push(name.into());
        for s in &mut self.samples {
            let v = f(s);
            s.labels.push(v);
        }
    }

    pub fn has_lists(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.list.is_some())
    }
}
