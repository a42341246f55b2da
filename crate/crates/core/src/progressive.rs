//! Bounded regression targets as a chain of "value ≥ threshold" binary tasks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{config_err, data_err};
use crate::{Error, Result};

/// Thresholds v_0 < v_1 < … < v_K. Task k (1..=K) predicts v ≥ v_k.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdLadder {
    values: Vec<f64>,
}

impl ThresholdLadder {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(config_err!("a threshold ladder needs at least two values, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err!("threshold ladder must be finite and strictly increasing: {values:?}"));
        }
        Ok(Self { values })
    }

    /// Star ratings 1..5.
    pub fn movielens() -> Self {
        Self { values: (1..=5).map(f64::from).collect() }
    }

    /// Playtime thresholds 10..90 in steps of 10.
    pub fn kuairand() -> Self {
        Self { values: (1..=9).map(|k| f64::from(k * 10)).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of binary tasks K.
    pub fn tasks(&self) -> usize {
        self.values.len() - 1
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min(), self.max())
    }

    /// Label column names, `ge_<threshold>` for thresholds v_1..v_K.
    pub fn task_names(&self) -> Vec<String> {
        self.values[1..].iter().map(|v| format!("ge_{v}")).collect()
    }
}

/// Label k (k = 1..K) is 1 iff v_k ≤ v, after clamping v into the ladder range.
pub fn encode_labels(v: f64, ladder: &ThresholdLadder) -> Vec<f64> {
    let v = ladder.clamp(v);
    ladder.values[1..].iter().map(|&t| if t <= v { 1.0 } else { 0.0 }).collect()
}

/// E(v) = Σ_{k<K} v_k · max(Q_k − Q_{k+1}, 0) + v_K · Q_K with Q_0 = 1.
pub fn decode_expectation(q: &[f64], ladder: &ThresholdLadder) -> Result<f64> {
    if q.len() != ladder.tasks() {
        return Err(Error::Usage(format!("expected {} probabilities, got {}", ladder.tasks(), q.len())));
    }
    let v = &ladder.values;
    let k_max = q.len();
    let prob = |k: usize| if k == 0 { 1.0 } else { q[k - 1].clamp(0.0, 1.0) };
    let mut e = 0.0;
    for (k, &vk) in v.iter().enumerate().take(k_max) {
        e += vk * (prob(k) - prob(k + 1)).max(0.0);
    }
    Ok(e + v[k_max] * prob(k_max))
}

pub fn regression_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Usage(format!(
            "mse needs equal non-empty inputs, got {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Adds one `ge_<threshold>` label column per task, derived from each
/// sample's numeric target. Returns the new column names.
pub fn attach_ladder_labels(dataset: &mut Dataset, ladder: &ThresholdLadder) -> Result<Vec<String>> {
    if let Some(i) = dataset.samples.iter().position(|s| s.target.is_none()) {
        return Err(data_err!("sample {i} has no regression target"));
    }
    let names = ladder.task_names();
    for (k, name) in names.iter().enumerate() {
        if dataset.label_index(name).is_some() {
            return Err(data_err!("label column {name} already exists"));
        }
        let t = ladder.values[k + 1];
        dataset.add_label_column(
            name.clone(),
            |s| if t <= ladder.clamp(s.target.unwrap_or(f64::NAN)) { 1.0 } else { 0.0 },
        );
    }
    Ok(names)
}
