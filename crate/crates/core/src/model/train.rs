use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{MultiTaskModel, Phase};
use crate::data::{Dataset, Sample};
use crate::error::config_err;
use crate::tensor::{AdamConfig, AdamState, Gradients};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives shuffling and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, batch_size: 512, adam: AdamConfig::default(), seed: 0 }
    }
}

/// Mean per-sample loss of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub task_losses: Vec<f64>,
}

impl MultiTaskModel {
    /// Adam over shuffled minibatches; the last partial batch is kept.
    /// Parameters are rounded to f32 afterwards so a saved checkpoint
    /// reproduces the in-memory model exactly.
    pub fn train(&mut self, data: &Dataset, config: &TrainConfig) -> Result<Vec<LossRecord>> {
        if config.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        self.check_dataset(data)?;
        let columns = self.label_columns(&data.label_names)?;
        let mut trace = Vec::new();
        if config.epochs == 0 || data.is_empty() {
            self.store_mut().round_to_f32();
            return Ok(trace);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut adam = AdamState::new(config.adam, self.store());
        let mut grads = Gradients::zeros_like(self.store());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut global_batch = 0;
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
                let mut graph = self.forward(&batch, Phase::Train(&mut rng))?;
                let loss = self.joint_loss(&mut graph, &batch, &columns)?;
                let total = graph.tape.value(loss.total).item().unwrap_or(f64::NAN);
                if !total.is_finite() {
                    let task = self
                        .config()
                        .tasks
                        .iter()
                        .zip(&loss.per_task)
                        .find(|(_, l)| !l.is_finite())
                        .map(|(t, _)| t.name.clone())
                        .unwrap_or_else(|| String::from("regularizer"));
                    return Err(Error::NonFiniteLoss { batch: global_batch, task });
                }
                grads.reset(self.store());
                graph.tape.backward(loss.total, &mut grads)?;
                drop(graph);
                adam.apply(self.store_mut(), &grads);
                let n = batch.len() as f64;
                trace.push(LossRecord {
                    epoch,
                    batch: b,
                    loss: total / n,
                    task_losses: loss.per_task.iter().map(|l| l / n).collect(),
                });
                global_batch += 1;
            }
        }
        self.store_mut().round_to_f32();
        Ok(trace)
    }
}
