use alloc::vec::Vec;

use super::{Gradients, Matrix, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of applied steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment buffers follow parameters that grew (new embedding rows get
    /// zero moments) or were added after construction.
    fn sync_shapes(&mut self, store: &ParamStore) {
        for (i, (_, _, p)) in store.iter().enumerate() {
            if i == self.m.len() {
                self.m.push(Matrix::zeros(p.rows(), p.cols()));
                self.v.push(Matrix::zeros(p.rows(), p.cols()));
                continue;
            }
            for buf in [&mut self.m[i], &mut self.v[i]] {
                if buf.shape() != p.shape() {
                    let mut grown = Matrix::zeros(p.rows(), p.cols());
                    let n = buf.data().len().min(grown.data().len());
                    grown.data_mut()[..n].copy_from_slice(&buf.data()[..n]);
                    *buf = grown;
                }
            }
        }
    }

    /// Zeroes both moments of one row, used when an embedding row is recycled.
    pub fn reset_row(&mut self, id: ParamId, row: usize) {
        for buf in [&mut self.m, &mut self.v] {
            if let Some(m) = buf.get_mut(id.index()) {
                if row < m.rows() {
                    m.row_mut(row).fill(0.0);
                }
            }
        }
    }

    /// One update: `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.sync_shapes(store);
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            debug_assert_eq!(g.len(), p.len());
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Matrix::scalar(value));
        s
    }

    fn grad_of(store: &ParamStore, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.get_mut(ParamId(0)).data_mut()[0] = g;
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(1e-3), &store);
        let grads = grad_of(&store, 5.0);
        adam.apply(&mut store, &grads);
        let delta = store.get(ParamId(0)).data()[0] - 1.0;
        assert!((delta + 1e-3).abs() < 1e-11, "delta {delta}");
    }

    #[test]
    fn zero_gradient_is_noop_but_counts() {
        let mut store = single(0.25);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let grads = grad_of(&store, 0.0);
        adam.apply(&mut store, &grads);
        adam.apply(&mut store, &grads);
        assert_eq!(store.get(ParamId(0)).data()[0], 0.25);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn moments_follow_grown_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("emb", Matrix::zeros(1, 2));
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.get_mut(id).push_row(&[1.0, 1.0]);
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).row_mut(1).copy_from_slice(&[1.0, -1.0]);
        adam.apply(&mut store, &grads);
        assert_eq!(store.get(id).row(0), &[0.0, 0.0]);
        assert!(store.get(id).get(1, 0) < 1.0 && store.get(id).get(1, 1) > 1.0);
    }
}
