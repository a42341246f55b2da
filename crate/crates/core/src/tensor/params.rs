use alloc::string::String;
use alloc::vec::Vec;

use super::Matrix;

/// Handle of a learnable tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for m in &mut self.values {
            for x in m.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// One gradient slot per parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { slots: store.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect() }
    }

    /// Zeroes all slots, resizing any whose parameter changed shape.
    pub fn reset(&mut self, store: &ParamStore) {
        self.slots.resize_with(store.len(), || Matrix::zeros(0, 0));
        for (slot, value) in self.slots.iter_mut().zip(&store.values) {
            if slot.shape() == value.shape() {
                slot.fill(0.0);
            } else {
                *slot = Matrix::zeros(value.rows(), value.cols());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.slots[id.0]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(Matrix::is_finite)
    }
}
