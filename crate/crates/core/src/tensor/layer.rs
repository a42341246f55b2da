use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{GradientTape, Matrix, ParamId, ParamStore, Var};
use crate::error::config_err;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Parametric ReLU, one slope per unit, slopes start at zero.
    Prelu,
    Sigmoid,
    Identity,
    /// `min(x, 0)`.
    MinZero,
}

/// Fully connected block: `activation(W·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    /// Present iff `activation == Activation::Prelu`.
    pub prelu_slope: Option<ParamId>,
    pub activation: Activation,
    in_width: usize,
    out_width: usize,
}

impl DenseLayer {
    /// Registers a new layer in `store`. Weights are Glorot-uniform, bias and
    /// PReLU slopes start at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_width == 0 || out_width == 0 {
            return Err(config_err!("layer `{name}` has a zero width ({in_width}->{out_width})"));
        }
        let limit = libm::sqrt(6.0 / (in_width + out_width) as f64);
        let w: Vec<f64> = (0..in_width * out_width).map(|_| rng.random_range(-limit..limit)).collect();
        let weight = store.add(format!("{name}.weight"), Matrix::from_vec(out_width, in_width, w)?);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_width));
        let prelu_slope =
            (activation == Activation::Prelu).then(|| store.add(format!("{name}.slope"), Matrix::zeros(1, out_width)));
        Ok(Self { weight, bias, prelu_slope, activation, in_width, out_width })
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    /// Affine part only: `W·x + b`.
    pub fn pre_activation(&self, tape: &mut GradientTape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.in_width {
            return Err(config_err!("dense layer expects width {}, got {}", self.in_width, tape.value(x).cols()));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }

    pub fn activate(&self, tape: &mut GradientTape, store: &ParamStore, z: Var) -> Result<Var> {
        Ok(match self.activation {
            Activation::Identity => z,
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::MinZero => tape.min_zero(z),
            Activation::Prelu => {
                let slope = self.prelu_slope.ok_or_else(|| config_err!("prelu layer without slope parameters"))?;
                let s = tape.param(store, slope);
                tape.prelu(z, s)?
            }
        })
    }

    /// `activation(W·x + b)`, recorded on `tape`.
    pub fn forward(&self, tape: &mut GradientTape, store: &ParamStore, x: Var) -> Result<Var> {
        let z = self.pre_activation(tape, store, x)?;
        self.activate(tape, store, z)
    }
}

/// Inverted dropout mask: each unit is zeroed with probability `rate`,
/// survivors are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Applies dropout in training mode; identity when `rng` is `None` or `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut GradientTape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(tape.value(x).data().len(), rate, rng);
            tape.dropout(x, mask)
        }
        _ => Ok(x),
    }
}
