use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{axpy, dot};
use super::ops::{log_sigmoid, sigmoid};
use super::params::{Gradients, ParamId, ParamStore};
use super::Matrix;
use crate::error::config_err;
use crate::{Error, Result};

/// Handle of a value recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability bounds used by the clamped BCE.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, offsets: Vec<usize>, rows: Vec<usize> },
    Linear { x: Var, w: Var, b: Var },
    Prelu { x: Var, slope: Var },
    Sigmoid(Var),
    MinZero(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Dropout { x: Var, mask: Vec<f64> },
    Concat(Vec<Var>),
    RowDot(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    BceLogits { z: Var, targets: Vec<f64>, weights: Vec<f64> },
    BceProb { p: Var, targets: Vec<f64>, weights: Vec<f64> },
    SquaredError { pred: Var, targets: Vec<f64>, weights: Vec<f64> },
    HingeSum(Var),
    Sum(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations and their forward values.
///
/// Every operation appends one node; [`GradientTape::backward`] walks the
/// nodes in exact reverse order and accumulates parameter gradients into a
/// [`Gradients`] buffer, one slot per parameter.
#[derive(Debug, Clone)]
pub struct GradientTape {
    nodes: Vec<Node>,
    kink_margin: f64,
}

impl Default for GradientTape {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err!("{op}: dimension mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), kink_margin: f64::INFINITY }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Smallest distance to a non-differentiable point seen by any kinked op
    /// (PReLU, min-zero, hinge, clamps) during the forward pass.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn note_kinks(&mut self, values: impl Iterator<Item = f64>) {
        for d in values {
            let d = d.abs();
            if d < self.kink_margin {
                self.kink_margin = d;
            }
        }
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// Sum-pools rows of an embedding table: output row `r` is the sum of
    /// `table[rows[offsets[r]..offsets[r + 1]]]`.
    pub fn gather_sum(
        &mut self,
        store: &ParamStore,
        table: ParamId,
        offsets: Vec<usize>,
        rows: Vec<usize>,
    ) -> Result<Var> {
        let t = store.get(table);
        let batch = offsets.len().saturating_sub(1);
        if offsets.last().copied().unwrap_or(0) != rows.len() {
            return Err(config_err!("gather: offsets do not cover the row list"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(config_err!("gather: row {bad} out of range ({} rows)", t.rows()));
        }
        let mut out = Matrix::zeros(batch, t.cols());
        for r in 0..batch {
            let dst = out.row_mut(r);
            for &idx in &rows[offsets[r]..offsets[r + 1]] {
                axpy(1.0, t.row(idx), dst);
            }
        }
        Ok(self.push(out, Op::Gather { table, offsets, rows }, true))
    }

    /// `x · wᵀ + b` with `x` of shape batch×in, `w` out×in and `b` 1×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() {
            return Err(config_err!(
                "linear: input width {} does not match layer input width {}",
                xv.cols(),
                wv.cols()
            ));
        }
        if bv.shape() != (1, wv.rows()) {
            return Err(config_err!("linear: bias shape {:?} for {} outputs", bv.shape(), wv.rows()));
        }
        let mut out = Matrix::zeros(xv.rows(), wv.rows());
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            let yr = out.row_mut(r);
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot(xr, wv.row(o)) + bv.data()[o];
            }
        }
        let rg = self.grad_flag(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Parametric ReLU with one learnable slope per unit (`slope` is 1×width).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(slope));
        if sv.shape() != (1, xv.cols()) {
            return Err(config_err!("prelu: slope shape {:?} for width {}", sv.shape(), xv.cols()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (c, y) in out.row_mut(r).iter_mut().enumerate() {
                if *y <= 0.0 {
                    *y *= sv.data()[c];
                }
            }
        }
        let margin: Vec<f64> = xv.data().to_vec();
        self.note_kinks(margin.into_iter());
        let rg = self.grad_flag(&[x, slope]);
        Ok(self.push(out, Op::Prelu { x, slope }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.grad_flag(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Element-wise `min(x, 0)`.
    pub fn min_zero(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.min(0.0));
        let margin: Vec<f64> = self.value(x).data().to_vec();
        self.note_kinks(margin.into_iter());
        let rg = self.grad_flag(&[x]);
        self.push(out, Op::MinZero(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o -= *y;
        }
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= *y;
        }
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.grad_flag(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Multiplies by a fixed mask (0 for dropped units, `1/(1-r)` for survivors).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.data().len() {
            return Err(config_err!("dropout: mask length {} for {:?}", mask.len(), xv.shape()));
        }
        let mut out = xv.clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= *m;
        }
        let rg = self.grad_flag(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(config_err!("concat of zero inputs"));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(config_err!("concat: inputs have different batch sizes"));
        }
        if parts.len() == 1 {
            return Ok(*first);
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            let dst = out.row_mut(r);
            for p in parts {
                let src = self.nodes[p.0].value.row(r);
                dst[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let rg = self.grad_flag(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Per-row inner product, batch×d · batch×d → batch×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row_dot", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Matrix::column(&out), Op::RowDot(a, b), rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let margin: Vec<f64> = self.value(x).data().iter().map(|&v| (v - lo).abs().min((hi - v).abs())).collect();
        self.note_kinks(margin.into_iter());
        let rg = self.grad_flag(&[x]);
        self.push(out, Op::Clamp { x, lo, hi }, rg)
    }

    fn check_targets(&self, op: &str, v: Var, targets: &[f64], weights: &[f64]) -> Result<()> {
        let m = self.value(v);
        if m.cols() != 1 || m.rows() != targets.len() || weights.len() != targets.len() {
            return Err(config_err!(
                "{op}: prediction {:?} with {} targets and {} weights",
                m.shape(),
                targets.len(),
                weights.len()
            ));
        }
        Ok(())
    }

    /// Summed weighted binary cross-entropy of `sigmoid(z)` against `targets`.
    pub fn bce_with_logits(&mut self, z: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        self.check_targets("bce_with_logits", z, &targets, &weights)?;
        let zv = self.value(z);
        let loss: f64 = zv
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&z, &y), &w)| -w * (y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z)))
            .sum();
        let rg = self.grad_flag(&[z]);
        Ok(self.push(Matrix::scalar(loss), Op::BceLogits { z, targets, weights }, rg))
    }

    /// Summed weighted binary cross-entropy on probabilities clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce_prob(&mut self, p: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        self.check_targets("bce_prob", p, &targets, &weights)?;
        let pv = self.value(p);
        let loss: f64 = pv
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&p, &y), &w)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -w * (y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
            })
            .sum();
        let margin: Vec<f64> =
            pv.data().iter().map(|&v| (v - PROB_EPS).abs().min((1.0 - PROB_EPS - v).abs())).collect();
        self.note_kinks(margin.into_iter());
        let rg = self.grad_flag(&[p]);
        Ok(self.push(Matrix::scalar(loss), Op::BceProb { p, targets, weights }, rg))
    }

    /// Summed weighted squared error.
    pub fn squared_error(&mut self, pred: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        self.check_targets("squared_error", pred, &targets, &weights)?;
        let loss: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&p, &y), &w)| w * (p - y) * (p - y))
            .sum();
        let rg = self.grad_flag(&[pred]);
        Ok(self.push(Matrix::scalar(loss), Op::SquaredError { pred, targets, weights }, rg))
    }

    /// `Σ max(x, 0)` over all entries.
    pub fn hinge_sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v.max(0.0)).sum();
        let margin: Vec<f64> = self.value(x).data().to_vec();
        self.note_kinks(margin.into_iter());
        let rg = self.grad_flag(&[x]);
        self.push(Matrix::scalar(s), Op::HingeSum(x), rg)
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        for p in parts {
            total += self.value(*p).item().ok_or_else(|| Error::Usage(format!("sum: node {} is not a scalar", p.0)))?;
        }
        let rg = self.grad_flag(parts);
        Ok(self.push(Matrix::scalar(total), Op::Sum(parts.to_vec()), rg))
    }

    /// Nodes visited by [`backward`](Self::backward), in visiting order.
    pub fn backward_order(&self, loss: Var) -> impl Iterator<Item = Var> {
        (0..=loss.0).rev().map(Var)
    }

    /// Accumulates `∂loss/∂θ` into `grads` for every parameter touched by the
    /// forward pass. `loss` must be a 1×1 node.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("backward: node {} is not on this tape", loss.0)));
        }
        if self.value(loss).item().is_none() {
            return Err(Error::Usage(format!("backward: loss must be a scalar, got {:?}", self.value(loss).shape())));
        }
        let mut g: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(Matrix::scalar(1.0));

        for v in self.backward_order(loss) {
            let Some(dy) = g[v.0].take() else { continue };
            let node = &self.nodes[v.0];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, dy, &mut g, grads);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, dy: Matrix, g: &mut [Option<Matrix>], grads: &mut Gradients) {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => grads.get_mut(*id).add_assign(&dy),
            Op::Gather { table, offsets, rows } => {
                let slot = grads.get_mut(*table);
                for r in 0..offsets.len() - 1 {
                    let dyr = dy.row(r);
                    for &idx in &rows[offsets[r]..offsets[r + 1]] {
                        axpy(1.0, dyr, slot.row_mut(idx));
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let dxr = dx.row_mut(r);
                        for (o, &d) in dy.row(r).iter().enumerate() {
                            if d != 0.0 {
                                axpy(d, wv.row(o), dxr);
                            }
                        }
                    }
                    accumulate(g, *x, dx);
                }
                let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                let mut db = Matrix::zeros(1, wv.rows());
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    for (o, &d) in dy.row(r).iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, xr, dw.row_mut(o));
                            db.data_mut()[o] += d;
                        }
                    }
                }
                accumulate(g, *w, dw);
                accumulate(g, *b, db);
            }
            Op::Prelu { x, slope } => {
                let (xv, sv) = (self.value(*x), self.value(*slope));
                let mut dx = dy.clone();
                let mut ds = Matrix::zeros(1, xv.cols());
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let dxr = dx.row_mut(r);
                    for c in 0..xr.len() {
                        if xr[c] <= 0.0 {
                            ds.data_mut()[c] += dxr[c] * xr[c];
                            dxr[c] *= sv.data()[c];
                        }
                    }
                }
                accumulate(g, *x, dx);
                accumulate(g, *slope, ds);
            }
            Op::Sigmoid(x) => {
                let mut dx = dy;
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= y * (1.0 - y);
                }
                accumulate(g, *x, dx);
            }
            Op::MinZero(x) => {
                let mut dx = dy;
                for (d, &xi) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xi >= 0.0 {
                        *d = 0.0;
                    }
                }
                accumulate(g, *x, dx);
            }
            Op::Add(a, b) => {
                accumulate(g, *b, dy.clone());
                accumulate(g, *a, dy);
            }
            Op::Sub(a, b) => {
                accumulate(g, *b, dy.map(|d| -d));
                accumulate(g, *a, dy);
            }
            Op::Mul(a, b) => {
                let mut da = dy.clone();
                for (d, &bv) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *d *= bv;
                }
                let mut db = dy;
                for (d, &av) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *d *= av;
                }
                accumulate(g, *a, da);
                accumulate(g, *b, db);
            }
            Op::Scale(x, factor) => accumulate(g, *x, dy.map(|d| d * factor)),
            Op::Dropout { x, mask } => {
                let mut dx = dy;
                for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= *m;
                }
                accumulate(g, *x, dx);
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut dp = Matrix::zeros(dy.rows(), width);
                        for r in 0..dy.rows() {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[at..at + width]);
                        }
                        accumulate(g, *p, dp);
                    }
                    at += width;
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let d = dy.data()[r];
                    axpy(d, bv.row(r), da.row_mut(r));
                    axpy(d, av.row(r), db.row_mut(r));
                }
                accumulate(g, *a, da);
                accumulate(g, *b, db);
            }
            Op::Clamp { x, lo, hi } => {
                let mut dx = dy;
                for (d, &xi) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xi < *lo || xi > *hi {
                        *d = 0.0;
                    }
                }
                accumulate(g, *x, dx);
            }
            Op::BceLogits { z, targets, weights } => {
                let s = dy.data()[0];
                let dz: Vec<f64> = self
                    .value(*z)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&z, &y), &w)| s * w * (sigmoid(z) - y))
                    .collect();
                accumulate(g, *z, Matrix::column(&dz));
            }
            Op::BceProb { p, targets, weights } => {
                let s = dy.data()[0];
                let dp: Vec<f64> = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&p, &y), &w)| {
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                            0.0
                        } else {
                            -s * w * (y / p - (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                accumulate(g, *p, Matrix::column(&dp));
            }
            Op::SquaredError { pred, targets, weights } => {
                let s = dy.data()[0];
                let dp: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&p, &y), &w)| s * 2.0 * w * (p - y))
                    .collect();
                accumulate(g, *pred, Matrix::column(&dp));
            }
            Op::HingeSum(x) => {
                let s = dy.data()[0];
                let dx = self.value(*x).map(|v| if v > 0.0 { s } else { 0.0 });
                accumulate(g, *x, dx);
            }
            Op::Sum(parts) => {
                for p in parts {
                    accumulate(g, *p, dy.clone());
                }
            }
        }
    }
}
