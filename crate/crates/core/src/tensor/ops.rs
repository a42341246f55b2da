//! Scalar helpers shared by the tape and the evaluation paths.

use super::tape::PROB_EPS;

/// Logistic function, stable for any finite input.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))` without overflow.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -(f64::max(-z, 0.0) + libm::log1p(libm::exp(-libm::fabs(z))))
}

/// Binary cross-entropy with separate positive/negative sample weights.
///
/// `p` is clamped to `[1e-7, 1 - 1e-7]` first, so the result is always finite.
pub fn weighted_bce(y: f64, p: f64, w_pos: f64, w_neg: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let w = if y >= 0.5 { w_pos } else { w_neg };
    -w * (y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}
