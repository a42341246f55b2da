use alloc::format;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided p-value of the t statistic with n−2 degrees of freedom;
    /// `None` for two-point series.
    pub p_value: Option<f64>,
}

/// Sample Pearson correlation of paired series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Usage(format!(
            "pearson needs paired series of length ≥ 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pearson correlation of a constant series".into()));
    }
    let r = (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let p_value = (x.len() >= 3).then(|| {
        let df = n - 2.0;
        let rest = 1.0 - r * r;
        if rest <= 0.0 {
            0.0
        } else {
            let t2 = r * r * df / rest;
            regularized_incomplete_beta(df / (df + t2), 0.5 * df, 0.5)
        }
    });
    Ok(Pearson { r, p_value })
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..500 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// I_x(a, b) by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let p = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_relative_eq!(p.r, 0.9819805060619655, epsilon = 1e-12);
        assert_relative_eq!(p.p_value.unwrap(), 0.12103771832367739, max_relative = 1e-9);

        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let y = [2.1, 3.9, 6.2, 7.8, 10.1, 12.2, 13.8, 16.5];
        let p = pearson(&x, &y).unwrap();
        assert_relative_eq!(p.r, 0.9989776683093574, epsilon = 1e-12);
        assert_relative_eq!(p.p_value.unwrap(), 2.6692080418396403e-09, max_relative = 1e-7);

        let x = [0.3, -1.2, 0.8, 2.5, -0.4, 1.1, 0.0, -2.2, 0.9, 1.7];
        let y = [0.1, -0.5, 1.9, 1.2, 0.3, -0.8, 0.6, -1.0, 0.2, 2.0];
        let p = pearson(&x, &y).unwrap();
        assert_relative_eq!(p.r, 0.6574911972430901, epsilon = 1e-12);
        assert_relative_eq!(p.p_value.unwrap(), 0.038821611860626604, max_relative = 1e-9);
    }

    #[test]
    fn self_and_anti_correlation() {
        let x = [0.5, 1.5, -2.0, 3.25, 0.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_relative_eq!(pearson(&x, &x).unwrap().r, 1.0, epsilon = 1e-12);
        assert_relative_eq!(pearson(&x, &neg).unwrap().r, -1.0, epsilon = 1e-12);
        assert_eq!(pearson(&x, &x).unwrap().p_value, Some(0.0));
        assert_eq!(pearson(&[1.0, 2.0], &[3.0, 1.0]).unwrap().p_value, None);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::Usage(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn incomplete_beta_edges() {
        assert_eq!(regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0);
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        assert_relative_eq!(regularized_incomplete_beta(0.3, 1.0, 1.0), 0.3, epsilon = 1e-14);
        assert_relative_eq!(regularized_incomplete_beta(0.6, 3.0, 1.0), 0.216, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn affine_invariance(pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
                             a in 0.1f64..10.0, b in -5.0f64..5.0, c in 0.1f64..10.0, d in -5.0f64..5.0) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(base) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
                let moved = pearson(&x2, &y2).unwrap();
                prop_assert!((base.r - moved.r).abs() < 1e-9);
            }
        }
    }
}
