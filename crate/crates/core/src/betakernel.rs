//! Scalar Beta-kernel mathematics.
//!
//! The Beta profile `(1 - x)^beta` on `x in [0, 1)` replaces the Gaussian
//! falloff. Shape parameters `b` are unconstrained scalars mapped to positive
//! exponents: the spatial exponent is `4 exp(b_x)` (so `b_x = 0` gives the
//! Gaussian-like exponent 4) and each query exponent is `exp(b_q)`.

use crate::error::{Result, UbsError};

/// Lower end of the practical shape range; shapes are clamped after each step.
pub const SHAPE_MIN: f64 = -5.0;
/// Upper end of the practical shape range.
pub const SHAPE_MAX: f64 = 5.0;

/// Shared spatial and per-dimension query shape parameters of one primitive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub b_x: f64,
    pub b_q: Vec<f64>,
}

impl ShapeParams {
    /// The Gaussian-limit shape (all zeros) for `query_dims` non-spatial dimensions.
    pub fn gaussian_limit(query_dims: usize) -> Self {
        Self { b_x: 0.0, b_q: vec![0.0; query_dims] }
    }

    pub fn beta_x(&self) -> f64 {
        spatial_exponent(self.b_x)
    }

    pub fn beta_q(&self) -> Vec<f64> {
        self.b_q.iter().map(|&b| query_exponent(b)).collect()
    }

    /// Clamp every shape parameter into `[SHAPE_MIN, SHAPE_MAX]`.
    pub fn clamp(&mut self) {
        self.b_x = clamp_shape(self.b_x);
        for b in &mut self.b_q {
            *b = clamp_shape(*b);
        }
    }
}

pub fn clamp_shape(b: f64) -> f64 {
    b.clamp(SHAPE_MIN, SHAPE_MAX)
}

/// `4 exp(b_x)`, the exponent shared by the three spatial dimensions.
pub fn spatial_exponent(b_x: f64) -> f64 {
    4.0 * b_x.exp()
}

/// `exp(b_q)`, the exponent of one non-spatial dimension.
pub fn query_exponent(b_q: f64) -> f64 {
    b_q.exp()
}

/// `(1 - x)^beta`, evaluated as `exp(beta * ln(1 - x))`.
///
/// Callers inside the pipeline guarantee `0 <= x < 1`; no checks happen here.
#[inline]
pub(crate) fn beta_power(x: f64, beta: f64) -> f64 {
    (beta * (-x).ln_1p()).exp()
}

/// The 1D Beta kernel `(1 - x)^beta` for `x in [0, 1)` and `beta > 0`.
pub fn beta1d(x: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return Err(UbsError::Precondition(format!("beta1d: x = {x} outside [0, 1)")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(UbsError::Precondition(format!("beta1d: beta = {beta} must be positive")));
    }
    Ok(beta_power(x, beta))
}

/// Largest deviation between `(1 - d)^beta` and `exp(-(beta + 0.5) d^2)` on a
/// uniform grid of `grid_size` points spanning `d in [0, 0.999]`.
///
/// At `beta = 4` the comparison kernel is `exp(-4.5 d^2)`. This is a regression
/// statistic describing how far a shape sits from the Gaussian limit.
pub fn gaussian_limit_gap(beta: f64, grid_size: usize) -> f64 {
    let n = grid_size.max(2);
    (0..n)
        .map(|k| {
            let d = 0.999 * k as f64 / (n - 1) as f64;
            (beta_power(d, beta) - (-(beta + 0.5) * d * d).exp()).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn exponent_examples() {
        assert_eq!(spatial_exponent(0.0), 4.0);
        assert_relative_eq!(spatial_exponent(2f64.ln()), 8.0, epsilon = 1e-14);
        assert_relative_eq!(spatial_exponent(-5.0), 0.026951787996341, epsilon = 1e-12);
        assert_eq!(query_exponent(0.0), 1.0);
        assert_relative_eq!(query_exponent(1.0), std::f64::consts::E, epsilon = 1e-15);
        assert_relative_eq!(query_exponent(-5.0), 0.006737946999085467, epsilon = 1e-15);
    }

    #[test]
    fn beta1d_examples() {
        assert_eq!(beta1d(0.0, 3.3).unwrap(), 1.0);
        assert_relative_eq!(beta1d(0.5, 4.0).unwrap(), 0.0625, epsilon = 1e-15);
        assert!(beta1d(1.0, 4.0).is_err());
        assert!(beta1d(-0.1, 4.0).is_err());
        assert!(beta1d(0.2, 0.0).is_err());
    }

    // Golden values from a dense numpy brute force over the same grid.
    #[test]
    fn gaussian_gap_golden() {
        assert_eq!(gaussian_limit_gap(4.0, 2), (beta_power(0.999, 4.0) - (-4.5f64 * 0.999 * 0.999).exp()).abs());
        assert_relative_eq!(gaussian_limit_gap(4.0, 4096), GAP_BETA4, max_relative = 1e-9);
        assert_relative_eq!(gaussian_limit_gap(spatial_exponent(5.0), 4096), GAP_B5, max_relative = 1e-9);
    }

    const GAP_BETA4: f64 = 0.4384394257161103;
    const GAP_B5: f64 = 0.9559250197769901;

    #[test]
    fn clamp_range() {
        let mut s = ShapeParams { b_x: 5.2, b_q: vec![-7.0, 0.3] };
        s.clamp();
        assert_eq!(s, ShapeParams { b_x: 5.0, b_q: vec![-5.0, 0.3] });
    }

    proptest! {
        #[test]
        fn exponents_positive_and_increasing(a in -5.0f64..5.0, d in 1e-6f64..1.0) {
            prop_assert!(spatial_exponent(a) > 0.0);
            prop_assert!(query_exponent(a) > 0.0);
            prop_assert!(spatial_exponent(a + d) > spatial_exponent(a));
        }

        #[test]
        fn beta1d_monotone(x in 0.0f64..0.99, dx in 0.0f64..0.009, beta in 0.01f64..600.0, dbeta in 0.0f64..10.0) {
            let v = beta1d(x, beta).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(beta1d(x + dx, beta).unwrap() <= v);
            prop_assert!(beta1d(x, beta + dbeta).unwrap() <= v);
        }

        #[test]
        fn beta1d_product_factorization(x in 0.0f64..0.999, b1 in 0.01f64..50.0, b2 in 0.01f64..50.0) {
            let joint = beta1d(x, b1 + b2).unwrap();
            let prod = beta1d(x, b1).unwrap() * beta1d(x, b2).unwrap();
            prop_assume!(joint > 1e-250);
            prop_assert!((joint - prod).abs() <= 1e-12 * joint);
        }
    }
}
