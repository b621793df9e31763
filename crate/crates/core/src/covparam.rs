//! Spatial-orthogonal Cholesky covariance construction.
//!
//! For `N = 3 + C` dimensions the covariance factor is
//!
//! ```text
//! L = | R_x diag(s_x)   0   |
//!     | L_qx            L_q |
//! ```
//!
//! where `R_x = I + A` is the first-order Taylor rotation of a skew-symmetric
//! generator `A`, and `L_q` is lower triangular with `s_q` on its diagonal.
//! Its strictly-lower part is a free correlation block (zero at init), which
//! brings the covariance to the full `N(N+1)/2` parameter count.
//! Scales are stored as logarithms and exponentiated on use.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UbsError};

/// Raw covariance parameters of one primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovFactors {
    /// Skew generator entries `(a1, a2, a3)`.
    pub rot: [f64; 3],
    pub log_scale_x: [f64; 3],
    /// `C x 3` cross-correlation block, row-major.
    pub l_qx: Vec<f64>,
    /// Strictly-lower entries of the `C x C` query factor, row-major
    /// (`(1,0), (2,0), (2,1), ...`).
    pub l_qq: Vec<f64>,
    pub log_scale_q: Vec<f64>,
}

/// Index of entry `(i, j)`, `i > j`, in a packed strictly-lower triangle.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

/// Number of covariance parameters for `c` query dimensions.
pub fn covariance_param_count(c: usize) -> usize {
    3 + 3 + 3 * c + c * c.saturating_sub(1) / 2 + c
}

impl CovFactors {
    /// Unit scales, no rotation, no cross-correlation.
    pub fn identity(query_dims: usize) -> Self {
        let c = query_dims;
        Self {
            rot: [0.0; 3],
            log_scale_x: [0.0; 3],
            l_qx: vec![0.0; 3 * c],
            l_qq: vec![0.0; c * c.saturating_sub(1) / 2],
            log_scale_q: vec![0.0; c],
        }
    }

    pub fn query_dims(&self) -> usize {
        self.log_scale_q.len()
    }

    pub fn scale_x(&self) -> [f64; 3] {
        self.log_scale_x.map(f64::exp)
    }

    pub fn scale_q(&self) -> Vec<f64> {
        self.log_scale_q.iter().map(|s| s.exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.query_dims();
        if self.l_qx.len() != 3 * c || self.l_qq.len() != c * c.saturating_sub(1) / 2 {
            return Err(UbsError::Precondition(format!(
                "covariance factor shapes inconsistent with C = {c}"
            )));
        }
        let finite = self.rot.iter().chain(&self.log_scale_x).chain(&self.l_qx).chain(&self.l_qq).chain(&self.log_scale_q).all(|v| v.is_finite());
        if !finite {
            return Err(UbsError::Precondition("non-finite covariance factor".into()));
        }
        let scales_ok = self.scale_x().iter().chain(self.scale_q().iter()).all(|s| *s > 0.0 && s.is_finite());
        if !scales_ok {
            return Err(UbsError::Precondition("non-positive or overflowing scale".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_first_order(&self.rot)
    }

    /// `R_x diag(s_x)`, the spatial block of `L`.
    pub fn spatial_factor(&self) -> Matrix3<f64> {
        let s = self.scale_x();
        let mut m = self.rotation();
        for j in 0..3 {
            for i in 0..3 {
                m[(i, j)] *= s[j];
            }
        }
        m
    }

    /// `L_qx` as a `C x 3` matrix.
    pub fn cross_factor(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.query_dims(), 3, &self.l_qx)
    }

    /// Lower-triangular `C x C` query factor with `s_q` on the diagonal.
    pub fn query_factor(&self) -> DMatrix<f64> {
        let c = self.query_dims();
        let s = self.scale_q();
        DMatrix::from_fn(c, c, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => s[i],
            std::cmp::Ordering::Greater => self.l_qq[tri_index(i, j)],
            std::cmp::Ordering::Less => 0.0,
        })
    }
}

/// Partition of `Sigma = L L^T` into spatial, cross and query blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlocks {
    pub sigma_x: Matrix3<f64>,
    /// `3 x C`.
    pub sigma_xq: DMatrix<f64>,
    /// `C x C`, positive definite.
    pub sigma_q: DMatrix<f64>,
}

impl CovBlocks {
    pub fn query_dims(&self) -> usize {
        self.sigma_q.nrows()
    }
}

/// `I + A` with `A = [[0, -a3, a2], [a3, 0, -a1], [-a2, a1, 0]]`.
///
/// Not orthogonal: its determinant is `1 + |a|^2`.
pub fn rotation_first_order(a: &[f64; 3]) -> Matrix3<f64> {
    let [a1, a2, a3] = *a;
    Matrix3::new(
        1.0, -a3, a2, //
        a3, 1.0, -a1, //
        -a2, a1, 1.0,
    )
}

/// Assemble the full `N x N` block-lower factor `L`.
pub fn build_l(factors: &CovFactors) -> Result<DMatrix<f64>> {
    factors.validate()?;
    let c = factors.query_dims();
    let n = 3 + c;
    let mut l = DMatrix::zeros(n, n);
    l.view_mut((0, 0), (3, 3)).copy_from(&factors.spatial_factor());
    if c > 0 {
        l.view_mut((3, 0), (c, 3)).copy_from(&factors.cross_factor());
        l.view_mut((3, 3), (c, c)).copy_from(&factors.query_factor());
    }
    Ok(l)
}

/// Covariance blocks computed from the factor pieces directly:
/// `Sigma_x = L_x L_x^T`, `Sigma_xq = L_x L_qx^T`, `Sigma_q = L_qx L_qx^T + L_q L_q^T`.
pub fn covariance_blocks(factors: &CovFactors) -> Result<CovBlocks> {
    factors.validate()?;
    let lx = factors.spatial_factor();
    let lqx = factors.cross_factor();
    let lq = factors.query_factor();
    let lx_dyn = DMatrix::from_column_slice(3, 3, lx.as_slice());
    Ok(CovBlocks {
        sigma_x: lx * lx.transpose(),
        sigma_xq: &lx_dyn * lqx.transpose(),
        sigma_q: &lqx * lqx.transpose() + &lq * lq.transpose(),
    })
}
