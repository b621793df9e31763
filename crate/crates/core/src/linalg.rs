//! Small dense helpers shared by the slicer and its adjoint.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use crate::error::{Result, UbsError};

/// Diagonal jitter added when the query block fails to factor.
pub const SPD_JITTER: f64 = 1e-8;

/// Inverse of a small symmetric positive definite matrix through Cholesky,
/// retrying once with `SPD_JITTER` on the diagonal.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.inverse());
    }
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * SPD_JITTER;
    match jittered.cholesky() {
        Some(ch) => {
            log::debug!("query block needed diagonal jitter");
            Ok(ch.inverse())
        }
        None => Err(UbsError::Degenerate("query covariance block is not positive definite".into())),
    }
}

/// Result of clamping the spectrum of a symmetric 3x3 matrix from below.
#[derive(Debug, Clone)]
pub struct FlooredSym {
    pub value: Matrix3<f64>,
    pub triggered: bool,
}

/// Replace every eigenvalue below `floor` by `floor`. The input must already
/// be symmetric. When nothing is clamped the input is returned verbatim.
pub fn eigen_floor(m: &Matrix3<f64>, floor: f64) -> FlooredSym {
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return FlooredSym { value: *m, triggered: false };
    }
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    FlooredSym { value: v * Matrix3::from_diagonal(&lam) * v.transpose(), triggered: true }
}

/// Adjoint of [`eigen_floor`]: returns `(dL/dm, dL/dfloor)` given `dL/dout`.
///
/// Uses the divided-difference (Daleckii-Krein) form of the derivative of a
/// spectral function; clamped eigenvalues carry zero derivative with respect
/// to `m` and unit derivative with respect to `floor`.
pub fn eigen_floor_adjoint(m: &Matrix3<f64>, floor: f64, grad_out: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let g = (grad_out + grad_out.transpose()) * 0.5;
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (g, 0.0);
    }
    let lam = eig.eigenvalues;
    let v = eig.eigenvectors;
    let clamped = [lam[0] < floor, lam[1] < floor, lam[2] < floor];
    let f = lam.map(|l| l.max(floor));
    let gv = v.transpose() * g * v;
    let mut inner = Matrix3::zeros();
    let mut grad_floor = 0.0;
    for i in 0..3 {
        if clamped[i] {
            grad_floor += gv[(i, i)];
        }
        for j in 0..3 {
            let gamma = match (clamped[i], clamped[j]) {
                (false, false) => 1.0,
                (true, true) => 0.0,
                _ => (f[i] - f[j]) / (lam[i] - lam[j]),
            };
            inner[(i, j)] = gamma * gv[(i, j)];
        }
    }
    (v * inner * v.transpose(), grad_floor)
}
