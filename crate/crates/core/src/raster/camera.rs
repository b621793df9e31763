use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UbsError};

/// Tolerance on the orthonormality of the camera rotation block.
pub const ROTATION_TOL: f64 = 1e-6;

/// Pinhole camera. Camera space is x right, y down, z forward; pixel centers
/// sit at half-integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major rigid world-to-camera transform.
    pub world_to_cam: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, world_to_cam: [[f64; 4]; 4]) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height, world_to_cam };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(UbsError::Precondition("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(UbsError::Precondition("image size must be at least 1x1".into()));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).amax();
        if err > ROTATION_TOL || r.determinant() < 0.0 {
            return Err(UbsError::Precondition(format!("camera rotation is not orthonormal (error {err:.2e})")));
        }
        let m = &self.world_to_cam;
        if m[3] != [0.0, 0.0, 0.0, 1.0] || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(UbsError::Precondition("camera transform is not rigid".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly pointing up in
    /// the image and horizontal field of view `fov_x` (radians).
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fov_x: f64, width: usize, height: usize) -> Result<Self> {
        let eye_v = Vector3::from(eye);
        let f = (Vector3::from(target) - eye_v).normalize();
        let x = f.cross(&Vector3::from(up));
        if x.norm() < 1e-9 {
            return Err(UbsError::Precondition("look_at: up is parallel to the view direction".into()));
        }
        let x = x.normalize();
        let y = f.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
        let t = -(r * eye_v);
        let focal = width as f64 / (2.0 * (0.5 * fov_x).tan());
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height, rigid(&r, &t))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.world_to_cam[i][j])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.world_to_cam[0][3], self.world_to_cam[1][3], self.world_to_cam[2][3])
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.world_to_cam[i][j])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let c = -(self.rotation().transpose() * self.translation());
        [c[0], c[1], c[2]]
    }

    /// World-space optical axis (unit), used as the frame's view-direction query.
    pub fn view_direction(&self) -> [f64; 3] {
        let r = self.rotation();
        let d = Vector3::new(r[(2, 0)], r[(2, 1)], r[(2, 2)]).normalize();
        [d[0], d[1], d[2]]
    }
}

/// Pack a rotation and translation into a row-major 4x4 array.
pub fn rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}
