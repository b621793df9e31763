use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{Camera, RenderConfig};
use crate::slicer::{ConditionedSplat, SplatGrad};

/// A conditioned splat in screen space.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source primitive.
    pub id: usize,
    pub mean2: Vector2<f64>,
    pub cov2: Matrix2<f64>,
    /// Inverse of `cov2`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub beta_x: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Bounding box of the support ellipse: `[xmin, ymin, xmax, ymax]` in pixels.
    pub aabb: [f64; 4],
}

/// Gradient with respect to the differentiable fields of a [`Splat2D`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splat2DGrad {
    pub mean2: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub beta_x: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat2DGrad {
    pub fn add(&mut self, o: &Splat2DGrad) {
        self.mean2 += o.mean2;
        self.conic += o.conic;
        self.beta_x += o.beta_x;
        self.opacity += o.opacity;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
    }
}

fn jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p[0], p[1], p[2]);
    Matrix2x3::new(
        cam.fx / z, 0.0, -cam.fx * x / (z * z), //
        0.0, cam.fy / z, -cam.fy * y / (z * z),
    )
}

/// Project with default constants; `None` means culled.
pub fn project(splat: &ConditionedSplat, cam: &Camera) -> Option<Splat2D> {
    project_with(splat, cam, &RenderConfig::default(), 0)
}

/// Perspective projection with the first-order (EWA) covariance transfer
/// `cov2 = J W cov3 W^T J^T`.
pub fn project_with(splat: &ConditionedSplat, cam: &Camera, cfg: &RenderConfig, id: usize) -> Option<Splat2D> {
    let w = cam.rotation();
    let p = w * splat.mean3 + cam.translation();
    let depth = p[2];
    if !(depth > cfg.near) {
        return None;
    }
    let j = jacobian(cam, &p);
    let t = j * w;
    let cov2 = t * splat.cov3 * t.transpose() + Matrix2::identity() * cfg.screen_floor;
    let conic = cov2.try_inverse()?;
    let mean2 = Vector2::new(cam.fx * p[0] / depth + cam.cx, cam.fy * p[1] / depth + cam.cy);
    if !(mean2.iter().chain(cov2.iter()).chain(conic.iter()).all(|v| v.is_finite())) {
        return None;
    }
    let rx = (cfg.tau2 * cov2[(0, 0)]).sqrt();
    let ry = (cfg.tau2 * cov2[(1, 1)]).sqrt();
    let aabb = [mean2[0] - rx, mean2[1] - ry, mean2[0] + rx, mean2[1] + ry];
    let m = cfg.cull_margin;
    if aabb[2] < -m || aabb[3] < -m || aabb[0] > cam.width as f64 + m || aabb[1] > cam.height as f64 + m {
        return None;
    }
    Some(Splat2D {
        id,
        mean2,
        cov2,
        conic,
        depth,
        beta_x: splat.beta_x,
        opacity: splat.gated_opacity,
        color: splat.color,
        aabb,
    })
}

/// Pull a screen-space gradient back to the conditioned 3D splat.
pub(crate) fn project_adjoint(splat: &ConditionedSplat, cam: &Camera, s2: &Splat2D, g: &Splat2DGrad) -> SplatGrad {
    let w = cam.rotation();
    let p = w * splat.mean3 + cam.translation();
    let (x, y, z) = (p[0], p[1], p[2]);
    let j = jacobian(cam, &p);

    // conic = cov2^-1
    let ct = s2.conic.transpose();
    let g_cov2 = -(ct * g.conic * ct);

    // cov2 = J N J^T with N = W cov3 W^T.
    let n = w * splat.cov3 * w.transpose();
    let g_j = g_cov2 * j * n.transpose() + g_cov2.transpose() * j * n;
    let jw = j * w;
    let g_cov3: Matrix3<f64> = jw.transpose() * g_cov2 * jw;

    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_p = Vector3::new(
        g.mean2[0] * fx * iz,
        g.mean2[1] * fy * iz,
        -g.mean2[0] * fx * x * iz2 - g.mean2[1] * fy * y * iz2,
    );
    // J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    g_p[0] += g_j[(0, 2)] * (-fx * iz2);
    g_p[1] += g_j[(1, 2)] * (-fy * iz2);
    g_p[2] += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * y * iz3);

    SplatGrad {
        mean3: w.transpose() * g_p,
        cov3: g_cov3,
        beta_x: g.beta_x,
        gated_opacity: g.opacity,
        color: g.color,
    }
}
