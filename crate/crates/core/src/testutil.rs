use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sceneio::Primitive;

pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// A well-conditioned random primitive with `c` query dimensions.
pub(crate) fn random_primitive(rng: &mut ChaCha8Rng, c: usize) -> Primitive {
    let mut p = Primitive::unit(c);
    let mut u = |lo, hi| uniform(rng, lo, hi);
    p.mu_x = [u(-0.5, 0.5), u(-0.5, 0.5), u(-0.5, 0.5)];
    for v in p.mu_q.iter_mut() {
        *v = u(-0.5, 0.5);
    }
    p.cov.rot = [u(-0.3, 0.3), u(-0.3, 0.3), u(-0.3, 0.3)];
    p.cov.log_scale_x = [u(-2.5, -1.0), u(-2.5, -1.0), u(-2.5, -1.0)];
    for v in p.cov.l_qx.iter_mut() {
        *v = u(-0.2, 0.2);
    }
    for v in p.cov.l_qq.iter_mut() {
        *v = u(-0.3, 0.3);
    }
    for v in p.cov.log_scale_q.iter_mut() {
        *v = u(-0.5, 0.5);
    }
    p.shape.b_x = u(-1.0, 1.0);
    for v in p.shape.b_q.iter_mut() {
        *v = u(-1.0, 1.0);
    }
    p.opacity_raw = u(-1.0, 2.0);
    p.color = [u(0.0, 1.0), u(0.0, 1.0), u(0.0, 1.0)];
    p
}

pub(crate) fn test_camera(width: usize, height: usize) -> crate::raster::Camera {
    crate::raster::Camera::look_at([0.3, -0.2, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.9, width, height).unwrap()
}

pub(crate) fn random_scene(rng: &mut ChaCha8Rng, n_dims: usize, count: usize) -> crate::sceneio::Scene {
    let mut s = crate::sceneio::Scene::new(n_dims, [0.1, 0.2, 0.3]).unwrap();
    for _ in 0..count {
        s.primitives.push(random_primitive(rng, n_dims - 3));
    }
    s
}

/// A query valid for `n_dims` derived from the camera axis.
pub(crate) fn camera_query(cam: &crate::raster::Camera, n_dims: usize, time: f64) -> crate::slicer::Query {
    crate::slicer::Query::for_dims(n_dims, Some(time), Some(cam.view_direction())).unwrap()
}
