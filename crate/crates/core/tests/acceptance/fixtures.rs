use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubs::raster::Camera;
use ubs::sceneio::{Primitive, Scene, View};
use ubs::slicer::Query;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_primitive(rng: &mut ChaCha8Rng, c: usize) -> Primitive {
    let mut p = Primitive::unit(c);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    p.mu_x = [u(-0.6, 0.6), u(-0.6, 0.6), u(-0.6, 0.6)];
    for v in p.mu_q.iter_mut() {
        *v = u(-0.5, 0.5);
    }
    p.cov.rot = [u(-0.4, 0.4), u(-0.4, 0.4), u(-0.4, 0.4)];
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

pub fn random_scene(rng: &mut ChaCha8Rng, n_dims: usize, count: usize) -> Scene {
    let mut s = Scene::new(n_dims, [0.1, 0.2, 0.3]).unwrap();
    for _ in 0..count {
        s.primitives.push(random_primitive(rng, n_dims - 3));
    }
    s
}

/// Camera on a circle of radius 3 around the origin.
pub fn orbit_camera(angle: f64, height: f64, width: usize, rows: usize) -> Camera {
    Camera::look_at([3.0 * angle.sin(), height, -3.0 * angle.cos()], [0.0; 3], [0.0, 1.0, 0.0], 0.9, width, rows).unwrap()
}

pub fn camera_query(cam: &Camera, n_dims: usize, time: f64) -> Query {
    Query::for_dims(n_dims, Some(time), Some(cam.view_direction())).unwrap()
}

/// Views of `target_scene` from `n` cameras, used as fitting targets for another scene.
pub fn views_of(target_scene: &Scene, n: usize, width: usize, rows: usize) -> Vec<View> {
    (0..n)
        .map(|k| {
            let cam = orbit_camera(0.45 * k as f64, -0.3, width, rows);
            let query = camera_query(&cam, target_scene.n_dims, 0.3 + 0.2 * k as f64);
            let target = ubs::render(target_scene, &cam, &query).unwrap();
            View { camera: cam, query, target }
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
