use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{query_dims_for, Primitive, Scene};
use crate::error::{Result, UbsError};

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Self { min: [-half; 3], max: [half; 3] }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Normalize the random direction means onto the unit sphere.
    pub normalize_dirs: bool,
}

/// Random scene in the Gaussian limit: means uniform in `bounds`, isotropic
/// spatial scale `volume^(1/3) / count^(1/3)`, unit query scales, no
/// coupling, opacity 0.5, uniform colors. Non-spatial means are uniform in
/// `[0, 1]` per component.
pub fn init_scene(n_dims: usize, count: usize, seed: u64, bounds: Bounds, cfg: InitConfig) -> Result<Scene> {
    let c = query_dims_for(n_dims)?;
    if count == 0 {
        return Err(UbsError::Precondition("init_scene needs count >= 1".into()));
    }
    if (0..3).any(|i| !(bounds.max[i] > bounds.min[i])) {
        return Err(UbsError::Precondition("init bounds must have positive extent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (bounds.volume() / count as f64).cbrt();
    let mut scene = Scene::new(n_dims, [0.0; 3])?;
    for _ in 0..count {
        let mut p = Primitive::unit(c);
        for i in 0..3 {
            p.mu_x[i] = rng.random_range(bounds.min[i]..bounds.max[i]);
        }
        for v in p.mu_q.iter_mut() {
            *v = rng.random::<f64>();
        }
        if cfg.normalize_dirs && c >= 3 {
            let dir = &mut p.mu_q[c - 3..];
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                dir.iter_mut().for_each(|v| *v /= n);
            }
        }
        p.cov.log_scale_x = [scale.ln(); 3];
        p.color = [rng.random(), rng.random(), rng.random()];
        scene.primitives.push(p);
    }
    Ok(scene)
}
