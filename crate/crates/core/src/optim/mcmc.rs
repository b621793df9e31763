//! Opacity-preserving relocation of dead primitives and exploration noise.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use nalgebra::Vector3;

use super::adam::Adam;
use crate::sceneio::Scene;

/// Relocation and noise settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Primitives with activated opacity below this are relocated.
    pub dead_opacity: f64,
    pub target_primitive_count: usize,
    /// Maximum relative growth per relocation while under the target.
    pub growth_rate: f64,
    pub lambda_eps: f64,
    /// Sharpness of the low-opacity noise gate.
    pub noise_gate_sharpness: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { dead_opacity: 0.005, target_primitive_count: 0, growth_rate: 0.05, lambda_eps: 1.0, noise_gate_sharpness: 100.0 }
    }
}

/// Opacity of each of `n` coincident copies so that together they composite
/// to opacity `o`: `1 - (1 - o)^(1/n)`.
pub fn clone_opacity(o: f64, n: usize) -> f64 {
    assert!(n >= 1, "clone_opacity needs at least one clone");
    -((-o).ln_1p() / n as f64).exp_m1()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationStats {
    pub relocated: usize,
    pub added: usize,
}

/// Copy each sampled donor onto its recipients and split its opacity over
/// donor and recipients. `recipients[k]` receives donor `donors[k]`.
fn clone_onto(scene: &mut Scene, adam: &mut Adam, donors: &[usize], recipients: &[usize]) {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (&d, &r) in donors.iter().zip(recipients) {
        groups.entry(d).or_default().push(r);
    }
    for (d, rs) in groups {
        let o = clone_opacity(scene.primitives[d].opacity(), rs.len() + 1);
        let mut src = scene.primitives[d].clone();
        src.set_opacity(o);
        for &r in &rs {
            scene.primitives[r] = src.clone();
            adam.reset(r);
        }
        scene.primitives[d] = src;
        adam.reset(d);
    }
}

/// Teleport dead primitives onto opacity-weighted donors, then grow toward
/// `target_primitive_count` by the same mechanism.
pub fn relocate(scene: &mut Scene, adam: &mut Adam, rng: &mut ChaCha8Rng, cfg: &McmcConfig) -> RelocationStats {
    adam.resize(scene);
    let mut stats = RelocationStats::default();
    let opacities: Vec<f64> = scene.primitives.iter().map(|p| p.opacity()).collect();
    let dead: Vec<usize> = (0..scene.len()).filter(|&i| opacities[i] < cfg.dead_opacity).collect();
    let weights: Vec<f64> = opacities.iter().map(|&o| if o >= cfg.dead_opacity { o } else { 0.0 }).collect();
    let Ok(sampler) = WeightedIndex::new(&weights) else {
        if !scene.is_empty() {
            log::warn!("relocation skipped: no primitive with opacity >= {}", cfg.dead_opacity);
        }
        return stats;
    };
    if !dead.is_empty() {
        let donors: Vec<usize> = dead.iter().map(|_| sampler.sample(rng)).collect();
        clone_onto(scene, adam, &donors, &dead);
        stats.relocated = dead.len();
    }

    let n = scene.len();
    if n < cfg.target_primitive_count {
        let add = (cfg.target_primitive_count - n).min(((n as f64 * cfg.growth_rate).ceil() as usize).max(1));
        let weights: Vec<f64> = scene.primitives.iter().map(|p| p.opacity()).collect();
        if let Ok(sampler) = WeightedIndex::new(&weights) {
            let donors: Vec<usize> = (0..add).map(|_| sampler.sample(rng)).collect();
            let recipients: Vec<usize> = (n..n + add).collect();
            for &d in &donors {
                let p = scene.primitives[d].clone();
                scene.primitives.push(p);
            }
            adam.resize(scene);
            clone_onto(scene, adam, &donors, &recipients);
            stats.added = add;
        }
    }
    stats
}

/// Low-opacity gate of the exploration noise.
pub fn noise_gate(o: f64, sharpness: f64, dead_opacity: f64) -> f64 {
    let z = sharpness * (o - dead_opacity);
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Add covariance-shaped noise `lambda_eps * lr_position * g(o) * L_x xi` to
/// every spatial mean.
pub fn noise_inject(scene: &mut Scene, rng: &mut ChaCha8Rng, cfg: &McmcConfig, lr_position: f64) {
    if cfg.lambda_eps == 0.0 {
        return;
    }
    for p in scene.primitives.iter_mut() {
        let xi = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let k = cfg.lambda_eps * lr_position * noise_gate(p.opacity(), cfg.noise_gate_sharpness, cfg.dead_opacity);
        let d = p.cov.spatial_factor() * xi * k;
        for i in 0..3 {
            p.mu_x[i] += d[i];
        }
    }
}
