//! Photometric loss with opacity and scale regularizers.

use serde::{Deserialize, Serialize};

use super::ssim::{ssim, ssim_with_grad};
use crate::image::ImageBuffer;
use crate::sceneio::Scene;

/// How the per-primitive regularizers are reduced over the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegReduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_ssim: f64,
    pub lambda_opacity: f64,
    pub lambda_scale: f64,
    pub reg_reduction: RegReduction,
    /// Overall multiplier applied to the total.
    pub scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_ssim: 0.2, lambda_opacity: 0.01, lambda_scale: 0.01, reg_reduction: RegReduction::Mean, scale: 1.0 }
    }
}

impl LossConfig {
    /// Pure photometric loss, no regularizers.
    pub fn photometric(lambda_ssim: f64) -> Self {
        Self { lambda_ssim, lambda_opacity: 0.0, lambda_scale: 0.0, ..Self::default() }
    }

    fn reg_weight(&self, count: usize) -> f64 {
        match self.reg_reduction {
            RegReduction::Sum => 1.0,
            RegReduction::Mean => 1.0 / count.max(1) as f64,
        }
    }
}

/// Individual loss terms, each already weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l1: f64,
    pub ssim: f64,
    pub opacity: f64,
    pub scale: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.ssim + self.opacity + self.scale
    }
}

/// Mean absolute channel error.
pub fn l1(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert!(a.same_size(b), "l1: image sizes differ");
    let n = (a.data.len() * 3).max(1) as f64;
    a.data.iter().zip(&b.data).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>()).sum::<f64>() / n
}

/// Weighted photometric terms (`l1`, `ssim`) for one render, unscaled.
pub fn image_terms(render: &ImageBuffer, target: &ImageBuffer, lambda_ssim: f64) -> (f64, f64) {
    let l = (1.0 - lambda_ssim) * l1(render, target);
    let s = if lambda_ssim > 0.0 { lambda_ssim * (1.0 - ssim(render, target)) } else { 0.0 };
    (l, s)
}

/// Photometric terms and their gradient with respect to `render`, all multiplied by `weight`.
pub fn image_terms_with_grad(render: &ImageBuffer, target: &ImageBuffer, lambda_ssim: f64, weight: f64) -> ((f64, f64), ImageBuffer) {
    assert!(render.same_size(target), "loss: image sizes differ");
    let n = (render.data.len() * 3).max(1) as f64;
    let k = weight * (1.0 - lambda_ssim) / n;
    let mut grad = ImageBuffer::new(render.width, render.height);
    let mut l1_sum = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&render.data).zip(&target.data) {
        for c in 0..3 {
            let d = r[c] - t[c];
            l1_sum += d.abs();
            // Subgradient 0 at d = 0.
            g[c] = if d > 0.0 { k } else if d < 0.0 { -k } else { 0.0 };
        }
    }
    let l = weight * (1.0 - lambda_ssim) * l1_sum / n;
    let mut s = 0.0;
    if lambda_ssim > 0.0 {
        let (v, gs) = ssim_with_grad(render, target);
        s = weight * lambda_ssim * (1.0 - v);
        for (g, q) in grad.data.iter_mut().zip(&gs.data) {
            for c in 0..3 {
                g[c] -= weight * lambda_ssim * q[c];
            }
        }
    }
    ((l, s), grad)
}

/// Weighted opacity and scale regularizers, unscaled.
pub fn regularizer_terms(scene: &Scene, cfg: &LossConfig) -> (f64, f64) {
    let w = cfg.reg_weight(scene.len());
    let mut o = 0.0;
    let mut s = 0.0;
    for p in &scene.primitives {
        o += p.opacity();
        s += p.cov.scale_x().iter().sum::<f64>() + p.cov.scale_q().iter().sum::<f64>();
    }
    (cfg.lambda_opacity * w * o, cfg.lambda_scale * w * s)
}

/// Full loss for a set of renders (averaged) and the scene regularizers.
pub fn loss(renders: &[(&ImageBuffer, &ImageBuffer)], scene: &Scene, cfg: &LossConfig) -> LossTerms {
    let mut terms = LossTerms::default();
    let inv = 1.0 / renders.len().max(1) as f64;
    for (r, t) in renders {
        let (l, s) = image_terms(r, t, cfg.lambda_ssim);
        terms.l1 += l * inv;
        terms.ssim += s * inv;
    }
    let (o, s) = regularizer_terms(scene, cfg);
    terms.opacity = o;
    terms.scale = s;
    terms.l1 *= cfg.scale;
    terms.ssim *= cfg.scale;
    terms.opacity *= cfg.scale;
    terms.scale *= cfg.scale;
    terms
}

/// Per-primitive weights of the regularizer gradients: `d/d(opacity)` and `d/d(scale)`.
pub(crate) fn regularizer_weights(scene: &Scene, cfg: &LossConfig) -> (f64, f64) {
    let w = cfg.reg_weight(scene.len()) * cfg.scale;
    (cfg.lambda_opacity * w, cfg.lambda_scale * w)
}
