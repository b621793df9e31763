use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{backward, forward_loss};
use crate::error::{Result, UbsError};
use crate::optim::loss::LossConfig;
use crate::raster::{kernel2d_with, prepare, RenderConfig};
use crate::sceneio::{field_of, Scene, View};
use crate::slicer::branch_mask;

/// What the loss is evaluated on.
#[derive(Debug, Clone)]
pub struct FdSetup<'a> {
    pub views: Vec<&'a View>,
    pub loss: LossConfig,
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FdStatus {
    Pass,
    Fail,
    Excluded { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub primitive: usize,
    pub param: String,
    pub analytic: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    #[serde(flatten)]
    pub status: FdStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub eps: f64,
    pub tol_rel: f64,
    pub loss: f64,
    pub passed: usize,
    pub failed: usize,
    pub excluded: usize,
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    /// Fraction of non-excluded entries that pass (1 when all are excluded).
    pub fn pass_fraction(&self) -> f64 {
        let n = self.passed + self.failed;
        if n == 0 {
            1.0
        } else {
            self.passed as f64 / n as f64
        }
    }
}

/// Discrete state of the forward pass: sort order and culling per view,
/// slice branches per primitive, and per pixel the early-exit position and
/// the support/clamp branch of every splat visited.
fn branch_signature(scene: &Scene, setup: &FdSetup) -> Result<Vec<u64>> {
    let cfg = &setup.render;
    let mut sig = Vec::new();
    for view in &setup.views {
        for p in &scene.primitives {
            sig.push(branch_mask(p, &view.query, cfg.slice).unwrap_or(u64::MAX));
        }
        let prep = prepare(scene, &view.camera, &view.query, cfg)?;
        sig.push(u64::MAX - 1);
        sig.extend(prep.splats.iter().map(|s| s.id as u64));
        for t in 0..prep.grid.len() {
            let (xs, ys) = prep.grid.pixels(t, prep.width, prep.height);
            for y in ys {
                for x in xs.clone() {
                    let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let mut trans = 1.0;
                    let mut code = 0u64;
                    let mut visited = 0u64;
                    for &i in &prep.tiles[t] {
                        let s = &prep.splats[i as usize];
                        visited += 1;
                        let k = kernel2d_with(px, s, cfg.tau2);
                        let raw = s.opacity * k;
                        let branch = if k <= 0.0 { 0 } else if raw >= cfg.alpha_max { 2 } else { 1 };
                        code = code.wrapping_mul(3).wrapping_add(branch);
                        let a = raw.min(cfg.alpha_max);
                        if a <= 0.0 {
                            continue;
                        }
                        trans *= 1.0 - a;
                        if trans < cfg.min_transmittance {
                            break;
                        }
                    }
                    sig.push(visited);
                    sig.push(code);
                }
            }
        }
    }
    Ok(sig)
}

fn perturbed(scene: &Scene, prim: usize, idx: usize, delta: f64) -> Scene {
    let mut s = scene.clone();
    let p = &mut s.primitives[prim];
    let mut flat = p.to_flat();
    flat[idx] += delta;
    p.set_flat(&flat);
    s
}

fn loss_at(scene: &Scene, setup: &FdSetup) -> Result<f64> {
    Ok(forward_loss(scene, &setup.views, &setup.loss, &setup.render)?.total())
}

/// Compare the analytic gradient with central differences for every scalar
/// parameter. A parameter is excluded when its `±eps` perturbations change
/// the discrete branch state of the forward pass, or when the `eps` and
/// `eps / 2` estimates disagree (a non-smooth loss along that axis).
pub fn fd_check(scene: &Scene, setup: &FdSetup, eps: f64, tol_rel: f64) -> Result<FdReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(UbsError::Precondition(format!("fd_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let bw = backward(scene, &setup.views, &setup.loss, &setup.render)?;
    let base_sig = branch_signature(scene, setup)?;
    let c = scene.query_dims();
    let mut entries = Vec::new();
    for (pi, p) in scene.primitives.iter().enumerate() {
        let n = p.to_flat().len();
        for idx in 0..n {
            let (field, k) = field_of(c, idx);
            let analytic = bw.grads[pi].values()[idx];
            let plus = perturbed(scene, pi, idx, eps);
            let minus = perturbed(scene, pi, idx, -eps);
            let fd = (loss_at(&plus, setup)? - loss_at(&minus, setup)?) / (2.0 * eps);
            let half = (loss_at(&perturbed(scene, pi, idx, 0.5 * eps), setup)?
                - loss_at(&perturbed(scene, pi, idx, -0.5 * eps), setup)?)
                / eps;
            let abs_err = (analytic - fd).abs();
            let rel_err = abs_err / fd.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
            let crosses = branch_signature(&plus, setup)? != base_sig || branch_signature(&minus, setup)? != base_sig;
            let unstable = (fd - half).abs() > tol_rel * (1.0 + fd.abs());
            let status = if crosses {
                FdStatus::Excluded { reason: "perturbation crosses a clamp/cull/sort/gate boundary".into() }
            } else if unstable {
                FdStatus::Excluded { reason: format!("non-smooth loss: fd(eps) = {fd:e}, fd(eps/2) = {half:e}") }
            } else if rel_err <= tol_rel || abs_err <= tol_rel * (1.0 + fd.abs()) {
                FdStatus::Pass
            } else {
                FdStatus::Fail
            };
            entries.push(FdEntry {
                primitive: pi,
                param: format!("{}[{k}]", field.name()),
                analytic,
                fd,
                abs_err,
                rel_err,
                status,
            });
        }
    }
    let count = |f: fn(&FdStatus) -> bool| entries.iter().filter(|e| f(&e.status)).count();
    Ok(FdReport {
        eps,
        tol_rel,
        loss: bw.loss,
        passed: count(|s| matches!(s, FdStatus::Pass)),
        failed: count(|s| matches!(s, FdStatus::Fail)),
        excluded: count(|s| matches!(s, FdStatus::Excluded { .. })),
        entries,
    })
}
