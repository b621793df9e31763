//! Reverse-mode gradients of the render-to-loss pipeline and a
//! finite-difference verifier.

mod fdcheck;

pub use fdcheck::{fd_check, FdEntry, FdReport, FdSetup, FdStatus};

use rayon::prelude::*;

use crate::error::{Result, UbsError};
use crate::image::ImageBuffer;
use crate::optim::loss::{image_terms_with_grad, regularizer_terms, regularizer_weights, LossConfig, LossTerms};
use crate::raster::{backward_prepared, prepare, project_adjoint, trace_prepared, RenderConfig};
use crate::sceneio::{param_len, ParamField, Primitive, Scene, View};
use crate::slicer::slice_adjoint;

/// Gradient of a scalar with respect to every parameter of one primitive,
/// laid out like [`Primitive::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct TapeGradient {
    query_dims: usize,
    values: Vec<f64>,
}

impl TapeGradient {
    pub fn zeros(query_dims: usize) -> Self {
        Self { query_dims, values: vec![0.0; param_len(query_dims)] }
    }

    pub fn for_primitive(p: &Primitive) -> Self {
        Self::zeros(p.query_dims())
    }

    pub fn query_dims(&self) -> usize {
        self.query_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn field(&self, f: ParamField) -> &[f64] {
        &self.values[f.range(self.query_dims)]
    }

    pub fn field_mut(&mut self, f: ParamField) -> &mut [f64] {
        let r = f.range(self.query_dims);
        &mut self.values[r]
    }

    pub fn add(&mut self, other: &TapeGradient) {
        debug_assert_eq!(self.query_dims, other.query_dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Error naming the first non-finite slot.
    pub fn check_finite(&self, primitive: usize) -> Result<()> {
        for f in ParamField::ALL {
            for (k, v) in self.field(f).iter().enumerate() {
                if !v.is_finite() {
                    return Err(UbsError::NonFiniteGradient { primitive, param: format!("{}[{k}]", f.name()) });
                }
            }
        }
        Ok(())
    }
}

/// Result of a forward + backward pass over a batch of views.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub terms: LossTerms,
    pub grads: Vec<TapeGradient>,
    pub renders: Vec<ImageBuffer>,
}

/// Loss over `views` (photometric terms averaged over views) plus the scene
/// regularizers, and its exact gradient with respect to every primitive
/// parameter. Culling, clamping and the PSD floor contribute zero gradient.
pub fn backward(scene: &Scene, views: &[&View], loss_cfg: &LossConfig, render_cfg: &RenderConfig) -> Result<Backward> {
    if views.is_empty() {
        return Err(UbsError::Precondition("backward needs at least one view".into()));
    }
    let mut grads: Vec<TapeGradient> = scene.primitives.iter().map(TapeGradient::for_primitive).collect();
    let mut terms = LossTerms::default();
    let mut renders = Vec::with_capacity(views.len());
    let weight = loss_cfg.scale / views.len() as f64;

    for view in views {
        if view.target.width != view.camera.width || view.target.height != view.camera.height {
            return Err(UbsError::Precondition("target image size differs from camera".into()));
        }
        let prep = prepare(scene, &view.camera, &view.query, render_cfg)?;
        let traces = trace_prepared(&prep, render_cfg);
        let mut img = ImageBuffer::new(prep.width, prep.height);
        for (px, tr) in img.data.iter_mut().zip(&traces) {
            *px = tr.color;
        }
        let ((l, s), g_img) = image_terms_with_grad(&img, &view.target, loss_cfg.lambda_ssim, weight);
        terms.l1 += l;
        terms.ssim += s;

        let g2 = backward_prepared(&prep, render_cfg, &traces, &g_img);
        let per_splat: Vec<Result<(usize, TapeGradient)>> = (0..prep.splats.len())
            .into_par_iter()
            .map(|i| {
                let s2 = &prep.splats[i];
                let sg = project_adjoint(&prep.conditioned[i], &view.camera, s2, &g2[i]);
                let prim = &scene.primitives[s2.id];
                let mut tg = TapeGradient::for_primitive(prim);
                slice_adjoint(prim, &view.query, render_cfg.slice, &sg, &mut tg)?;
                Ok((s2.id, tg))
            })
            .collect();
        for r in per_splat {
            let (id, tg) = r?;
            grads[id].add(&tg);
        }
        renders.push(img);
    }

    let (o, s) = regularizer_terms(scene, loss_cfg);
    terms.opacity = o * loss_cfg.scale;
    terms.scale = s * loss_cfg.scale;
    let (w_o, w_s) = regularizer_weights(scene, loss_cfg);
    for (p, g) in scene.primitives.iter().zip(grads.iter_mut()) {
        let o = p.opacity();
        g.field_mut(ParamField::OpacityRaw)[0] += w_o * o * (1.0 - o);
        for (gv, s) in g.field_mut(ParamField::LogScaleX).iter_mut().zip(p.cov.scale_x()) {
            *gv += w_s * s;
        }
        for (gv, s) in g.field_mut(ParamField::LogScaleQ).iter_mut().zip(p.cov.scale_q()) {
            *gv += w_s * s;
        }
    }
    for (i, g) in grads.iter().enumerate() {
        g.check_finite(i)?;
    }
    let loss = terms.total();
    if !loss.is_finite() {
        return Err(UbsError::NonFiniteLoss { iteration: 0 });
    }
    Ok(Backward { loss, terms, grads, renders })
}

/// Loss only, without gradients.
pub fn forward_loss(scene: &Scene, views: &[&View], loss_cfg: &LossConfig, render_cfg: &RenderConfig) -> Result<LossTerms> {
    let renders = views
        .iter()
        .map(|v| crate::raster::render_with(scene, &v.camera, &v.query, render_cfg))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = renders.iter().zip(views).map(|(r, v)| (r, &v.target)).collect();
    Ok(crate::optim::loss::loss(&pairs, scene, loss_cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render, Camera};
    use crate::slicer::Query;
    use crate::testutil::{camera_query, random_scene, test_camera};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn views_for(scene: &Scene, seed: u64, n_views: usize) -> Vec<View> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = random_scene(&mut rng, scene.n_dims, scene.len());
        (0..n_views)
            .map(|k| {
                let a = 0.4 * k as f64;
                let cam = Camera::look_at([3.0 * a.sin(), -0.3, -3.0 * a.cos()], [0.0; 3], [0.0, 1.0, 0.0], 0.9, 24, 20).unwrap();
                let query = camera_query(&cam, scene.n_dims, 0.3 + 0.2 * k as f64);
                let target = render(&other, &cam, &query).unwrap();
                View { camera: cam, query, target }
            })
            .collect()
    }

    #[test]
    fn self_target_has_zero_l1_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scene = random_scene(&mut rng, 6, 6);
        let cam = test_camera(24, 24);
        let query = camera_query(&cam, 6, 0.0);
        let target = render(&scene, &cam, &query).unwrap();
        let view = View { camera: cam, query, target };
        let bw = backward(&scene, &[&view], &LossConfig::photometric(0.0), &RenderConfig::default()).unwrap();
        assert_eq!(bw.loss, 0.0);
        assert!(bw.grads.iter().all(|g| g.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_pixel_color_gradient() {
        let mut scene = Scene::new(3, [0.0; 3]).unwrap();
        let mut p = Primitive::unit(0);
        p.mu_x = [0.0, 0.0, 2.0];
        p.cov.log_scale_x = [-1.0; 3];
        p.set_opacity(0.999_999);
        p.color = [0.8, 0.1, 0.4];
        scene.primitives.push(p);
        let cam = Camera::new(10.0, 10.0, 0.5, 0.5, 1, 1, crate::raster::rigid(&nalgebra::Matrix3::identity(), &nalgebra::Vector3::zeros())).unwrap();
        let target = ImageBuffer::filled(1, 1, [0.5, 0.5, 0.5]);
        let view = View { camera: cam, query: Query::empty(), target };
        let bw = backward(&scene, &[&view], &LossConfig::photometric(0.0), &RenderConfig::default()).unwrap();
        // Pixel weight is the clamped alpha 0.999; L1 averages over 3 channels.
        let g = bw.grads[0].field(ParamField::Color);
        let w = 0.999 / 3.0;
        assert!((g[0] - w).abs() < 1e-12 && (g[1] + w).abs() < 1e-12 && (g[2] + w).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let scene = random_scene(&mut rng, 7, 5);
        let views = views_for(&scene, 33, 2);
        let refs: Vec<&View> = views.iter().collect();
        let cfg = LossConfig::default();
        let a = backward(&scene, &refs, &cfg, &RenderConfig::default()).unwrap();
        let b = backward(&scene, &refs, &LossConfig { scale: 2.0, ..cfg }, &RenderConfig::default()).unwrap();
        assert!((b.loss - 2.0 * a.loss).abs() < 1e-14);
        for (ga, gb) in a.grads.iter().zip(&b.grads) {
            for (x, y) in ga.values().iter().zip(gb.values()) {
                assert!((y - 2.0 * x).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn matches_finite_differences() {
        for (n, seed) in [(3, 40), (6, 41), (7, 42)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&mut rng, n, 4);
            let views = views_for(&scene, seed + 100, 2);
            let setup = FdSetup {
                views: views.iter().collect(),
                loss: LossConfig { scale: 24.0 * 20.0 * 3.0, ..LossConfig::default() },
                render: RenderConfig::default(),
            };
            let report = fd_check(&scene, &setup, 1e-4, 1e-3).unwrap();
            let failures: Vec<_> = report.entries.iter().filter(|e| e.status == FdStatus::Fail).collect();
            assert!(failures.is_empty(), "N={n}: {failures:#?}");
            assert!(report.passed > report.excluded, "N={n}: {} excluded", report.excluded);
        }
    }

    #[test]
    fn fully_culled_primitive_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut scene = random_scene(&mut rng, 3, 3);
        scene.primitives[1].mu_x = [0.0, 0.0, -10.0];
        let views = views_for(&scene, 35, 1);
        let setup = FdSetup { views: views.iter().collect(), loss: LossConfig::photometric(0.2), render: RenderConfig::default() };
        let report = fd_check(&scene, &setup, 1e-4, 1e-3).unwrap();
        for e in report.entries.iter().filter(|e| e.primitive == 1) {
            assert_eq!((e.analytic, e.fd), (0.0, 0.0));
        }
        assert!(fd_check(&scene, &setup, 1e-2, 1e-3).is_err());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut g = TapeGradient::zeros(3);
        g.field_mut(ParamField::BQ)[1] = f64::NAN;
        let err = g.check_finite(7).unwrap_err().to_string();
        assert!(err.contains("primitive 7") && err.contains("b_q[1]"), "{err}");
    }
}
