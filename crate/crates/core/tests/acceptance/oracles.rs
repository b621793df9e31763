use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use ubs::covparam::build_l;
use ubs::diff::{fd_check, FdSetup};
use ubs::optim::{clone_opacity, LossConfig};
use ubs::raster::{kernel2d_with, project_with, RenderConfig, Splat2D};
use ubs::sceneio::{param_len, parameter_report, Scene};
use ubs::slicer::{slice, slice_with, Query};
use ubs::{render_with, ImageBuffer};

use crate::fixtures::{camera_query, orbit_camera, random_primitive, random_scene, rng, views_of};
use crate::Outcome;

/// Textbook conditioning of the dense joint `L L^T` on the query block.
fn dense_conditional(l: &DMatrix<f64>, mu: &DVector<f64>, q: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = l.nrows();
    let c = n - 3;
    let sigma = l * l.transpose();
    let sxx = sigma.view((0, 0), (3, 3)).into_owned();
    let sxq = sigma.view((0, 3), (3, c)).into_owned();
    let sqq = sigma.view((3, 3), (c, c)).into_owned();
    let inv = sqq.try_inverse().expect("query block invertible");
    let dq = DVector::from_fn(c, |i, _| q[i] - mu[3 + i]);
    let mean = mu.rows(0, 3).into_owned() + &sxq * &inv * dq;
    let cov = sxx - &sxq * &inv * sxq.transpose();
    (mean, cov)
}

pub fn a1_conditioning_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (n, seed) in [(6usize, 101u64), (7, 102)] {
        let mut r = rng(seed);
        for _ in 0..1000 {
            let mut p = random_primitive(&mut r, n - 3);
            p.shape.b_q.iter_mut().for_each(|b| *b = 0.0);
            let dir = {
                let v = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0f64)];
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
                [v[0] / len, v[1] / len, v[2] / len]
            };
            let query = Query::for_dims(n, Some(r.random_range(0.0..1.0)), Some(dir)).unwrap();
            let got = slice(&p, &query).unwrap();
            let l = build_l(&p.cov).unwrap();
            let mu = DVector::from_iterator(n, p.mu_x.iter().chain(p.mu_q.iter()).copied());
            let (mean, cov) = dense_conditional(&l, &mu, query.dims());
            for i in 0..3 {
                worst = worst.max((got.mean3[i] - mean[i]).abs());
                for j in 0..3 {
                    worst = worst.max((got.cov3[(i, j)] - cov[(i, j)]).abs());
                }
            }
            count += 1;
        }
    }
    Outcome::new(worst <= 1e-10, format!("max abs error {worst:.2e} over {count} primitives (tol 1e-10)"))
}

fn naive_render(scene: &Scene, cam: &ubs::Camera, query: &Query, cfg: &RenderConfig) -> ImageBuffer {
    let mut splats: Vec<Splat2D> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(id, p)| project_with(&slice_with(p, query, cfg.slice).ok()?, cam, cfg, id))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    let mut img = ImageBuffer::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            for s in &splats {
                let alpha = (s.opacity * kernel2d_with(px, s, cfg.tau2)).min(cfg.alpha_max);
                for k in 0..3 {
                    color[k] += s.color[k] * alpha * trans;
                }
                trans *= 1.0 - alpha;
            }
            for k in 0..3 {
                color[k] += scene.background[k] * trans;
            }
            img.set(x, y, color);
        }
    }
    img
}

pub fn a2_compositing_oracle() -> Outcome {
    let cfg = RenderConfig::default();
    let mut worst: f64 = 0.0;
    let mut r = rng(202);
    for i in 0..10 {
        let n = [3, 6, 7][i % 3];
        let scene = random_scene(&mut r, n, 20 * (i + 1));
        let cam = orbit_camera(0.6 * i as f64, 0.2, 64, 64);
        let query = camera_query(&cam, n, 0.1 * i as f64);
        let tiled = render_with(&scene, &cam, &query, &cfg).unwrap();
        worst = worst.max(tiled.max_abs_diff(&naive_render(&scene, &cam, &query, &cfg)));
    }
    Outcome::new(worst <= 1e-6, format!("max abs difference {worst:.2e} over 10 scenes of 20..200 primitives at 64x64 (tol 1e-6)"))
}

pub fn a3_gradient_check() -> Outcome {
    let (w, h) = (32, 32);
    // Summed rather than averaged photometric loss, so the absolute tolerance is not vacuous.
    let loss = LossConfig { scale: (w * h * 3) as f64, ..LossConfig::default() };
    let (mut passed, mut failed, mut excluded) = (0, 0, 0);
    let mut per_n = Vec::new();
    for n in [3usize, 6, 7] {
        let mut r = rng(300 + n as u64);
        let (mut p_n, mut f_n) = (0, 0);
        for _ in 0..20 {
            let scene = random_scene(&mut r, n, 3);
            let other = random_scene(&mut r, n, 3);
            let views = views_of(&other, 2, w, h);
            let setup = FdSetup { views: views.iter().collect(), loss, render: RenderConfig::default() };
            let report = fd_check(&scene, &setup, 1e-4, 1e-3).unwrap();
            p_n += report.passed;
            f_n += report.failed;
            excluded += report.excluded;
        }
        per_n.push(format!("N={n} {p_n}/{}", p_n + f_n));
        passed += p_n;
        failed += f_n;
    }
    let frac = passed as f64 / (passed + failed).max(1) as f64;
    Outcome::new(
        frac >= 0.99,
        format!(
            "{:.2}% of {} smooth-interior entries pass ({}; {excluded} excluded at branch changes; need 99%)",
            100.0 * frac,
            passed + failed,
            per_n.join(", ")
        ),
    )
}

pub fn a7_clone_render() -> Outcome {
    let cfg = RenderConfig::default();
    let cam = orbit_camera(0.3, 0.1, 48, 48);
    let mut worst: f64 = 0.0;
    let mut worst_peak: f64 = 0.0;
    let mut r = rng(707);
    for o in [0.1, 0.5, 0.9] {
        let mut p = random_primitive(&mut r, 3);
        p.mu_x = [0.0; 3];
        p.mu_q = vec![1.0; 3];
        p.set_opacity(o);
        let query = camera_query(&cam, 6, 0.0);
        let mut original = Scene::new(6, [0.1, 0.2, 0.3]).unwrap();
        original.primitives.push(p.clone());
        let reference = render_with(&original, &cam, &query, &cfg).unwrap();
        let splat = project_with(&slice(&p, &query).unwrap(), &cam, &cfg, 0).unwrap();
        let peak = (splat.mean2[0].floor() as usize, splat.mean2[1].floor() as usize);
        for n in [2usize, 3, 4] {
            let mut clones = Scene::new(6, original.background).unwrap();
            let mut q = p.clone();
            q.set_opacity(clone_opacity(o, n));
            clones.primitives = vec![q; n];
            let img = render_with(&clones, &cam, &query, &cfg).unwrap();
            worst = worst.max(img.max_abs_diff(&reference));
            let (a, b) = (img.get(peak.0, peak.1), reference.get(peak.0, peak.1));
            worst_peak = worst_peak.max((0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max));
        }
    }
    Outcome::new(
        worst <= 1e-6,
        format!("max abs difference {worst:.2e} per channel (tol 1e-6); {worst_peak:.2e} at the pixel nearest the splat centre"),
    )
}

pub fn a8_parameter_count() -> Outcome {
    let six = parameter_report(6).unwrap().total();
    let seven = parameter_report(7).unwrap().total();
    let stored = (param_len(3), param_len(4));
    Outcome::new(
        six == 35 && seven == 44 && stored == (35, 44),
        format!("N=6 reports {six}, N=7 reports {seven}; stored lengths {} and {}", stored.0, stored.1),
    )
}
