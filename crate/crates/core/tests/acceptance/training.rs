use ubs::optim::{evaluate, train, TrainConfig};
use ubs::sceneio::{init_scene, make_synthetic, Bounds, InitConfig, Scene, SynthKind, Synthetic, View, SYNTH_SPECIAL};
use ubs::slicer::slice;
use ubs::RenderConfig;

use crate::fixtures::{camera_query, median, orbit_camera, random_scene, rng};
use crate::Outcome;

const DATASET_SEED: u64 = 7;
const SEEDS: [u64; 3] = [1, 2, 3];
const PRIMITIVES: usize = 150;

fn initial(synth: &Synthetic, count: usize, seed: u64) -> Scene {
    let mut s = init_scene(synth.scene.n_dims, count, seed, Bounds::cube(1.0), InitConfig::default()).unwrap();
    s.background = synth.scene.background;
    s
}

fn fit(synth: &Synthetic, cfg: &TrainConfig, count: usize) -> (Scene, f64) {
    let out = train(initial(synth, count, cfg.seed), &synth.train, cfg).unwrap();
    let psnr = evaluate(&out.scene, &synth.test, &cfg.render_config()).unwrap().mean_psnr;
    (out.scene, psnr)
}

/// Test PSNR of free-shape minus frozen-shape runs for each seed.
fn shape_gaps(kind: SynthKind, iterations: usize) -> (Vec<f64>, Vec<f64>) {
    let synth = make_synthetic(kind, DATASET_SEED).unwrap();
    let mut gaps = Vec::new();
    let mut frozen_psnr = Vec::new();
    for seed in SEEDS {
        let cfg = TrainConfig { iterations, seed, log_every: iterations, ..TrainConfig::default() };
        let (_, free) = fit(&synth, &cfg, PRIMITIVES);
        let (_, frozen) = fit(&synth, &TrainConfig { freeze_shapes: true, ..cfg }, PRIMITIVES);
        gaps.push(free - frozen);
        frozen_psnr.push(frozen);
    }
    (gaps, frozen_psnr)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(", ")
}

pub fn a4_static_lower_bound() -> Outcome {
    let (gaps, frozen) = shape_gaps(SynthKind::Static, 2000);
    let m = median(gaps.clone());
    Outcome::new(
        m >= -0.1,
        format!("median free - frozen {m:+.2} dB (per seed {}; frozen median {:.2} dB; need >= -0.10)", fmt_list(&gaps), median(frozen)),
    )
}

pub fn a5_view_dependent_gap() -> Outcome {
    let (gaps, frozen) = shape_gaps(SynthKind::Viewdep, 2000);
    let m = median(gaps.clone());
    Outcome::new(
        m >= 0.5,
        format!("median free - frozen {m:+.2} dB (per seed {}; frozen baseline {:.2} dB; need >= +0.50)", fmt_list(&gaps), median(frozen)),
    )
}

/// Trained primitives that reconstruct the transient, and those that stay clear of it.
///
/// A primitive belongs to the transient cluster when, for some training query
/// at which the ground-truth transient is visible, it is itself visible and its
/// conditioned mean lies within `near` of the transient's conditioned mean. It
/// belongs to the static cluster when it never comes within `far` of it.
fn clusters(trained: &Scene, gt: &Scene, views: &[View], near: f64, far: f64) -> (Vec<f64>, Vec<f64>) {
    let transient = &gt.primitives[SYNTH_SPECIAL];
    let visible: Vec<_> = views
        .iter()
        .filter_map(|v| {
            let s = slice(transient, &v.query).ok()?;
            (s.gated_opacity >= 0.1).then_some((v, s.mean3))
        })
        .collect();
    let (mut dynamic, mut fixed) = (Vec::new(), Vec::new());
    for p in trained.primitives.iter().filter(|p| p.opacity() >= 0.05) {
        let mut closest = f64::INFINITY;
        let mut hit = false;
        for (v, target) in &visible {
            let Ok(s) = slice(p, &v.query) else { continue };
            let d = (s.mean3 - target).norm();
            closest = closest.min(d);
            hit |= d <= near && s.gated_opacity >= 0.05;
        }
        if hit {
            dynamic.push(p.shape.b_q[0]);
        } else if closest > far {
            fixed.push(p.shape.b_q[0]);
        }
    }
    (dynamic, fixed)
}

pub fn a6_temporal_decomposition() -> Outcome {
    let synth = make_synthetic(SynthKind::Dynamic, DATASET_SEED).unwrap();
    let cfg = TrainConfig { iterations: 10_000, batch_size: 4, seed: 1, log_every: 10_000, ..TrainConfig::default() };
    let (trained, psnr) = fit(&synth, &cfg, 2 * PRIMITIVES);
    let (dynamic, fixed) = clusters(&trained, &synth.scene, &synth.train, 0.3, 0.6);
    let (md, mf) = (median(dynamic.clone()), median(fixed.clone()));
    Outcome::new(
        md >= 0.5 && mf <= 0.0,
        format!(
            "transient cluster {} primitives, median b_t {md:.2} (need >= 0.5); static cluster {} primitives, median b_t {mf:.2} (need <= 0); test PSNR {psnr:.2} dB",
            dynamic.len(),
            fixed.len()
        ),
    )
}

fn bits(scene: &Scene) -> Vec<u64> {
    scene.primitives.iter().flat_map(|p| p.to_flat()).map(f64::to_bits).collect()
}

fn image_bits(img: &ubs::ImageBuffer) -> Vec<u64> {
    (0..3).flat_map(|c| img.plane(c)).map(f64::to_bits).collect()
}

pub fn a9_thread_determinism() -> Outcome {
    let synth = make_synthetic(SynthKind::Viewdep, DATASET_SEED).unwrap();
    let cfg = TrainConfig { iterations: 60, relocation_period: 20, seed: 5, log_every: 60, ..TrainConfig::default() };
    let big = random_scene(&mut rng(909), 7, 200);
    let cam = orbit_camera(0.7, 0.3, 64, 64);
    let query = camera_query(&cam, 7, 0.4);
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut runs = Vec::new();
    for threads in [1, 4, max] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let run = pool.install(|| {
            let scene = train(initial(&synth, 60, cfg.seed), &synth.train, &cfg).unwrap().scene;
            let v = &synth.test[0];
            let fitted = ubs::render_with(&scene, &v.camera, &v.query, &RenderConfig::default()).unwrap();
            let random = ubs::render(&big, &cam, &query).unwrap();
            (bits(&scene), image_bits(&fitted), image_bits(&random))
        });
        runs.push(run);
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(same, format!("trained scene and two renders compared bitwise at 1, 4 and {max} threads"))
}
