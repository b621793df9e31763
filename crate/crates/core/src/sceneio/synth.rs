//! Synthetic ground-truth scenes with rendered targets.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{gl_transform, write_manifest, Manifest, ManifestFrame, Split};
use super::format::save_scene;
use super::{Primitive, Scene, View};
use crate::error::{Result, UbsError};
use crate::raster::{render, Camera};
use crate::slicer::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// View- and time-independent blobs with varied spatial shapes.
    Static,
    /// Static blobs plus one highlight that moves with and is gated by the view direction.
    Viewdep,
    /// Static blobs plus one object that sweeps through the scene near t = 0.5.
    Dynamic,
}

impl SynthKind {
    pub fn n_dims(self) -> usize {
        match self {
            Self::Static | Self::Viewdep => 6,
            Self::Dynamic => 7,
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = UbsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "viewdep" => Ok(Self::Viewdep),
            "dynamic" => Ok(Self::Dynamic),
            _ => Err(UbsError::Usage(format!("unknown synthetic kind '{s}' (static, viewdep, dynamic)"))),
        }
    }
}

/// Ground truth plus rendered train and test views.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub kind: SynthKind,
    pub scene: Scene,
    pub train: Vec<View>,
    pub test: Vec<View>,
    /// Horizontal field of view shared by all cameras.
    pub fov_x: f64,
}

pub const SYNTH_SIZE: usize = 48;
pub const SYNTH_FOV: f64 = 0.9;
pub const SYNTH_TRAIN_VIEWS: usize = 20;
pub const SYNTH_TEST_VIEWS: usize = 5;
pub const SYNTH_TIMESTAMPS: usize = 8;
const RADIUS: f64 = 3.2;
/// Index of the highlight or transient primitive in the viewdep and dynamic ground truths.
pub const SYNTH_SPECIAL: usize = 0;

/// Camera `k` of `n` on a ring around the origin, offset by `phase` (in steps).
fn ring_camera(k: usize, n: usize, phase: f64) -> Camera {
    let a = std::f64::consts::TAU * (k as f64 + phase) / n as f64;
    let elev = 0.35 * ((k % 3) as f64 - 1.0);
    let eye = [RADIUS * a.sin(), elev, -RADIUS * a.cos()];
    Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], SYNTH_FOV, SYNTH_SIZE, SYNTH_SIZE).expect("ring camera")
}

/// A blob with no query dependence: the query means sit at the upper corner
/// of the query domain, so the gate never engages and nothing couples.
fn static_blob(rng: &mut ChaCha8Rng, c: usize, keep_out: f64) -> Primitive {
    let mut p = Primitive::unit(c);
    loop {
        for i in 0..3 {
            p.mu_x[i] = rng.random_range(-0.8..0.8);
        }
        if p.mu_x.iter().map(|v| v * v).sum::<f64>().sqrt() >= keep_out {
            break;
        }
    }
    p.mu_q = vec![1.0; c];
    p.cov.rot = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
    for s in p.cov.log_scale_x.iter_mut() {
        *s = rng.random_range(-2.4f64..-1.4);
    }
    p.shape.b_x = rng.random_range(-2.0..2.0);
    p.shape.b_q = vec![-5.0; c];
    p.set_opacity(rng.random_range(0.6..0.95));
    p.color = [rng.random(), rng.random(), rng.random()];
    p
}

/// Highlight that slides along x with the view direction's z component and
/// is switched off for view directions with x above 0.3.
fn highlight() -> Primitive {
    let mut p = Primitive::unit(3);
    p.mu_x = [0.0, 0.0, 0.0];
    p.mu_q = vec![0.3, 1.0, 1.0];
    p.cov.log_scale_x = [0.3f64.ln(), 0.18f64.ln(), 0.18f64.ln()];
    // Direction z moves the mean along x; scales chosen so the beta-modulated
    // Schur complement stays positive.
    let s = 0.3;
    p.cov.l_qx = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2 * s, 0.0, 0.0];
    p.cov.log_scale_q = vec![0.08f64.ln(), 0.0, s.ln()];
    p.shape.b_x = 1.0;
    p.shape.b_q = vec![1.5, -5.0, 1.0];
    p.set_opacity(0.95);
    p.color = [1.0, 0.95, 0.8];
    p
}

/// Object that sweeps vertically through the scene at about 1 unit per frame,
/// crossing the origin at t = 3/7, and is gated off after its time mean of 0.5.
fn transient() -> Primitive {
    let mut p = Primitive::unit(4);
    p.mu_x = [0.0, 0.525, 0.0];
    p.mu_q = vec![0.5, 1.0, 1.0, 1.0];
    p.cov.log_scale_x = [0.35f64.ln(); 3];
    p.cov.l_qx = vec![0.0; 12];
    p.cov.l_qx[1] = 0.004605;
    p.cov.log_scale_q = vec![0.04f64.ln(), 0.0, 0.0, 0.0];
    p.shape.b_x = 0.0;
    p.shape.b_q = vec![2.0, -5.0, -5.0, -5.0];
    p.set_opacity(0.95);
    p.color = [1.0, 0.2, 0.1];
    p
}

fn ground_truth(kind: SynthKind, rng: &mut ChaCha8Rng) -> Scene {
    let n = kind.n_dims();
    let c = n - 3;
    let mut scene = Scene::new(n, [0.0; 3]).expect("valid dimensionality");
    match kind {
        SynthKind::Static => {}
        SynthKind::Viewdep => scene.primitives.push(highlight()),
        SynthKind::Dynamic => scene.primitives.push(transient()),
    }
    // Keep the transient's crossing point free of background.
    let keep_out = if kind == SynthKind::Dynamic { 0.6 } else { 0.0 };
    for _ in 0..30 {
        scene.primitives.push(static_blob(rng, c, keep_out));
    }
    scene
}

fn make_views(scene: &Scene, cams: &[Camera], times: &[f64]) -> Result<Vec<View>> {
    let mut out = Vec::new();
    for cam in cams {
        for &t in times {
            let query = Query::for_dims(scene.n_dims, Some(t), Some(cam.view_direction()))?;
            let target = render(scene, cam, &query)?;
            out.push(View { camera: cam.clone(), query, target });
        }
    }
    Ok(out)
}

/// Build the ground truth for `kind` and render 20 train and 5 test views
/// (each at 8 timestamps `i / 7` for the dynamic kind).
pub fn make_synthetic(kind: SynthKind, seed: u64) -> Result<Synthetic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = ground_truth(kind, &mut rng);
    let train_cams: Vec<Camera> = (0..SYNTH_TRAIN_VIEWS).map(|k| ring_camera(k, SYNTH_TRAIN_VIEWS, 0.0)).collect();
    let test_cams: Vec<Camera> = (0..SYNTH_TEST_VIEWS).map(|k| ring_camera(4 * k, SYNTH_TRAIN_VIEWS, 0.5)).collect();
    let times: Vec<f64> = match kind {
        SynthKind::Dynamic => (0..SYNTH_TIMESTAMPS).map(|i| i as f64 / (SYNTH_TIMESTAMPS - 1) as f64).collect(),
        _ => vec![0.0],
    };
    Ok(Synthetic {
        kind,
        train: make_views(&scene, &train_cams, &times)?,
        test: make_views(&scene, &test_cams, &times)?,
        scene,
        fov_x: SYNTH_FOV,
    })
}

/// Write PNG targets, `transforms.json` and the ground-truth scene `gt.ubs`.
pub fn write_synthetic(dir: impl AsRef<Path>, synth: &Synthetic) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("train"))?;
    std::fs::create_dir_all(dir.join("test"))?;
    let dynamic = synth.kind == SynthKind::Dynamic;
    let mut frames = Vec::new();
    for (split, views, name) in [(Split::Train, &synth.train, "train"), (Split::Test, &synth.test, "test")] {
        for (i, v) in views.iter().enumerate() {
            let file_path = format!("{name}/r_{i:03}.png");
            v.target.save_png(dir.join(&file_path))?;
            frames.push(ManifestFrame {
                file_path,
                transform_matrix: gl_transform(&v.camera),
                time: dynamic.then(|| v.query.dims()[0]),
                split: Some(split),
            });
        }
    }
    let manifest = Manifest { camera_angle_x: synth.fov_x, w: Some(SYNTH_SIZE), h: Some(SYNTH_SIZE), frames };
    write_manifest(dir.join("transforms.json"), &manifest)?;
    save_scene(&synth.scene, dir.join("gt.ubs"))
}
