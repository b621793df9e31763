//! NeRF-style JSON camera manifests.
//!
//! ```json
//! {
//!   "camera_angle_x": 0.69,
//!   "w": 64, "h": 64,
//!   "frames": [
//!     { "file_path": "train/r_0", "transform_matrix": [[...], [...], [...], [0, 0, 0, 1]],
//!       "time": 0.25, "split": "train" }
//!   ]
//! }
//! ```
//!
//! `transform_matrix` is camera-to-world with x right, y up, z backward.
//! `file_path` is relative to the manifest; `.png` is appended when it has no
//! extension. `w`/`h` default to the size of the first image, `split` to
//! `train`. Times are min-max normalized to `[0, 1]` within each split.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::View;
use crate::error::{Result, UbsError};
use crate::image::ImageBuffer;
use crate::raster::{rigid, Camera, ROTATION_TOL};
use crate::slicer::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    pub frames: Vec<ManifestFrame>,
}

/// One frame of a loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub camera: Camera,
    pub image_path: PathBuf,
    /// Normalized time, present iff the manifest is dynamic.
    pub time: Option<f64>,
    pub split: Split,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> UbsError {
    UbsError::Manifest { path: path.to_path_buf(), message: message.into() }
}

fn resolve_image(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Convert a camera-to-world transform (y up, z backward) to a world-to-camera
/// transform (y down, z forward).
fn world_to_cam_from_gl(m: &[[f64; 4]; 4]) -> std::result::Result<[[f64; 4]; 4], String> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err("transform has non-finite entries".into());
    }
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err("transform bottom row is not [0, 0, 0, 1]".into());
    }
    let r_gl = Matrix3::from_fn(|i, j| m[i][j]);
    let err = (r_gl * r_gl.transpose() - Matrix3::identity()).amax();
    if err > ROTATION_TOL || r_gl.determinant() < 0.0 {
        return Err(format!("rotation block is not orthonormal (error {err:.2e})"));
    }
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r_c2w = r_gl * flip;
    let center = Vector3::new(m[0][3], m[1][3], m[2][3]);
    let r = r_c2w.transpose();
    Ok(rigid(&r, &(-(r * center))))
}

/// The manifest `transform_matrix` of a camera.
pub fn gl_transform(cam: &Camera) -> [[f64; 4]; 4] {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r_gl = cam.rotation().transpose() * flip;
    let mut m = rigid(&r_gl, &Vector3::from(cam.center()));
    m[3] = [0.0, 0.0, 0.0, 1.0];
    m
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| manifest_err(path, format!("cannot read: {e}")))?;
    serde_json::from_str(&text).map_err(|e| manifest_err(path, format!("malformed JSON: {e}")))
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Parse and validate a manifest into cameras, image paths and normalized times.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = manifest_path.as_ref();
    let m = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if m.frames.is_empty() {
        return Err(manifest_err(path, "no frames"));
    }
    if !(m.camera_angle_x > 0.0 && m.camera_angle_x < std::f64::consts::PI) {
        return Err(manifest_err(path, format!("camera_angle_x {} outside (0, pi)", m.camera_angle_x)));
    }
    let (w, h) = match (m.w, m.h) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            let first = resolve_image(base, &m.frames[0].file_path);
            let img = image::image_dimensions(&first)
                .map_err(|e| manifest_err(path, format!("frame 0: cannot read {}: {e}", first.display())))?;
            (m.w.unwrap_or(img.0 as usize), m.h.unwrap_or(img.1 as usize))
        }
    };
    let dynamic = m.frames.iter().any(|f| f.time.is_some());
    let fx = w as f64 / (2.0 * (0.5 * m.camera_angle_x).tan());
    let mut entries = Vec::with_capacity(m.frames.len());
    for (i, f) in m.frames.iter().enumerate() {
        let w2c = world_to_cam_from_gl(&f.transform_matrix).map_err(|e| manifest_err(path, format!("frame {i}: {e}")))?;
        let camera = Camera::new(fx, fx, w as f64 / 2.0, h as f64 / 2.0, w, h, w2c)
            .map_err(|e| manifest_err(path, format!("frame {i}: {e}")))?;
        if dynamic && f.time.is_none() {
            return Err(manifest_err(path, format!("frame {i} ({}) has no time in a dynamic manifest", f.file_path)));
        }
        if let Some(t) = f.time {
            if !t.is_finite() {
                return Err(manifest_err(path, format!("frame {i}: non-finite time")));
            }
        }
        entries.push(DatasetEntry {
            camera,
            image_path: resolve_image(base, &f.file_path),
            time: f.time,
            split: f.split.unwrap_or_default(),
        });
    }
    for split in [Split::Train, Split::Test] {
        let times: Vec<f64> = entries.iter().filter(|e| e.split == split).filter_map(|e| e.time).collect();
        if times.is_empty() {
            continue;
        }
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in entries.iter_mut().filter(|e| e.split == split) {
            if let Some(t) = e.time.as_mut() {
                *t = if hi > lo { (*t - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }
    Ok(entries)
}

/// Load the frames of one split as views with queries for an `n_dims` scene.
/// Images may be PNG or float planar (`.ubsf`).
pub fn load_views(manifest_path: impl AsRef<Path>, n_dims: usize, split: Split) -> Result<Vec<View>> {
    let path = manifest_path.as_ref();
    let mut views = Vec::new();
    for (i, e) in load_dataset(path)?.into_iter().enumerate() {
        if e.split != split {
            continue;
        }
        if n_dims == 7 && e.time.is_none() {
            return Err(manifest_err(path, format!("frame {i} has no time but N = 7 needs one")));
        }
        let query = Query::for_dims(n_dims, e.time, Some(e.camera.view_direction()))?;
        let target = if e.image_path.extension().is_some_and(|x| x == "ubsf") {
            ImageBuffer::load_planar(&e.image_path)?
        } else {
            ImageBuffer::load_png(&e.image_path)?
        };
        if target.width != e.camera.width || target.height != e.camera.height {
            return Err(manifest_err(
                path,
                format!("frame {i}: image is {}x{}, manifest says {}x{}", target.width, target.height, e.camera.width, e.camera.height),
            ));
        }
        views.push(View { camera: e.camera, query, target });
    }
    Ok(views)
}
