//! Screen-space projection and deterministic tile-parallel compositing.

mod camera;
mod composite;
mod project;
mod render;

pub use camera::{rigid, Camera, ROTATION_TOL};
pub use composite::{composite, composite_with, kernel2d, kernel2d_with, PixelTrace};
pub(crate) use project::project_adjoint;
pub use project::{project, project_with, Splat2D, Splat2DGrad};
pub(crate) use render::{backward_prepared, trace_prepared};
pub use render::{
    colormap, prepare, render, render_decomposition, render_prepared, render_with, DecompositionChannel, Prepared, TileGrid,
};

use serde::{Deserialize, Serialize};

use crate::slicer::SliceConfig;

/// Rasterization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Squared Mahalanobis radius of the 2D Beta support: `x = m / tau2`.
    pub tau2: f64,
    pub alpha_max: f64,
    /// Stop compositing a pixel once transmittance falls below this.
    pub min_transmittance: f64,
    pub near: f64,
    /// Extra pixels around the image inside which splats are kept.
    pub cull_margin: f64,
    /// Added to the diagonal of every projected covariance.
    pub screen_floor: f64,
    pub slice: SliceConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            tau2: 8.0,
            alpha_max: 0.999,
            min_transmittance: 1e-6,
            near: 0.01,
            cull_margin: 3.0,
            screen_floor: 1e-6,
            slice: SliceConfig::default(),
        }
    }
}
