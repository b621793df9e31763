//! Universal Beta Splatting: N-dimensional Beta-kernel primitives sliced by
//! view direction and time, rendered with a tile-parallel differentiable
//! software rasterizer.

pub mod betakernel;
pub mod covparam;
pub mod diff;
pub mod error;
pub mod image;
pub mod linalg;
pub mod optim;
pub mod raster;
pub mod sceneio;
pub mod slicer;

#[cfg(test)]
mod testutil;

pub use error::{Result, UbsError};
pub use image::ImageBuffer;
pub use raster::{render, render_with, Camera, RenderConfig};
pub use sceneio::{Primitive, Scene, View};
pub use slicer::Query;
