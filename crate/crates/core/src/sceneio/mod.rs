//! Scenes, persistence, datasets, initialization, synthetic scenes and metrics.

mod dataset;
mod format;
mod init;
mod metrics;
mod scene;
mod synth;

pub use dataset::{gl_transform, load_dataset, load_views, read_manifest, write_manifest, DatasetEntry, Manifest, ManifestFrame, Split};
pub use format::{load_scene, save_scene, scene_from_bytes, scene_from_json, scene_to_bytes, scene_to_json, SCENE_MAGIC};
pub use init::{init_scene, Bounds, InitConfig};
pub use metrics::{mse, psnr, PSNR_IDENTICAL};
pub use scene::{
    field_of, opacity_logit, param_len, parameter_report, query_dims_for, ParamField, ParamGroup, ParamReport, Primitive,
    Scene,
};
pub use synth::{
    make_synthetic, write_synthetic, SynthKind, Synthetic, SYNTH_FOV, SYNTH_SIZE, SYNTH_SPECIAL, SYNTH_TEST_VIEWS, SYNTH_TIMESTAMPS,
    SYNTH_TRAIN_VIEWS,
};

use crate::image::ImageBuffer;
use crate::raster::Camera;
use crate::slicer::Query;

/// One training or test observation.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub query: Query,
    pub target: ImageBuffer,
}
