use std::str::FromStr;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::composite::{composite_pixel, composite_pixel_adjoint, splat_alpha, PixelTrace};
use super::{project_with, Camera, RenderConfig, Splat2D, Splat2DGrad};
use crate::error::{Result, UbsError};
use crate::image::ImageBuffer;
use crate::sceneio::Scene;
use crate::slicer::{slice_with, ConditionedSplat, Query};

/// Tile layout of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile_size: usize) -> Self {
        let ts = tile_size.max(1);
        Self { tile_size: ts, tiles_x: width.div_ceil(ts), tiles_y: height.div_ceil(ts) }
    }

    pub fn len(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel ranges `(x0..x1, y0..y1)` covered by tile `t`.
    pub fn pixels(&self, t: usize, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let ts = self.tile_size;
        ((tx * ts)..((tx + 1) * ts).min(width), (ty * ts)..((ty + 1) * ts).min(height))
    }
}

/// Per-view rasterization state: sorted screen-space splats and tile lists.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Sorted front to back by `(depth, id)`.
    pub splats: Vec<Splat2D>,
    /// The 3D splat each entry of `splats` was projected from.
    pub conditioned: Vec<ConditionedSplat>,
    pub grid: TileGrid,
    /// Indices into `splats`, in sorted order, for every tile.
    pub tiles: Vec<Vec<u32>>,
    /// Primitives skipped because their query covariance was degenerate.
    pub degenerate: Vec<usize>,
}

/// Slice, project, sort and bin every primitive of `scene`.
pub fn prepare(scene: &Scene, cam: &Camera, query: &Query, cfg: &RenderConfig) -> Result<Prepared> {
    if query.len() + 3 != scene.n_dims {
        return Err(UbsError::Precondition(format!(
            "query has {} components, scene has N = {}",
            query.len(),
            scene.n_dims
        )));
    }
    let sliced: Vec<Result<ConditionedSplat>> =
        scene.primitives.par_iter().map(|p| slice_with(p, query, cfg.slice)).collect();
    let mut degenerate = Vec::new();
    let mut pairs = Vec::new();
    for (id, r) in sliced.into_iter().enumerate() {
        match r {
            Ok(cs) => {
                if let Some(s2) = project_with(&cs, cam, cfg, id) {
                    pairs.push((s2, cs));
                }
            }
            Err(UbsError::Degenerate(msg)) => {
                log::warn!("primitive {id} skipped: {msg}");
                degenerate.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    pairs.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.id.cmp(&b.0.id)));
    let (splats, conditioned): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();

    let grid = TileGrid::new(cam.width, cam.height, cfg.tile_size);
    let mut tiles = vec![Vec::new(); grid.len()];
    let ts = grid.tile_size as f64;
    for (i, s) in splats.iter().enumerate() {
        // Pixel centers sit at integer + 0.5.
        let [x0, y0, x1, y1] = s.aabb;
        if x1 < 0.5 || y1 < 0.5 || x0 > cam.width as f64 - 0.5 || y0 > cam.height as f64 - 0.5 {
            continue;
        }
        let tx0 = (((x0 - 0.5) / ts).floor().max(0.0)) as usize;
        let ty0 = (((y0 - 0.5) / ts).floor().max(0.0)) as usize;
        let tx1 = (((x1 - 0.5) / ts).floor() as usize).min(grid.tiles_x - 1);
        let ty1 = (((y1 - 0.5) / ts).floor() as usize).min(grid.tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * grid.tiles_x + tx].push(i as u32);
            }
        }
    }
    Ok(Prepared {
        width: cam.width,
        height: cam.height,
        background: scene.background,
        splats,
        conditioned,
        grid,
        tiles,
        degenerate,
    })
}

fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Composite every tile in parallel and assemble the image in tile order.
fn for_each_pixel<T: Send>(prep: &Prepared, f: impl Fn(&[&Splat2D], usize, usize) -> T + Sync) -> Vec<Vec<(usize, usize, T)>> {
    (0..prep.grid.len())
        .into_par_iter()
        .map(|t| {
            let list: Vec<&Splat2D> = prep.tiles[t].iter().map(|&i| &prep.splats[i as usize]).collect();
            let (xs, ys) = prep.grid.pixels(t, prep.width, prep.height);
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    out.push((x, y, f(&list, x, y)));
                }
            }
            out
        })
        .collect()
}

pub(crate) fn trace_prepared(prep: &Prepared, cfg: &RenderConfig) -> Vec<PixelTrace> {
    let mut traces = vec![PixelTrace { color: prep.background, transmittance: 1.0, visited: 0 }; prep.width * prep.height];
    for tile in for_each_pixel(prep, |list, x, y| {
        composite_pixel(list.iter().copied(), pixel_center(x, y), prep.background, cfg)
    }) {
        for (x, y, tr) in tile {
            traces[y * prep.width + x] = tr;
        }
    }
    traces
}

/// Render a prepared view.
pub fn render_prepared(prep: &Prepared, cfg: &RenderConfig) -> ImageBuffer {
    let traces = trace_prepared(prep, cfg);
    let mut img = ImageBuffer::new(prep.width, prep.height);
    for (px, tr) in img.data.iter_mut().zip(&traces) {
        *px = tr.color;
    }
    img
}

/// Render `scene` from `cam` at `query` with default constants.
pub fn render(scene: &Scene, cam: &Camera, query: &Query) -> Result<ImageBuffer> {
    render_with(scene, cam, query, &RenderConfig::default())
}

pub fn render_with(scene: &Scene, cam: &Camera, query: &Query, cfg: &RenderConfig) -> Result<ImageBuffer> {
    Ok(render_prepared(&prepare(scene, cam, query, cfg)?, cfg))
}

/// Screen-space gradients for every entry of `prep.splats`, given `dl/dimage`.
/// Tiles are processed in parallel and reduced in tile order.
pub(crate) fn backward_prepared(
    prep: &Prepared,
    cfg: &RenderConfig,
    traces: &[PixelTrace],
    g_image: &ImageBuffer,
) -> Vec<Splat2DGrad> {
    let per_tile: Vec<Vec<Splat2DGrad>> = (0..prep.grid.len())
        .into_par_iter()
        .map(|t| {
            let idx = &prep.tiles[t];
            let list: Vec<&Splat2D> = idx.iter().map(|&i| &prep.splats[i as usize]).collect();
            let mut grads = vec![Splat2DGrad::default(); list.len()];
            let (xs, ys) = prep.grid.pixels(t, prep.width, prep.height);
            for y in ys {
                for x in xs.clone() {
                    let g = g_image.get(x, y);
                    if g == [0.0; 3] {
                        continue;
                    }
                    let tr = &traces[y * prep.width + x];
                    composite_pixel_adjoint(&list, pixel_center(x, y), prep.background, cfg, tr, g, &mut grads);
                }
            }
            grads
        })
        .collect();
    let mut out = vec![Splat2DGrad::default(); prep.splats.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (k, g) in grads.iter().enumerate() {
            out[prep.tiles[t][k] as usize].add(g);
        }
    }
    out
}

/// Per-primitive scalar shown by [`render_decomposition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DecompositionChannel {
    /// Spatial shape `b_x`.
    Bx,
    /// Mean of the direction shape parameters.
    Bd,
    /// Temporal shape `b_t` (N = 7 only).
    Bt,
    /// Activated base opacity.
    Opacity,
}

impl DecompositionChannel {
    pub const ALL: [DecompositionChannel; 4] = [Self::Bx, Self::Bd, Self::Bt, Self::Opacity];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bx => "b_x",
            Self::Bd => "b_d",
            Self::Bt => "b_t",
            Self::Opacity => "opacity",
        }
    }

    pub fn available(self, n_dims: usize) -> bool {
        match self {
            Self::Bx | Self::Opacity => true,
            Self::Bd => n_dims >= 6,
            Self::Bt => n_dims == 7,
        }
    }

    /// The channel value of a primitive, mapped to `[0, 1]`.
    fn value(self, scene: &Scene, id: usize) -> f64 {
        let p = &scene.primitives[id];
        let unit = |b: f64| ((b + 5.0) / 10.0).clamp(0.0, 1.0);
        match self {
            Self::Bx => unit(p.shape.b_x),
            Self::Bd => {
                let dirs = if scene.n_dims == 7 { &p.shape.b_q[1..] } else { &p.shape.b_q[..] };
                unit(dirs.iter().sum::<f64>() / dirs.len() as f64)
            }
            Self::Bt => unit(p.shape.b_q[0]),
            Self::Opacity => p.opacity(),
        }
    }
}

impl FromStr for DecompositionChannel {
    type Err = UbsError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UbsError::Usage(format!("unknown decomposition channel '{s}' (b_x, b_d, b_t, opacity)")))
    }
}

const COLORMAP: [[f64; 3]; 5] = [
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
];

/// Piecewise-linear perceptual colormap on `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let s = v * (COLORMAP.len() - 1) as f64;
    let i = (s.floor() as usize).min(COLORMAP.len() - 2);
    let f = s - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

/// Heatmap of a per-primitive scalar, composited with the render weights and
/// normalized by accumulated alpha. Pixels with no coverage show the background.
pub fn render_decomposition(
    scene: &Scene,
    cam: &Camera,
    query: &Query,
    channel: DecompositionChannel,
    cfg: &RenderConfig,
) -> Result<ImageBuffer> {
    if !channel.available(scene.n_dims) {
        return Err(UbsError::Usage(format!(
            "channel {} is not available for N = {}",
            channel.name(),
            scene.n_dims
        )));
    }
    let prep = prepare(scene, cam, query, cfg)?;
    let mut img = ImageBuffer::filled(prep.width, prep.height, prep.background);
    for tile in for_each_pixel(&prep, |list, x, y| {
        let p = pixel_center(x, y);
        let mut t = 1.0;
        let (mut acc, mut weight) = (0.0, 0.0);
        for s in list {
            let a = splat_alpha(s, p, cfg);
            if a <= 0.0 {
                continue;
            }
            acc += a * t * channel.value(scene, s.id);
            weight += a * t;
            t *= 1.0 - a;
            if t < cfg.min_transmittance {
                break;
            }
        }
        (weight > 0.0).then(|| colormap(acc / weight))
    }) {
        for (x, y, c) in tile {
            if let Some(c) = c {
                img.set(x, y, c);
            }
        }
    }
    Ok(img)
}
