use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ubs::diff::{fd_check, FdSetup};
use ubs::optim::{evaluate, train_with, TrainConfig, TrainOptions};
use ubs::raster::{render_decomposition, DecompositionChannel};
use ubs::sceneio::{
    init_scene, load_dataset, load_scene, load_views, make_synthetic, save_scene, scene_to_json, write_synthetic, Bounds, InitConfig,
    Split, SynthKind,
};
use ubs::slicer::{Query, SliceConfig};
use ubs::{render_with, Camera, RenderConfig, UbsError};

use crate::args::{CameraArgs, Cli, Command, KindArg};

/// A fully resolved command. Serialized next to every output; `ubs rerun`
/// executes it again unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Job {
    Synth {
        kind: String,
        seed: u64,
        out: PathBuf,
    },
    Train {
        data: PathBuf,
        out: PathBuf,
        init: Option<PathBuf>,
        n_dims: usize,
        count: usize,
        bounds: f64,
        normalize_dirs: bool,
        checkpoint_every: usize,
        config: TrainConfig,
    },
    Render {
        scene: PathBuf,
        out: PathBuf,
        camera: CameraSpec,
    },
    Eval {
        scene: PathBuf,
        data: PathBuf,
        split: Split,
        out: Option<PathBuf>,
        symmetric_gate: bool,
    },
    Decompose {
        scene: PathBuf,
        out: PathBuf,
        channels: Vec<String>,
        camera: CameraSpec,
    },
    CheckGrad {
        scene: PathBuf,
        data: PathBuf,
        split: Split,
        views: usize,
        primitives: usize,
        eps: f64,
        tol: f64,
        loss_scale: Option<f64>,
        out: Option<PathBuf>,
    },
    ExportJson {
        scene: PathBuf,
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub data: Option<PathBuf>,
    pub frame: usize,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_x: f64,
    pub width: usize,
    pub height: usize,
    pub time: Option<f64>,
    pub dir: Option<[f64; 3]>,
    pub symmetric_gate: bool,
}

impl From<CameraArgs> for CameraSpec {
    fn from(a: CameraArgs) -> Self {
        Self {
            data: a.data,
            frame: a.frame,
            eye: a.eye,
            target: a.target,
            up: a.up,
            fov_x: a.fov_x,
            width: a.width,
            height: a.height,
            time: a.time,
            dir: a.dir,
            symmetric_gate: a.symmetric_gate,
        }
    }
}

impl CameraSpec {
    fn camera(&self) -> Result<Camera> {
        match &self.data {
            Some(path) => {
                let entries = load_dataset(path)?;
                let n = entries.len();
                let e = entries.into_iter().nth(self.frame).ok_or_else(|| {
                    UbsError::Usage(format!("frame {} out of range, {} has {n} frames", self.frame, path.display()))
                })?;
                Ok(e.camera)
            }
            None => Ok(Camera::look_at(self.eye, self.target, self.up, self.fov_x, self.width, self.height)?),
        }
    }

    fn query(&self, n_dims: usize, cam: &Camera) -> Result<Query> {
        if n_dims == 7 && self.time.is_none() {
            bail!(UbsError::Usage("a 7-D scene needs --time".into()));
        }
        let time = if n_dims == 7 { self.time } else { None };
        Ok(Query::for_dims(n_dims, time, Some(self.dir.unwrap_or(cam.view_direction())))?)
    }

    fn render_config(&self) -> RenderConfig {
        render_config(self.symmetric_gate)
    }
}

fn render_config(symmetric_gate: bool) -> RenderConfig {
    RenderConfig { slice: SliceConfig { symmetric_gate }, ..RenderConfig::default() }
}

fn kind_name(k: KindArg) -> &'static str {
    match k {
        KindArg::Static => "static",
        KindArg::Viewdep => "viewdep",
        KindArg::Dynamic => "dynamic",
    }
}

/// Turn parsed arguments into a [`Job`], reading any config file they name.
pub fn resolve(cli: Cli) -> Result<Job> {
    let seed = cli.seed.unwrap_or(0);
    Ok(match cli.command {
        Command::Synth(a) => Job::Synth { kind: kind_name(a.kind).into(), seed, out: a.out },
        Command::Train(a) => {
            let mut config = match &a.config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(|e| UbsError::Usage(format!("{}: {e}", p.display())))?
                }
                None => TrainConfig::default(),
            };
            a.flags.apply(&mut config);
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            config.validate()?;
            let n_dims = match (a.n_dims, &a.init) {
                (Some(n), _) => n,
                (None, Some(p)) => load_scene(p)?.n_dims,
                (None, None) => {
                    if load_dataset(&a.data)?.iter().any(|e| e.time.is_some()) {
                        7
                    } else {
                        6
                    }
                }
            };
            Job::Train {
                data: a.data,
                out: a.out,
                init: a.init,
                n_dims,
                count: a.count,
                bounds: a.bounds,
                normalize_dirs: a.normalize_dirs,
                checkpoint_every: a.checkpoint_every,
                config,
            }
        }
        Command::Render(a) => Job::Render { scene: a.scene, out: a.out, camera: a.camera.into() },
        Command::Eval(a) => Job::Eval { scene: a.scene, data: a.data, split: a.split.into(), out: a.out, symmetric_gate: a.symmetric_gate },
        Command::Decompose(a) => Job::Decompose { scene: a.scene, out: a.out, channels: a.channels, camera: a.camera.into() },
        Command::CheckGrad(a) => Job::CheckGrad {
            scene: a.scene,
            data: a.data,
            split: a.split.into(),
            views: a.views,
            primitives: a.primitives,
            eps: a.eps,
            tol: a.tol,
            loss_scale: a.loss_scale,
            out: a.out,
        },
        Command::ExportJson(a) => Job::ExportJson { scene: a.scene, out: a.out },
        Command::Rerun(a) => {
            let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
            serde_json::from_str(&text).map_err(|e| UbsError::Usage(format!("{}: {e}", a.config.display())))?
        }
    })
}

/// Where the resolved config goes: inside output directories, beside output files.
fn config_path(job: &Job) -> Option<PathBuf> {
    let beside = |p: &Path| {
        let mut name = p.file_name().unwrap_or_default().to_os_string();
        name.push(".config.json");
        p.with_file_name(name)
    };
    match job {
        Job::Synth { out, .. } | Job::Train { out, .. } | Job::Decompose { out, .. } => Some(out.join("config.json")),
        Job::Render { out, .. } | Job::ExportJson { out, .. } => Some(beside(out)),
        Job::Eval { out, .. } | Job::CheckGrad { out, .. } => out.as_deref().map(beside),
    }
}

fn write_config(job: &Job) -> Result<()> {
    if let Some(path) = config_path(job) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, serde_json::to_string_pretty(job)?)?;
    }
    Ok(())
}

fn emit_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn run(job: &Job) -> Result<()> {
    write_config(job)?;
    match job {
        Job::Synth { kind, seed, out } => {
            let kind: SynthKind = kind.parse()?;
            let synth = make_synthetic(kind, *seed)?;
            write_synthetic(out, &synth)?;
            log::info!("wrote {} train and {} test views to {}", synth.train.len(), synth.test.len(), out.display());
        }
        Job::Train { data, out, init, n_dims, count, bounds, normalize_dirs, checkpoint_every, config } => {
            let views = load_views(data, *n_dims, Split::Train)?;
            let scene = match init {
                Some(p) => {
                    let s = load_scene(p)?;
                    if s.n_dims != *n_dims {
                        bail!(UbsError::Usage(format!("{} has n_dims {}, expected {n_dims}", p.display(), s.n_dims)));
                    }
                    s
                }
                None => {
                    let cfg = InitConfig { normalize_dirs: *normalize_dirs };
                    init_scene(*n_dims, *count, config.seed, Bounds::cube(*bounds), cfg)?
                }
            };
            let opts = TrainOptions {
                checkpoint_dir: Some(out.clone()),
                checkpoint_every: *checkpoint_every,
                metrics_path: Some(out.join("metrics.jsonl")),
            };
            let result = train_with(scene, &views, config, &opts)?;
            save_scene(&result.scene, out.join("scene.ubs"))?;
            log::info!("wrote {}", out.join("scene.ubs").display());
        }
        Job::Render { scene, out, camera } => {
            let scene = load_scene(scene)?;
            let cam = camera.camera()?;
            let query = camera.query(scene.n_dims, &cam)?;
            let img = render_with(&scene, &cam, &query, &camera.render_config())?;
            if out.extension().is_some_and(|e| e == "ubsf") {
                img.save_planar(out)?;
            } else {
                img.save_png(out)?;
            }
        }
        Job::Eval { scene, data, split, out, symmetric_gate } => {
            let scene = load_scene(scene)?;
            let views = load_views(data, scene.n_dims, *split)?;
            let report = evaluate(&scene, &views, &render_config(*symmetric_gate))?;
            emit_json(&report, out.as_deref())?;
        }
        Job::Decompose { scene, out, channels, camera } => {
            let scene = load_scene(scene)?;
            let cam = camera.camera()?;
            let query = camera.query(scene.n_dims, &cam)?;
            let chosen: Vec<DecompositionChannel> = if channels.is_empty() {
                [DecompositionChannel::Bx, DecompositionChannel::Bd, DecompositionChannel::Bt, DecompositionChannel::Opacity]
                    .into_iter()
                    .filter(|c| c.available(scene.n_dims))
                    .collect()
            } else {
                channels.iter().map(|c| c.parse()).collect::<ubs::Result<_>>()?
            };
            fs::create_dir_all(out)?;
            for ch in chosen {
                let img = render_decomposition(&scene, &cam, &query, ch, &camera.render_config())?;
                img.save_png(out.join(format!("{}.png", ch.name())))?;
            }
        }
        Job::CheckGrad { scene, data, split, views, primitives, eps, tol, loss_scale, out } => {
            let mut scene = load_scene(scene)?;
            if *primitives > 0 {
                scene.primitives.truncate(*primitives);
            }
            let all = load_views(data, scene.n_dims, *split)?;
            if all.is_empty() {
                bail!(UbsError::Usage(format!("{} has no {split:?} views", data.display())));
            }
            let picked: Vec<_> = all.iter().take((*views).max(1)).collect();
            let pixels = (picked[0].target.width * picked[0].target.height * 3) as f64;
            let mut setup = FdSetup { views: picked, loss: Default::default(), render: RenderConfig::default() };
            setup.loss.scale = loss_scale.unwrap_or(pixels);
            let report = fd_check(&scene, &setup, *eps, *tol)?;
            log::info!("{} passed, {} failed, {} excluded", report.passed, report.failed, report.excluded);
            emit_json(&report, out.as_deref())?;
        }
        Job::ExportJson { scene, out } => {
            fs::write(out, scene_to_json(&load_scene(scene)?)?)?;
        }
    }
    Ok(())
}
