use serde::{Deserialize, Serialize};

use crate::betakernel::{SHAPE_MAX, SHAPE_MIN};
use crate::diff::TapeGradient;
use crate::sceneio::{field_of, param_len, ParamGroup, Primitive, Scene};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub other: f64,
}

impl LearningRates {
    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.position,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Scale => self.scale,
            ParamGroup::Other => self.other,
        }
    }
}

/// Adam moments, one slot per primitive parameter, with a per-primitive step
/// count so relocated primitives restart their bias correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(scene: &Scene) -> Self {
        let mut a = Self::default();
        a.resize(scene);
        a
    }

    /// Match the primitive count of `scene`; new slots start fresh.
    pub fn resize(&mut self, scene: &Scene) {
        let n = param_len(scene.query_dims());
        self.m.resize(scene.len(), vec![0.0; n]);
        self.v.resize(scene.len(), vec![0.0; n]);
        self.t.resize(scene.len(), 0);
    }

    pub fn reset(&mut self, i: usize) {
        self.m[i].iter_mut().for_each(|x| *x = 0.0);
        self.v[i].iter_mut().for_each(|x| *x = 0.0);
        self.t[i] = 0;
    }

    /// One Adam update of every primitive. Shape parameters are left alone
    /// when `freeze_shapes` is set; afterwards shapes are clamped to the
    /// valid range and colors to `[0, 1]`.
    pub fn step(&mut self, scene: &mut Scene, grads: &[TapeGradient], lr: &LearningRates, freeze_shapes: bool) {
        assert_eq!(grads.len(), scene.len(), "gradient count differs from primitive count");
        self.resize(scene);
        let c = scene.query_dims();
        let rates: Vec<(f64, bool)> = (0..param_len(c))
            .map(|idx| {
                let (f, _) = field_of(c, idx);
                (lr.for_group(f.group()), freeze_shapes && f.is_shape())
            })
            .collect();
        for (i, (p, g)) in scene.primitives.iter_mut().zip(grads).enumerate() {
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            let mut flat = p.to_flat();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, gk) in g.values().iter().enumerate() {
                let (rate, frozen) = rates[k];
                if frozen {
                    continue;
                }
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                flat[k] -= rate * mh / (vh.sqrt() + ADAM_EPS);
            }
            p.set_flat(&flat);
            project_constraints(p);
        }
    }
}

/// Clamp shapes to `[-5, 5]` and colors to `[0, 1]`.
pub fn project_constraints(p: &mut Primitive) {
    p.shape.b_x = p.shape.b_x.clamp(SHAPE_MIN, SHAPE_MAX);
    for b in p.shape.b_q.iter_mut() {
        *b = b.clamp(SHAPE_MIN, SHAPE_MAX);
    }
    for c in p.color.iter_mut() {
        *c = c.clamp(0.0, 1.0);
    }
}
