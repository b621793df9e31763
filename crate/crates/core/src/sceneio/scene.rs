use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::betakernel::ShapeParams;
use crate::covparam::{covariance_param_count, CovFactors};
use crate::error::{Result, UbsError};

/// One N-dimensional Beta primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub mu_x: [f64; 3],
    /// Non-spatial mean; `[t, d_x, d_y, d_z]` for N = 7, `[d_x, d_y, d_z]` for N = 6.
    pub mu_q: Vec<f64>,
    pub cov: CovFactors,
    pub shape: ShapeParams,
    /// Opacity logit.
    pub opacity_raw: f64,
    pub color: [f64; 3],
}

/// Named slots of the flat parameter vector, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamField {
    MuX,
    MuQ,
    Rot,
    LogScaleX,
    LQx,
    LQq,
    LogScaleQ,
    BX,
    BQ,
    OpacityRaw,
    Color,
}

/// Learning-rate groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Position,
    Opacity,
    Scale,
    Other,
}

impl ParamField {
    pub const ALL: [ParamField; 11] = [
        ParamField::MuX,
        ParamField::MuQ,
        ParamField::Rot,
        ParamField::LogScaleX,
        ParamField::LQx,
        ParamField::LQq,
        ParamField::LogScaleQ,
        ParamField::BX,
        ParamField::BQ,
        ParamField::OpacityRaw,
        ParamField::Color,
    ];

    pub fn len(self, c: usize) -> usize {
        match self {
            ParamField::MuX | ParamField::Rot | ParamField::LogScaleX | ParamField::Color => 3,
            ParamField::MuQ | ParamField::LogScaleQ | ParamField::BQ => c,
            ParamField::LQx => 3 * c,
            ParamField::LQq => c * c.saturating_sub(1) / 2,
            ParamField::BX | ParamField::OpacityRaw => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamField::MuX => "mu_x",
            ParamField::MuQ => "mu_q",
            ParamField::Rot => "rot",
            ParamField::LogScaleX => "log_scale_x",
            ParamField::LQx => "l_qx",
            ParamField::LQq => "l_qq",
            ParamField::LogScaleQ => "log_scale_q",
            ParamField::BX => "b_x",
            ParamField::BQ => "b_q",
            ParamField::OpacityRaw => "opacity_raw",
            ParamField::Color => "color",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            ParamField::MuX => ParamGroup::Position,
            ParamField::OpacityRaw => ParamGroup::Opacity,
            ParamField::LogScaleX | ParamField::LogScaleQ => ParamGroup::Scale,
            _ => ParamGroup::Other,
        }
    }

    pub fn is_shape(self) -> bool {
        matches!(self, ParamField::BX | ParamField::BQ)
    }

    /// Offset range of this field in the flat vector of a primitive with `c` query dims.
    pub fn range(self, c: usize) -> Range<usize> {
        let mut start = 0;
        for f in Self::ALL {
            let len = f.len(c);
            if f == self {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }
}

/// Length of the flat parameter vector for `c` query dimensions.
pub fn param_len(c: usize) -> usize {
    ParamField::ALL.iter().map(|f| f.len(c)).sum()
}

/// Field owning flat index `idx`, and the index within that field.
pub fn field_of(c: usize, idx: usize) -> (ParamField, usize) {
    let mut start = 0;
    for f in ParamField::ALL {
        let len = f.len(c);
        if idx < start + len {
            return (f, idx - start);
        }
        start += len;
    }
    panic!("parameter index {idx} out of range for C = {c}");
}

/// Per-primitive parameter accounting (geometry + color).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub position: usize,
    pub query_mean: usize,
    pub covariance: usize,
    pub beta_shapes: usize,
    pub opacity: usize,
    pub color: usize,
}

impl ParamReport {
    pub fn geometry(&self) -> usize {
        self.position + self.query_mean + self.covariance + self.beta_shapes + self.opacity
    }

    pub fn total(&self) -> usize {
        self.geometry() + self.color
    }
}

/// Parameter accounting for an `n_dims`-dimensional primitive.
pub fn parameter_report(n_dims: usize) -> Result<ParamReport> {
    let c = query_dims_for(n_dims)?;
    let report = ParamReport {
        position: 3,
        query_mean: c,
        covariance: covariance_param_count(c),
        beta_shapes: 1 + c,
        opacity: 1,
        color: 3,
    };
    debug_assert_eq!(report.total(), param_len(c));
    Ok(report)
}

/// Number of non-spatial dimensions for a supported dimensionality.
pub fn query_dims_for(n_dims: usize) -> Result<usize> {
    match n_dims {
        3 | 6 | 7 => Ok(n_dims - 3),
        _ => Err(UbsError::Precondition(format!("unsupported dimensionality N = {n_dims}"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logit of an opacity in `(0, 1)`.
pub fn opacity_logit(o: f64) -> f64 {
    let o = o.clamp(1e-12, 1.0 - 1e-12);
    (o / (1.0 - o)).ln()
}

impl Primitive {
    /// A unit primitive at the origin in the Gaussian limit with opacity 0.5.
    pub fn unit(query_dims: usize) -> Self {
        Self {
            mu_x: [0.0; 3],
            mu_q: vec![0.0; query_dims],
            cov: CovFactors::identity(query_dims),
            shape: ShapeParams::gaussian_limit(query_dims),
            opacity_raw: 0.0,
            color: [0.5; 3],
        }
    }

    pub fn query_dims(&self) -> usize {
        self.mu_q.len()
    }

    /// Activated opacity `sigmoid(opacity_raw)`.
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn set_opacity(&mut self, o: f64) {
        self.opacity_raw = opacity_logit(o);
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.query_dims();
        if self.shape.b_q.len() != c || self.cov.query_dims() != c {
            return Err(UbsError::Precondition("primitive field shapes disagree".into()));
        }
        self.cov.validate()?;
        if !self.to_flat().iter().all(|v| v.is_finite()) {
            return Err(UbsError::Precondition("non-finite primitive parameter".into()));
        }
        Ok(())
    }

    /// Append the parameters in storage order.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.mu_x);
        out.extend_from_slice(&self.mu_q);
        out.extend_from_slice(&self.cov.rot);
        out.extend_from_slice(&self.cov.log_scale_x);
        out.extend_from_slice(&self.cov.l_qx);
        out.extend_from_slice(&self.cov.l_qq);
        out.extend_from_slice(&self.cov.log_scale_q);
        out.push(self.shape.b_x);
        out.extend_from_slice(&self.shape.b_q);
        out.push(self.opacity_raw);
        out.extend_from_slice(&self.color);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(param_len(self.query_dims()));
        self.write_flat(&mut v);
        v
    }

    /// Overwrite every parameter from a flat vector of matching length.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let c = self.query_dims();
        assert_eq!(flat.len(), param_len(c));
        let get = |f: ParamField| &flat[f.range(c)];
        self.mu_x.copy_from_slice(get(ParamField::MuX));
        self.mu_q.copy_from_slice(get(ParamField::MuQ));
        self.cov.rot.copy_from_slice(get(ParamField::Rot));
        self.cov.log_scale_x.copy_from_slice(get(ParamField::LogScaleX));
        self.cov.l_qx.copy_from_slice(get(ParamField::LQx));
        self.cov.l_qq.copy_from_slice(get(ParamField::LQq));
        self.cov.log_scale_q.copy_from_slice(get(ParamField::LogScaleQ));
        self.shape.b_x = get(ParamField::BX)[0];
        self.shape.b_q.copy_from_slice(get(ParamField::BQ));
        self.opacity_raw = get(ParamField::OpacityRaw)[0];
        self.color.copy_from_slice(get(ParamField::Color));
    }

    pub fn from_flat(query_dims: usize, flat: &[f64]) -> Self {
        let mut p = Self::unit(query_dims);
        p.set_flat(flat);
        p
    }
}

/// A collection of primitives sharing one dimensionality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub n_dims: usize,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl Scene {
    pub fn new(n_dims: usize, background: [f64; 3]) -> Result<Self> {
        query_dims_for(n_dims)?;
        Ok(Self { n_dims, primitives: Vec::new(), background })
    }

    pub fn query_dims(&self) -> usize {
        self.n_dims - 3
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let c = query_dims_for(self.n_dims)?;
        for (i, p) in self.primitives.iter().enumerate() {
            if p.query_dims() != c {
                return Err(UbsError::Precondition(format!(
                    "primitive {i} has {} query dims, scene expects {c}",
                    p.query_dims()
                )));
            }
            p.validate().map_err(|e| UbsError::Precondition(format!("primitive {i}: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_report_matches_table() {
        let r6 = parameter_report(6).unwrap();
        assert_eq!((r6.geometry(), r6.color, r6.total()), (32, 3, 35));
        assert_eq!(r6.covariance, 21);
        assert_eq!(r6.beta_shapes, 4);
        let r7 = parameter_report(7).unwrap();
        assert_eq!((r7.geometry(), r7.color, r7.total()), (41, 3, 44));
        assert_eq!(r7.covariance, 28);
        assert_eq!(r7.beta_shapes, 5);
        assert_eq!(parameter_report(3).unwrap().total(), 14);
        assert!(parameter_report(5).is_err());
    }

    #[test]
    fn flat_layout_roundtrip() {
        for c in [0, 3, 4] {
            let mut p = Primitive::unit(c);
            let n = param_len(c);
            let vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.1).collect();
            p.set_flat(&vals);
            assert_eq!(p.to_flat(), vals);
            assert_eq!(Primitive::from_flat(c, &vals), p);
            let mut covered = 0;
            for f in ParamField::ALL {
                let r = f.range(c);
                assert_eq!(r.start, covered);
                covered = r.end;
                for (k, idx) in r.enumerate() {
                    assert_eq!(field_of(c, idx), (f, k));
                }
            }
            assert_eq!(covered, n);
        }
    }

    #[test]
    fn opacity_activation() {
        let mut p = Primitive::unit(3);
        assert_eq!(p.opacity(), 0.5);
        p.set_opacity(0.75);
        assert!((p.opacity() - 0.75).abs() < 1e-15);
    }
}
