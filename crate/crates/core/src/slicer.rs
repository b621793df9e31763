//! Beta-modulated conditional slicing.
//!
//! An N-dimensional primitive is reduced to a 3D splat at a query `q`:
//!
//! ```text
//! mu_{x|q}    = mu_x + S_xq S_q^-1 Diag(beta_q) (q - mu_q)
//! S_{x|q}     = S_x  - S_xq S_q^-1 Diag(beta_q) S_qx
//! d_raw       = S_q^-1 (q - mu_q)
//! d           = max(tanh(d_raw / 2), 0)
//! o(q)        = o prod_i (1 - d_i)^(4 beta_q_i)
//! ```
//!
//! With `beta_q > 1` the covariance update can over-subtract, so the result is
//! symmetrized and its spectrum floored at `1e-8 * tr(S_x) / 3`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::covparam::{covariance_blocks, tri_index, CovBlocks};
use crate::diff::TapeGradient;
use crate::error::{Result, UbsError};
use crate::linalg::{eigen_floor, eigen_floor_adjoint, spd_inverse};
use crate::sceneio::{ParamField, Primitive};

/// Relative PSD floor applied to conditioned covariances.
pub const PSD_FLOOR_REL: f64 = 1e-8;

/// Tolerance on the unit norm of query view directions.
pub const DIRECTION_NORM_TOL: f64 = 1e-6;

/// Non-spatial coordinates at which a frame is rendered.
///
/// N = 3: empty; N = 6: unit view direction; N = 7: normalized time followed
/// by the unit view direction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Query {
    dims: Vec<f64>,
}

impl Query {
    pub fn empty() -> Self {
        Self { dims: Vec::new() }
    }

    /// View-direction query; the direction is normalized here.
    pub fn view(dir: [f64; 3]) -> Result<Self> {
        Ok(Self { dims: normalize_dir(dir)?.to_vec() })
    }

    /// Time + view-direction query.
    pub fn time_view(t: f64, dir: [f64; 3]) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(UbsError::Precondition(format!("query time {t} outside [0, 1]")));
        }
        let d = normalize_dir(dir)?;
        Ok(Self { dims: vec![t, d[0], d[1], d[2]] })
    }

    /// Build the query appropriate for an `n_dims` scene.
    pub fn for_dims(n_dims: usize, time: Option<f64>, dir: Option<[f64; 3]>) -> Result<Self> {
        let need = |what: &str| UbsError::Usage(format!("N = {n_dims} requires a {what} query component"));
        match n_dims {
            3 => Ok(Self::empty()),
            6 => Self::view(dir.ok_or_else(|| need("view direction"))?),
            7 => Self::time_view(time.ok_or_else(|| need("time"))?, dir.ok_or_else(|| need("view direction"))?),
            _ => Err(UbsError::Precondition(format!("unsupported dimensionality N = {n_dims}"))),
        }
    }

    /// Unvalidated query with arbitrary components.
    pub fn from_raw(dims: Vec<f64>) -> Self {
        Self { dims }
    }

    /// Check the direction/time invariants for an `n_dims` scene.
    pub fn validate(&self, n_dims: usize) -> Result<()> {
        if self.dims.len() + 3 != n_dims {
            return Err(UbsError::Precondition(format!(
                "query has {} components, scene has N = {n_dims}",
                self.dims.len()
            )));
        }
        let dir = match n_dims {
            6 => &self.dims[..],
            7 => {
                if !(0.0..=1.0).contains(&self.dims[0]) {
                    return Err(UbsError::Precondition("query time outside [0, 1]".into()));
                }
                &self.dims[1..]
            }
            _ => return Ok(()),
        };
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > DIRECTION_NORM_TOL {
            return Err(UbsError::Precondition(format!("query direction norm {norm} is not 1")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[f64] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }
}

fn normalize_dir(dir: [f64; 3]) -> Result<[f64; 3]> {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(UbsError::Precondition("view direction must be non-zero and finite".into()));
    }
    Ok(dir.map(|v| v / n))
}

/// A renderable 3D splat obtained by slicing a primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSplat {
    pub mean3: Vector3<f64>,
    pub cov3: Matrix3<f64>,
    pub beta_x: f64,
    pub gated_opacity: f64,
    pub color: [f64; 3],
    /// Whether the PSD floor altered the conditioned covariance.
    pub floored: bool,
}

/// Upstream gradient with respect to a [`ConditionedSplat`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub mean3: Vector3<f64>,
    pub cov3: Matrix3<f64>,
    pub beta_x: f64,
    pub gated_opacity: f64,
    pub color: [f64; 3],
}

impl Default for SplatGrad {
    fn default() -> Self {
        Self { mean3: Vector3::zeros(), cov3: Matrix3::zeros(), beta_x: 0.0, gated_opacity: 0.0, color: [0.0; 3] }
    }
}

/// Slicing options.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SliceConfig {
    /// Use `|tanh(d_raw / 2)|` in the gate instead of the one-sided clamp.
    pub symmetric_gate: bool,
}

fn to_dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn mat3_from(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

fn check_dims(blocks: &CovBlocks, mu_q: &[f64], beta_q: &[f64], query: &Query) -> Result<()> {
    let c = blocks.query_dims();
    if mu_q.len() != c || beta_q.len() != c || query.len() != c {
        return Err(UbsError::Precondition(format!("conditioning inputs disagree with C = {c}")));
    }
    if beta_q.iter().any(|b| !(*b > 0.0)) {
        return Err(UbsError::Precondition("beta_q must be componentwise positive".into()));
    }
    Ok(())
}

/// Beta-modulated conditional mean.
pub fn conditional_mean(blocks: &CovBlocks, mu_x: &[f64; 3], mu_q: &[f64], beta_q: &[f64], query: &Query) -> Result<Vector3<f64>> {
    check_dims(blocks, mu_q, beta_q, query)?;
    let mu = Vector3::from(*mu_x);
    if blocks.query_dims() == 0 {
        return Ok(mu);
    }
    let h = spd_inverse(&blocks.sigma_q)?;
    let u = DVector::from_fn(mu_q.len(), |i, _| beta_q[i] * (query.dims[i] - mu_q[i]));
    let shift = &blocks.sigma_xq * (h * u);
    Ok(mu + Vector3::new(shift[0], shift[1], shift[2]))
}

/// Beta-modulated conditional covariance before PSD flooring (symmetrized).
pub fn conditional_cov_raw(blocks: &CovBlocks, beta_q: &[f64]) -> Result<Matrix3<f64>> {
    let c = blocks.query_dims();
    if beta_q.len() != c {
        return Err(UbsError::Precondition(format!("beta_q length {} != C = {c}", beta_q.len())));
    }
    if c == 0 {
        return Ok(symmetrize(&blocks.sigma_x));
    }
    let h = spd_inverse(&blocks.sigma_q)?;
    let hd = h * DMatrix::from_diagonal(&to_dvec(beta_q));
    let m = blocks.sigma_x - mat3_from(&(&blocks.sigma_xq * hd * blocks.sigma_xq.transpose()));
    Ok(symmetrize(&m))
}

/// Beta-modulated conditional covariance, symmetrized and floored.
pub fn conditional_cov(blocks: &CovBlocks, beta_q: &[f64]) -> Result<Matrix3<f64>> {
    let raw = conditional_cov_raw(blocks, beta_q)?;
    let floored = eigen_floor(&raw, psd_floor(&blocks.sigma_x));
    if floored.triggered {
        log::debug!("conditioned covariance floored");
    }
    Ok(floored.value)
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn psd_floor(sigma_x: &Matrix3<f64>) -> f64 {
    PSD_FLOOR_REL * sigma_x.trace() / 3.0
}

/// `(d_i, ln(1 - d_i), d ln(1 - d_i) / d d_raw_i)` for one gate component.
fn gate_component(x: f64, symmetric: bool) -> (f64, f64, f64) {
    let (ax, sign) = if symmetric { (x.abs(), x.signum()) } else { (x, 1.0) };
    if ax <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let d = (0.5 * ax).tanh();
    // 1 - tanh(x/2) = 2 / (1 + e^x); stable for large x.
    let softplus = ax + (-ax).exp().ln_1p();
    let log_one_minus = std::f64::consts::LN_2 - softplus;
    (d, log_one_minus, -0.5 * (1.0 + d) * sign)
}

/// Product-form opacity gate with the one-sided clamp.
pub fn opacity_gate(sigma_q: &DMatrix<f64>, mu_q: &[f64], beta_q: &[f64], base_o: f64, query: &Query) -> Result<f64> {
    opacity_gate_with(sigma_q, mu_q, beta_q, base_o, query, SliceConfig::default())
}

pub fn opacity_gate_with(sigma_q: &DMatrix<f64>, mu_q: &[f64], beta_q: &[f64], base_o: f64, query: &Query, cfg: SliceConfig) -> Result<f64> {
    let c = sigma_q.nrows();
    if mu_q.len() != c || beta_q.len() != c || query.len() != c {
        return Err(UbsError::Precondition(format!("gate inputs disagree with C = {c}")));
    }
    if !(0.0..=1.0).contains(&base_o) {
        return Err(UbsError::Precondition(format!("base opacity {base_o} outside [0, 1]")));
    }
    if c == 0 {
        return Ok(base_o);
    }
    let h = spd_inverse(sigma_q)?;
    let delta = DVector::from_fn(c, |i, _| query.dims[i] - mu_q[i]);
    let d_raw = h * delta;
    let log_gate: f64 = (0..c)
        .map(|i| 4.0 * beta_q[i] * gate_component(d_raw[i], cfg.symmetric_gate).1)
        .sum();
    Ok(base_o * log_gate.exp())
}

/// Intermediates of one slice, shared by the forward pass and its adjoint.
struct SliceState {
    lx: Matrix3<f64>,
    lqx: DMatrix<f64>,
    lq: DMatrix<f64>,
    blocks: CovBlocks,
    h: DMatrix<f64>,
    beta_q: Vec<f64>,
    delta: DVector<f64>,
    w: DVector<f64>,
    z: DMatrix<f64>,
    cov_sym: Matrix3<f64>,
    floor: f64,
    gate_terms: Vec<(f64, f64, f64)>,
    gate: f64,
}

impl SliceState {
    fn new(prim: &Primitive, query: &Query, cfg: SliceConfig) -> Result<Self> {
        let c = prim.query_dims();
        if query.len() != c {
            return Err(UbsError::Precondition(format!(
                "query has {} components, primitive has C = {c}",
                query.len()
            )));
        }
        let blocks = covariance_blocks(&prim.cov)?;
        let h = spd_inverse(&blocks.sigma_q)?;
        let beta_q = prim.shape.beta_q();
        let delta = DVector::from_fn(c, |i, _| query.dims[i] - prim.mu_q[i]);
        let u = DVector::from_fn(c, |i, _| beta_q[i] * delta[i]);
        let w = &h * u;
        let hd = &h * DMatrix::from_diagonal(&to_dvec(&beta_q));
        let z = &blocks.sigma_xq * hd;
        let m = if c == 0 { blocks.sigma_x } else { blocks.sigma_x - mat3_from(&(&z * blocks.sigma_xq.transpose())) };
        let d_raw = &h * &delta;
        let gate_terms: Vec<_> = (0..c).map(|i| gate_component(d_raw[i], cfg.symmetric_gate)).collect();
        let log_gate: f64 = (0..c).map(|i| 4.0 * beta_q[i] * gate_terms[i].1).sum();
        let floor = psd_floor(&blocks.sigma_x);
        Ok(Self {
            lx: prim.cov.spatial_factor(),
            lqx: prim.cov.cross_factor(),
            lq: prim.cov.query_factor(),
            blocks,
            h,
            beta_q,
            delta,
            w,
            z,
            cov_sym: symmetrize(&m),
            floor,
            gate_terms,
            gate: log_gate.exp(),
        })
    }

    fn mean(&self, prim: &Primitive) -> Vector3<f64> {
        let mut mean = Vector3::from(prim.mu_x);
        if !self.beta_q.is_empty() {
            let shift = &self.blocks.sigma_xq * &self.w;
            mean += Vector3::new(shift[0], shift[1], shift[2]);
        }
        mean
    }
}

/// Slice `prim` at `query` with the default (one-sided) gate.
pub fn slice(prim: &Primitive, query: &Query) -> Result<ConditionedSplat> {
    slice_with(prim, query, SliceConfig::default())
}

pub fn slice_with(prim: &Primitive, query: &Query, cfg: SliceConfig) -> Result<ConditionedSplat> {
    let st = SliceState::new(prim, query, cfg)?;
    let floored = eigen_floor(&st.cov_sym, st.floor);
    if floored.triggered {
        log::debug!("conditioned covariance floored");
    }
    Ok(ConditionedSplat {
        mean3: st.mean(prim),
        cov3: floored.value,
        beta_x: prim.shape.beta_x(),
        gated_opacity: prim.opacity() * st.gate,
        color: prim.color,
        floored: floored.triggered,
    })
}

/// Accumulate the gradient of a slice into `out`, given the upstream
/// gradient `g` with respect to the conditioned splat.
pub(crate) fn slice_adjoint(prim: &Primitive, query: &Query, cfg: SliceConfig, g: &SplatGrad, out: &mut TapeGradient) -> Result<()> {
    let st = SliceState::new(prim, query, cfg)?;
    let c = prim.query_dims();
    let s_x = prim.cov.scale_x();
    let s_q = prim.cov.scale_q();
    let o = prim.opacity();

    for k in 0..3 {
        out.field_mut(ParamField::Color)[k] += g.color[k];
        out.field_mut(ParamField::MuX)[k] += g.mean3[k];
    }
    out.field_mut(ParamField::BX)[0] += g.beta_x * prim.shape.beta_x();

    // PSD floor and symmetrization.
    let (g_sym, g_floor) = eigen_floor_adjoint(&st.cov_sym, st.floor, &g.cov3);
    let g_m = symmetrize(&g_sym);
    let mut g_sx = g_m + Matrix3::identity() * (g_floor * PSD_FLOOR_REL / 3.0);

    let mut g_lx = Matrix3::zeros();
    if c > 0 {
        let sxq = &st.blocks.sigma_xq;
        let g_m_dyn = DMatrix::from_fn(3, 3, |i, j| g_m[(i, j)]);
        let mut g_h = DMatrix::zeros(c, c);
        let mut g_bq = vec![0.0; c];
        let mut g_delta = DVector::zeros(c);

        // M = S_x - Z S_xq^T, Z = S_xq H D.
        let g_z = -(&g_m_dyn * sxq);
        let mut g_sxq = -(g_m_dyn.transpose() * &st.z);
        let hd = &st.h * DMatrix::from_diagonal(&to_dvec(&st.beta_q));
        g_sxq += &g_z * hd.transpose();
        let g_hd = sxq.transpose() * &g_z;
        for i in 0..c {
            for j in 0..c {
                g_h[(i, j)] += g_hd[(i, j)] * st.beta_q[j];
                g_bq[j] += st.h[(i, j)] * g_hd[(i, j)];
            }
        }

        // mean = mu_x + S_xq w, w = H u, u = beta_q * delta.
        let g_mean = DVector::from_column_slice(g.mean3.as_slice());
        g_sxq += &g_mean * st.w.transpose();
        let g_w = sxq.transpose() * &g_mean;
        let u = DVector::from_fn(c, |i, _| st.beta_q[i] * st.delta[i]);
        g_h += &g_w * u.transpose();
        let g_u = st.h.transpose() * &g_w;
        for i in 0..c {
            g_bq[i] += g_u[i] * st.delta[i];
            g_delta[i] += g_u[i] * st.beta_q[i];
        }

        // gate = prod_i exp(4 beta_i ln(1 - d_i)), d_raw = H delta.
        let g_gate_total = g.gated_opacity * o;
        out.field_mut(ParamField::OpacityRaw)[0] += g.gated_opacity * st.gate * o * (1.0 - o);
        if st.gate > 0.0 {
            let gg = g_gate_total * st.gate;
            let mut g_draw = DVector::zeros(c);
            for i in 0..c {
                let (_, log_om, dlog) = st.gate_terms[i];
                g_bq[i] += gg * 4.0 * log_om;
                g_draw[i] = gg * 4.0 * st.beta_q[i] * dlog;
            }
            g_h += &g_draw * st.delta.transpose();
            g_delta += st.h.transpose() * &g_draw;
        }

        {
            let g_muq = out.field_mut(ParamField::MuQ);
            for i in 0..c {
                g_muq[i] -= g_delta[i];
            }
        }
        {
            let g_b = out.field_mut(ParamField::BQ);
            for i in 0..c {
                g_b[i] += g_bq[i] * st.beta_q[i];
            }
        }

        // H = S_q^-1.
        let ht = st.h.transpose();
        let g_sq = -(&ht * &g_h * &ht);
        let g_sq_sym = &g_sq + g_sq.transpose();

        // Blocks from factors.
        let lx_dyn = DMatrix::from_fn(3, 3, |i, j| st.lx[(i, j)]);
        let g_lx_cross = &g_sxq * &st.lqx;
        g_lx += mat3_from(&g_lx_cross);
        let g_lqx = g_sxq.transpose() * &lx_dyn + &g_sq_sym * &st.lqx;
        let g_lq = &g_sq_sym * &st.lq;
        {
            let g_cross = out.field_mut(ParamField::LQx);
            for i in 0..c {
                for j in 0..3 {
                    g_cross[3 * i + j] += g_lqx[(i, j)];
                }
            }
        }
        {
            let g_lqq = out.field_mut(ParamField::LQq);
            for i in 0..c {
                for j in 0..i {
                    g_lqq[tri_index(i, j)] += g_lq[(i, j)];
                }
            }
        }
        {
            let g_lsq = out.field_mut(ParamField::LogScaleQ);
            for i in 0..c {
                g_lsq[i] += g_lq[(i, i)] * s_q[i];
            }
        }
    } else {
        out.field_mut(ParamField::OpacityRaw)[0] += g.gated_opacity * o * (1.0 - o);
    }

    // S_x = L_x L_x^T, L_x = R diag(s_x), R = I + A.
    g_sx = g_sx + g_sx.transpose();
    g_lx += g_sx * st.lx;
    let r = prim.cov.rotation();
    let mut g_r = Matrix3::zeros();
    {
        let g_ls = out.field_mut(ParamField::LogScaleX);
        for j in 0..3 {
            let mut gs = 0.0;
            for i in 0..3 {
                g_r[(i, j)] = g_lx[(i, j)] * s_x[j];
                gs += r[(i, j)] * g_lx[(i, j)];
            }
            g_ls[j] += gs * s_x[j];
        }
    }
    let g_rot = out.field_mut(ParamField::Rot);
    g_rot[0] += g_r[(2, 1)] - g_r[(1, 2)];
    g_rot[1] += g_r[(0, 2)] - g_r[(2, 0)];
    g_rot[2] += g_r[(1, 0)] - g_r[(0, 1)];
    Ok(())
}

/// Bit pattern of the piecewise branches taken by a slice: bit `i` for an
/// active gate component `i`, bit `C + i` for a negative one (symmetric gate),
/// and the top bit when the PSD floor fires.
pub(crate) fn branch_mask(prim: &Primitive, query: &Query, cfg: SliceConfig) -> Result<u64> {
    let st = SliceState::new(prim, query, cfg)?;
    let c = prim.query_dims();
    let d_raw = &st.h * &st.delta;
    let mut mask = 0u64;
    for i in 0..c {
        if d_raw[i] > 0.0 {
            mask |= 1 << i;
        } else if d_raw[i] < 0.0 && cfg.symmetric_gate {
            mask |= 1 << (c + i);
        }
    }
    if eigen_floor(&st.cov_sym, st.floor).triggered {
        mask |= 1 << 63;
    }
    Ok(mask)
}
