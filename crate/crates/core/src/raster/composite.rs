use nalgebra::Vector2;

use super::{RenderConfig, Splat2D, Splat2DGrad};
use crate::betakernel::beta_power;
use crate::error::{Result, UbsError};

/// 2D Beta footprint with the default support radius.
pub fn kernel2d(pixel: Vector2<f64>, splat: &Splat2D) -> f64 {
    kernel2d_with(pixel, splat, RenderConfig::default().tau2)
}

/// `(1 - m / tau2)^beta_x` for `m < tau2`, else 0, where `m` is the squared
/// Mahalanobis distance of `pixel` from the splat center.
pub fn kernel2d_with(pixel: Vector2<f64>, splat: &Splat2D, tau2: f64) -> f64 {
    let d = pixel - splat.mean2;
    let m = d.dot(&(splat.conic * d));
    if !(m < tau2) {
        return 0.0;
    }
    beta_power(m / tau2, splat.beta_x)
}

/// Result of compositing one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTrace {
    pub color: [f64; 3],
    pub transmittance: f64,
    /// Number of splats visited before the early exit (or the end of the list).
    pub visited: usize,
}

fn check_sorted(splats: &[Splat2D]) -> Result<()> {
    for w in splats.windows(2) {
        if (w[1].depth, w[1].id) < (w[0].depth, w[0].id) {
            return Err(UbsError::Precondition(format!(
                "splats not sorted front to back at primitive {}",
                w[1].id
            )));
        }
    }
    Ok(())
}

/// Front-to-back alpha compositing of `splats` at `pixel` with default constants.
pub fn composite(splats: &[Splat2D], pixel: Vector2<f64>, background: [f64; 3]) -> Result<[f64; 3]> {
    composite_with(splats, pixel, background, &RenderConfig::default())
}

pub fn composite_with(splats: &[Splat2D], pixel: Vector2<f64>, background: [f64; 3], cfg: &RenderConfig) -> Result<[f64; 3]> {
    if cfg!(debug_assertions) {
        check_sorted(splats)?;
    }
    Ok(composite_pixel(splats.iter(), pixel, background, cfg).color)
}

#[inline]
pub(crate) fn splat_alpha(splat: &Splat2D, pixel: Vector2<f64>, cfg: &RenderConfig) -> f64 {
    (splat.opacity * kernel2d_with(pixel, splat, cfg.tau2)).min(cfg.alpha_max)
}

pub(crate) fn composite_pixel<'a>(
    splats: impl Iterator<Item = &'a Splat2D>,
    pixel: Vector2<f64>,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> PixelTrace {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    let mut visited = 0;
    for s in splats {
        visited += 1;
        let a = splat_alpha(s, pixel, cfg);
        if a <= 0.0 {
            continue;
        }
        let w = a * t;
        for c in 0..3 {
            color[c] += s.color[c] * w;
        }
        t *= 1.0 - a;
        if t < cfg.min_transmittance {
            break;
        }
    }
    for c in 0..3 {
        color[c] += background[c] * t;
    }
    PixelTrace { color, transmittance: t, visited }
}

/// Accumulate the gradient of one composited pixel into `grads` (indexed
/// like `splats`), given `dl/dcolor`. Transmittance is rebuilt back to front
/// from the forward trace.
pub(crate) fn composite_pixel_adjoint(
    splats: &[&Splat2D],
    pixel: Vector2<f64>,
    background: [f64; 3],
    cfg: &RenderConfig,
    trace: &PixelTrace,
    g_color: [f64; 3],
    grads: &mut [Splat2DGrad],
) {
    let mut t = trace.transmittance;
    // Color contribution of everything behind the current splat, incl. background.
    let mut behind = [background[0] * t, background[1] * t, background[2] * t];
    for i in (0..trace.visited).rev() {
        let s = splats[i];
        let d = pixel - s.mean2;
        let qd = s.conic * d;
        let m = d.dot(&qd);
        if !(m < cfg.tau2) {
            continue;
        }
        let x = m / cfg.tau2;
        let k = beta_power(x, s.beta_x);
        let raw = s.opacity * k;
        if k <= 0.0 {
            continue;
        }
        let a = raw.min(cfg.alpha_max);
        t /= 1.0 - a;
        let w = a * t;
        let g = &mut grads[i];
        let mut g_a = 0.0;
        for c in 0..3 {
            g.color[c] += g_color[c] * w;
            g_a += g_color[c] * (s.color[c] * t - behind[c] / (1.0 - a));
            behind[c] += s.color[c] * w;
        }
        if raw >= cfg.alpha_max {
            continue;
        }
        g.opacity += g_a * k;
        let g_k = g_a * s.opacity;
        g.beta_x += g_k * k * (-x).ln_1p();
        // dk/dm = -beta / tau2 * (1 - x)^(beta - 1)
        let dk_dm = -s.beta_x / cfg.tau2 * beta_power(x, s.beta_x - 1.0);
        let g_m = g_k * dk_dm;
        g.mean2 -= qd * (2.0 * g_m);
        g.conic += d * d.transpose() * g_m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn splat(id: usize, depth: f64, mean: [f64; 2], var: f64, opacity: f64, color: [f64; 3]) -> Splat2D {
        let cov2 = Matrix2::identity() * var;
        Splat2D {
            id,
            mean2: Vector2::from(mean),
            cov2,
            conic: cov2.try_inverse().unwrap(),
            depth,
            beta_x: 4.0,
            opacity,
            color,
            aabb: [0.0; 4],
        }
    }

    #[test]
    fn kernel_center_and_boundary() {
        let s = splat(0, 1.0, [10.0, 10.0], 1.0, 1.0, [1.0; 3]);
        assert_eq!(kernel2d(Vector2::new(10.0, 10.0), &s), 1.0);
        let edge = Vector2::new(10.0 + 8f64.sqrt(), 10.0);
        assert!(kernel2d(edge, &s) < 1e-12);
        assert_eq!(kernel2d(Vector2::new(20.0, 10.0), &s), 0.0);
    }

    #[test]
    fn kernel_at_unit_mahalanobis() {
        let s = splat(0, 1.0, [0.0, 0.0], 1.0, 1.0, [1.0; 3]);
        let v = kernel2d(Vector2::new(1.0, 0.0), &s);
        assert!((v - 0.586181640625).abs() < 1e-14);
        assert!((v - (-0.5f64).exp()).abs() < 0.021);
    }

    #[test]
    fn empty_list_is_background() {
        let bg = [0.2, 0.3, 0.4];
        assert_eq!(composite(&[], Vector2::new(0.0, 0.0), bg).unwrap(), bg);
    }

    #[test]
    fn single_opaque_splat_is_clamped() {
        let s = splat(0, 1.0, [5.0, 5.0], 1.0, 1.0, [1.0, 0.0, 0.0]);
        let c = composite(&[s], Vector2::new(5.0, 5.0), [0.0; 3]).unwrap();
        assert!((c[0] - 0.999).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn occluder_order_decides_color() {
        let red = splat(0, 1.0, [0.0, 0.0], 1.0, 1.0, [1.0, 0.0, 0.0]);
        let blue = splat(1, 2.0, [0.0, 0.0], 1.0, 1.0, [0.0, 0.0, 1.0]);
        let p = Vector2::zeros();
        let c = composite(&[red.clone(), blue.clone()], p, [0.0; 3]).unwrap();
        assert!(c[0] > 0.99 && c[2] < 0.01);
        let mut red2 = red;
        red2.depth = 3.0;
        let c = composite(&[blue, red2], p, [0.0; 3]).unwrap();
        assert!(c[2] > 0.99 && c[0] < 0.01);
    }

    #[test]
    fn unsorted_input_rejected_in_debug() {
        let a = splat(0, 2.0, [0.0, 0.0], 1.0, 0.5, [1.0; 3]);
        let b = splat(1, 1.0, [0.0, 0.0], 1.0, 0.5, [1.0; 3]);
        let r = composite(&[a, b], Vector2::zeros(), [0.0; 3]);
        assert_eq!(r.is_err(), cfg!(debug_assertions));
    }

    #[test]
    fn alpha_plus_transmittance_is_one() {
        let list: Vec<_> = (0..6)
            .map(|i| splat(i, i as f64 + 1.0, [0.3 * i as f64, 0.1], 2.0, 0.4, [1.0; 3]))
            .collect();
        let cfg = RenderConfig::default();
        let white = composite_pixel(list.iter(), Vector2::new(0.5, 0.5), [0.0; 3], &cfg);
        // With white splats and black background the color equals accumulated alpha.
        assert!((white.color[0] + white.transmittance - 1.0).abs() < 1e-12);
    }
}
