//! Gaussian-window SSIM and its gradient.

use crate::image::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

struct Filter {
    w: [f64; SSIM_WINDOW],
    width: usize,
    height: usize,
}

impl Filter {
    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let r = (SSIM_WINDOW / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in self.w.iter().enumerate() {
                    acc += wk * src[y * w + reflect(x as isize + k as isize - r, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in self.w.iter().enumerate() {
                    acc += wk * tmp[reflect(y as isize + k as isize - r, h) * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let r = (SSIM_WINDOW / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let gv = g[y * w + x];
                for (k, wk) in self.w.iter().enumerate() {
                    tmp[reflect(y as isize + k as isize - r, h) * w + x] += wk * gv;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let gv = tmp[y * w + x];
                for (k, wk) in self.w.iter().enumerate() {
                    out[y * w + reflect(x as isize + k as isize - r, w)] += wk * gv;
                }
            }
        }
        out
    }
}

struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn moments(f: &Filter, a: &[f64], b: &[f64]) -> Moments {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    Moments { mu_a: f.apply(a), mu_b: f.apply(b), e_aa: f.apply(&sq(a, a)), e_bb: f.apply(&sq(b, b)), e_ab: f.apply(&sq(a, b)) }
}

/// Mean SSIM of one channel plane and, optionally, its gradient w.r.t. `a`.
fn plane_ssim(f: &Filter, a: &[f64], b: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let m = moments(f, a, b);
    let n = a.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let (mut g_mu, mut g_eab, mut g_eaa) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (ma, mb) = (m.mu_a[p], m.mu_b[p]);
        let s_aa = m.e_aa[p] - ma * ma;
        let s_bb = m.e_bb[p] - mb * mb;
        let s_ab = m.e_ab[p] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * s_ab + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = s_aa + s_bb + SSIM_C2;
        let d = b1 * b2;
        let v = a1 * a2 / d;
        total += v;
        if want_grad {
            let dn_mu = 2.0 * mb * a2 - 2.0 * mb * a1;
            let dd_mu = 2.0 * ma * b2 - 2.0 * ma * b1;
            g_mu[p] = (dn_mu - v * dd_mu) / d * inv_n;
            g_eab[p] = 2.0 * a1 / d * inv_n;
            g_eaa[p] = -v * b1 / d * inv_n;
        }
    }
    if !want_grad {
        return (total * inv_n, None);
    }
    let t_mu = f.adjoint(&g_mu);
    let t_ab = f.adjoint(&g_eab);
    let t_aa = f.adjoint(&g_eaa);
    let grad = (0..n).map(|q| t_mu[q] + b[q] * t_ab[q] + 2.0 * a[q] * t_aa[q]).collect();
    (total * inv_n, Some(grad))
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, want_grad: bool) -> (f64, Option<ImageBuffer>) {
    assert!(a.same_size(b), "ssim: image sizes differ");
    let f = Filter { w: gaussian_window(), width: a.width, height: a.height };
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageBuffer::new(a.width, a.height));
    for c in 0..3 {
        let (v, g) = plane_ssim(&f, &a.plane(c), &b.plane(c), want_grad);
        total += v / 3.0;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (px, gv) in out.data.iter_mut().zip(g) {
                px[c] = gv / 3.0;
            }
        }
    }
    (total, grad)
}

/// Mean SSIM over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    ssim_impl(a, b, false).0
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> (f64, ImageBuffer) {
    let (v, g) = ssim_impl(a, b, true);
    (v, g.expect("gradient requested"))
}
