use crate::image::ImageBuffer;

/// Value reported for identical images.
pub const PSNR_IDENTICAL: f64 = 99.0;

/// Mean squared error over all channels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert!(a.same_size(b), "mse: image sizes differ");
    let n = (a.data.len() * 3).max(1) as f64;
    a.data.iter().zip(&b.data).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum::<f64>() / n
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        PSNR_IDENTICAL
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_IDENTICAL)
    }
}
