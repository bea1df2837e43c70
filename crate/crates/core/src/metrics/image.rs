//! Range-image depth metrics and intensity image quality (PSNR / SSIM).

use super::{MetricsError, Result};
use crate::lidar::RangeImage;

/// Distances are clipped to [`DEPTH_EPS`, cap] before comparison.
pub const DEPTH_EPS: f64 = 1e-3;

/// rmse and threshold accuracies over pixels where both masks are true.
pub fn range_metrics(pred: &RangeImage, gt: &RangeImage, cap: f64) -> Result<(f64, f64, f64, f64)> {
    if pred.spec != gt.spec {
        return Err(MetricsError::SpecMismatch);
    }
    let mut n = 0usize;
    let mut sq = 0.0f64;
    let mut within = [0usize; 3];
    for idx in 0..pred.spec.pixel_count() {
        if !pred.mask()[idx] || !gt.mask()[idx] {
            continue;
        }
        let dp = pred.distances()[idx].clamp(DEPTH_EPS, cap);
        let dg = gt.distances()[idx].clamp(DEPTH_EPS, cap);
        n += 1;
        sq += (dp - dg) * (dp - dg);
        let ratio = (dp / dg).max(dg / dp);
        for (i, w) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(i as i32 + 1) {
                *w += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::NoOverlap);
    }
    let rmse = (sq / n as f64).sqrt();
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok((rmse, pct(within[0]), pct(within[1]), pct(within[2])))
}

/// PSNR is capped at 99 dB when the error underflows; SSIM uses an 11x11
/// Gaussian window (sigma 1.5, k1 0.01, k2 0.03) at unit dynamic range.
pub fn intensity_metrics(
    pred: &RangeImage,
    gt: &RangeImage,
    psnr_valid_only: bool,
) -> Result<(f64, f64)> {
    if pred.spec != gt.spec {
        return Err(MetricsError::SpecMismatch);
    }
    let psnr = psnr(
        pred.intensities(),
        gt.intensities(),
        if psnr_valid_only {
            Some((pred.mask(), gt.mask()))
        } else {
            None
        },
    )?;
    let ssim = ssim(
        pred.intensities(),
        gt.intensities(),
        pred.spec.beams,
        pred.spec.columns,
    );
    Ok((psnr, ssim))
}

fn psnr(pred: &[f64], gt: &[f64], masks: Option<(&[bool], &[bool])>) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    match masks {
        None => {
            for (p, g) in pred.iter().zip(gt) {
                sq += (p - g) * (p - g);
            }
            n = pred.len();
        }
        Some((mp, mg)) => {
            for i in 0..pred.len() {
                if mp[i] && mg[i] {
                    sq += (pred[i] - gt[i]) * (pred[i] - gt[i]);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(MetricsError::NoOverlap);
            }
        }
    }
    let mse = sq / n as f64;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel(len: usize) -> Vec<f64> {
    let half = (len as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution: output is (h - klen + 1) x (w - klen + 1).
fn blur_valid(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let klen = kernel.len();
    let wo = w - klen + 1;
    let mut horiz = vec![0.0f64; h * wo];
    for r in 0..h {
        for c in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * img[r * w + c + i];
            }
            horiz[r * wo + c] = acc;
        }
    }
    let ho = h - klen + 1;
    let mut out = vec![0.0f64; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(r + i) * wo + c];
            }
            out[r * wo + c] = acc;
        }
    }
    (out, ho, wo)
}

/// Mean SSIM over all fully-interior window positions. Images smaller than
/// the window fall back to a single truncated-kernel window.
pub fn ssim(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let klen = SSIM_WINDOW.min(h).min(w);
    let kernel = gaussian_kernel(klen);
    let xy: Vec<f64> = pred.iter().zip(gt).map(|(a, b)| a * b).collect();
    let xx: Vec<f64> = pred.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = gt.iter().map(|b| b * b).collect();
    let (mu_x, ho, wo) = blur_valid(pred, h, w, &kernel);
    let (mu_y, ..) = blur_valid(gt, h, w, &kernel);
    let (m_xx, ..) = blur_valid(&xx, h, w, &kernel);
    let (m_yy, ..) = blur_valid(&yy, h, w, &kernel);
    let (m_xy, ..) = blur_valid(&xy, h, w, &kernel);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    for i in 0..ho * wo {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = m_xx[i] - mx * mx;
        let vy = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    acc / (ho * wo) as f64
}
