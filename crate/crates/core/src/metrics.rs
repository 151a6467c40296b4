//! PSNR and SSIM on [0, 1] data, with the Y-channel measurement protocol
//! for color images.

use crate::data::rgb_to_y;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Finite stand-in for the PSNR of identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Per-image evaluation record.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub runtime_ms: f64,
}

/// 10*log10(1/mse) over all elements, capped at 99 dB for zero error.
pub fn psnr<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            expected: pred.shape().to_string(),
            got: target.shape().to_string(),
        });
    }
    let mut acc = 0.0f64;
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let d = a.to_f64() - b.to_f64();
        acc += d * d;
    }
    let mse = acc / pred.shape().numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Y-channel PSNR of two color images.
pub fn psnr_y<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    psnr(&rgb_to_y(pred)?, &rgb_to_y(target)?)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_weights() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW);
    for d in -half..=half {
        w.push((-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over the valid window positions, computed
/// from separably Gaussian-filtered moment maps. Single-channel input;
/// color images should be converted with `rgb_to_y` first (see `ssim_y`).
pub fn ssim<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    let s = pred.shape();
    if s != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            expected: s.to_string(),
            got: target.shape().to_string(),
        });
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            s.h, s.w
        )));
    }
    let window = ssim_window_weights();
    let c1 = (SSIM_K1 * 1.0f64).powi(2) * 1.0; // L = 1 on [0,1] data
    let c1 = c1.max(SSIM_K1 * SSIM_K1);
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0f64;
    let mut count = 0usize;
    let hw = s.h * s.w;
    for plane in 0..s.n * s.c {
        let x: Vec<f64> = pred.data()[plane * hw..(plane + 1) * hw]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let y: Vec<f64> = target.data()[plane * hw..(plane + 1) * hw]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

        let mu_x = filter_valid(&x, s.h, s.w, &window);
        let mu_y = filter_valid(&y, s.h, s.w, &window);
        let m_xx = filter_valid(&xx, s.h, s.w, &window);
        let m_yy = filter_valid(&yy, s.h, s.w, &window);
        let m_xy = filter_valid(&xy, s.h, s.w, &window);

        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - mx * mx;
            let var_y = m_yy[i] - my * my;
            let cov = m_xy[i] - mx * my;
            let v = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            total += v;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Y-channel SSIM of two color images.
pub fn ssim_y<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    ssim(&rgb_to_y(pred)?, &rgb_to_y(target)?)
}

/// Separable Gaussian filtering, valid region only:
/// (H - win + 1) x (W - win + 1).
fn filter_valid(x: &[f64], h: usize, w: usize, window: &[f64]) -> Vec<f64> {
    let win = window.len();
    let out_w = w - win + 1;
    let out_h = h - win + 1;
    // Horizontal pass.
    let mut mid = vec![0.0f64; h * out_w];
    for row in 0..h {
        for ow in 0..out_w {
            let mut acc = 0.0;
            for (t, &wt) in window.iter().enumerate() {
                acc += wt * x[row * w + ow + t];
            }
            mid[row * out_w + ow] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; out_h * out_w];
    for oh in 0..out_h {
        for ow in 0..out_w {
            let mut acc = 0.0;
            for (t, &wt) in window.iter().enumerate() {
                acc += wt * mid[(oh + t) * out_w + ow];
            }
            out[oh * out_w + ow] = acc;
        }
    }
    out
}
