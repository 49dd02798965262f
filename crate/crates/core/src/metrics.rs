//! Volume similarity metrics on normalized intensities (peak 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Reported PSNR for identical volumes.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub dims: [usize; 3],
    pub config_hash: String,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn evaluate(method: &str, config_hash: &str, pred: &Volume3D, truth: &Volume3D, wall_seconds: f64) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            psnr: psnr(pred, truth)?,
            ssim: ssim3d(pred, truth)?,
            dims: truth.dims(),
            config_hash: config_hash.to_string(),
            wall_seconds,
        })
    }

    /// Copy with the timing field zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

fn same_dims(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!("dims differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
}

/// Separable Gaussian filter; taps falling outside the volume are dropped
/// and the remaining weights renormalized.
fn blur(data: &[f64], dims: [usize; 3], kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let stride = [1, dims[0], dims[0] * dims[1]];
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = dims[axis];
        let s = stride[axis];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / s) % n;
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(n - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for q in lo..=hi {
                let w = kernel[q + r - pos];
                acc += w * cur[idx - pos * s + q * s];
                wsum += w;
            }
            *out = acc / wsum;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Mean local SSIM with an 11-voxel Gaussian window (σ = 1.5).
pub fn ssim3d(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    same_dims(a, b)?;
    let dims = a.dims();
    if dims.iter().any(|&d| d < SSIM_WINDOW) {
        return Err(Error::Window {
            dims,
            window: SSIM_WINDOW,
        });
    }
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let kernel = gaussian_kernel();
    let mu_x = blur(&x, dims, &kernel);
    let mu_y = blur(&y, dims, &kernel);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let exx = blur(&xx, dims, &kernel);
    let eyy = blur(&yy, dims, &kernel);
    let exy = blur(&xy, dims, &kernel);

    let mut total = 0.0;
    for i in 0..x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = exx[i] - mx * mx;
        let vy = eyy[i] - my * my;
        let cov = exy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
        total += num / den;
    }
    Ok(total / x.len() as f64)
}
