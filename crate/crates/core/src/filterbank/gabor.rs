//! Gabor filter bank in the Manjunath-Ma parameterization.
//!
//! Center frequencies are log-spaced between `min_frequency` and
//! `max_frequency` (cycles/pixel); the Gaussian envelope widths follow the
//! half-peak tiling of the frequency plane for the given scale ratio and
//! orientation count. Every kernel is DC-removed and L2-normalized.

use std::f64::consts::{LN_2, PI};

use ndarray::Array2;

use super::{FilterBank, FilterLayer, Nonlinearity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GaborConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Odd spatial support, in pixels, of every kernel.
    pub kernel_size: usize,
    pub min_frequency: f64,
    pub max_frequency: f64,
}

impl Default for GaborConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 6,
            kernel_size: 31,
            min_frequency: 0.05,
            max_frequency: 0.4,
        }
    }
}

/// Parameters of one (scale, orientation) filter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    pub frequency: f64,
    pub orientation: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl GaborConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(Error::InvalidParameter("gabor scales and orientations must be >= 1".into()));
        }
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "gabor kernel size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        let (lo, hi) = (self.min_frequency, self.max_frequency);
        if !(lo > 0.0 && hi >= lo && hi <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "gabor frequency band [{lo}, {hi}] must satisfy 0 < min <= max <= 0.5"
            )));
        }
        if self.scales > 1 && hi == lo {
            return Err(Error::InvalidParameter("multi-scale gabor bank needs min < max frequency".into()));
        }
        Ok(())
    }

    /// Filter parameters, scale-major (lowest frequency first), then orientation.
    pub fn params(&self) -> Vec<GaborParams> {
        let (lo, hi) = (self.min_frequency, self.max_frequency);
        let s = self.scales;
        let ratio = if s > 1 { (hi / lo).powf(1.0 / (s - 1) as f64) } else { 2.0 };

        // envelope of the finest (highest-frequency) filter
        let two_ln2 = 2.0 * LN_2;
        let sigma_u = (ratio - 1.0) * hi / ((ratio + 1.0) * two_ln2.sqrt());
        let half_angle = (PI / (2.0 * self.orientations as f64)).min(PI / 4.0);
        let sigma_v = half_angle.tan() * (hi - two_ln2 * sigma_u * sigma_u / hi)
            / (two_ln2 - two_ln2 * two_ln2 * sigma_u * sigma_u / (hi * hi)).sqrt();
        let sigma_x = 1.0 / (2.0 * PI * sigma_u);
        let sigma_y = 1.0 / (2.0 * PI * sigma_v);

        let mut out = Vec::with_capacity(s * self.orientations);
        for scale in 0..s {
            let dilation = ratio.powi((s - 1 - scale) as i32);
            let frequency = if s > 1 { lo * ratio.powi(scale as i32) } else { hi };
            for o in 0..self.orientations {
                out.push(GaborParams {
                    frequency,
                    orientation: o as f64 * PI / self.orientations as f64,
                    sigma_x: sigma_x * dilation,
                    sigma_y: sigma_y * dilation,
                });
            }
        }
        out
    }
}

fn kernel_pair(p: &GaborParams, size: usize) -> (Array2<f64>, Array2<f64>) {
    let half = (size / 2) as f64;
    let (sin, cos) = p.orientation.sin_cos();
    let mut re = Array2::zeros((size, size));
    let mut im = Array2::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let x = c as f64 - half;
            let y = r as f64 - half;
            let xr = x * cos + y * sin;
            let yr = -x * sin + y * cos;
            let env = (-0.5 * (xr * xr / (p.sigma_x * p.sigma_x) + yr * yr / (p.sigma_y * p.sigma_y))).exp();
            let phase = 2.0 * PI * p.frequency * xr;
            re[[r, c]] = env * phase.cos();
            im[[r, c]] = env * phase.sin();
        }
    }
    (re, im)
}

fn normalize(k: &mut Array2<f64>) -> Result<()> {
    let mean = k.mean().unwrap_or(0.0);
    k.mapv_inplace(|v| v - mean);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter("gabor kernel vanishes after DC removal".into()));
    }
    k.mapv_inplace(|v| v / norm);
    Ok(())
}

/// Two layers (`real`, `imag`) of `scales * orientations` kernels each.
pub fn build_gabor_bank(cfg: &GaborConfig) -> Result<FilterBank> {
    cfg.validate()?;
    let mut real = Vec::new();
    let mut imag = Vec::new();
    for p in cfg.params() {
        let (mut re, mut im) = kernel_pair(&p, cfg.kernel_size);
        normalize(&mut re)?;
        normalize(&mut im)?;
        real.push(re);
        imag.push(im);
    }
    FilterBank::new(vec![
        FilterLayer::new("gabor-real", real, Nonlinearity::None)?,
        FilterLayer::new("gabor-imag", imag, Nonlinearity::None)?,
    ])
}
