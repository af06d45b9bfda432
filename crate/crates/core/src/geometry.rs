//! Polar FMCW scans and their metric Cartesian (bird's-eye) resampling.
//!
//! Azimuth bin `a` of `M` corresponds to the angle `2π·a/M`. Range bin `k`
//! is sampled at `k · range_resolution` meters, and the scan covers ranges
//! up to `B · range_resolution`.
//!
//! Cartesian images put the sensor at pixel `((H-1)/2, (W-1)/2)`. A point at
//! angle `θ` and range `b` lands at column offset `α·cosθ·b` and row offset
//! `α·sinθ·b` from that center, `α` being pixels per meter.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    azimuths: usize,
    range_bins: usize,
    /// Row-major `[azimuth][range]`.
    intensities: Vec<f32>,
    pub range_resolution: f64,
    pub timestamp: i64,
}

impl PolarScan {
    pub fn new(
        azimuths: usize,
        range_bins: usize,
        intensities: Vec<f32>,
        range_resolution: f64,
        timestamp: i64,
    ) -> Result<Self> {
        if azimuths == 0 || range_bins == 0 {
            return Err(Error::domain("polar scan needs at least one azimuth and one range bin"));
        }
        if intensities.len() != azimuths * range_bins {
            return Err(Error::domain(format!(
                "expected {} intensities, got {}",
                azimuths * range_bins,
                intensities.len()
            )));
        }
        if let Some(bad) = intensities
            .iter()
            .find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0)
        {
            return Err(Error::domain(format!("intensity {bad} outside [0, 1]")));
        }
        if !(range_resolution > 0.0 && range_resolution.is_finite()) {
            return Err(Error::domain("range resolution must be positive"));
        }
        Ok(Self {
            azimuths,
            range_bins,
            intensities,
            range_resolution,
            timestamp,
        })
    }

    pub fn zeros(azimuths: usize, range_bins: usize, range_resolution: f64, timestamp: i64) -> Result<Self> {
        Self::new(
            azimuths,
            range_bins,
            vec![0.0; azimuths * range_bins],
            range_resolution,
            timestamp,
        )
    }

    pub fn azimuths(&self) -> usize {
        self.azimuths
    }

    pub fn range_bins(&self) -> usize {
        self.range_bins
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn get(&self, a: usize, b: usize) -> f32 {
        self.intensities[a * self.range_bins + b]
    }

    pub fn max_range(&self) -> f64 {
        self.range_bins as f64 * self.range_resolution
    }
}

/// Single-channel bird's-eye image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    /// Pixels per meter.
    pub alpha: f64,
    pub timestamp: i64,
}

impl CartesianImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, alpha: f64, timestamp: i64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::domain(format!(
                "expected {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("image contains non-finite pixels"));
        }
        Ok(Self {
            height,
            width,
            pixels,
            alpha,
            timestamp,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn center(&self) -> (f64, f64) {
        image_center(self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(Error::config(format!("unknown interpolation '{other}'"))),
        }
    }
}

/// Output geometry of the polar-to-Cartesian conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartesianSpec {
    pub height: usize,
    pub width: usize,
    pub alpha: f64,
    pub interpolation: Interpolation,
}

impl Default for CartesianSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl CartesianSpec {
    /// 64×64 at one pixel per meter: the 32 m disk of the desk scan fills the frame.
    pub fn desk() -> Self {
        Self {
            height: 64,
            width: 64,
            alpha: 1.0,
            interpolation: Interpolation::Bilinear,
        }
    }

    /// 224×224 network input.
    pub fn full() -> Self {
        Self {
            height: 224,
            width: 224,
            alpha: 224.0 / 2.0 / 165.0,
            interpolation: Interpolation::Bilinear,
        }
    }
}

pub fn image_center(height: usize, width: usize) -> (f64, f64) {
    ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0)
}

pub fn azimuth_to_angle(a: usize, azimuths: usize) -> Result<f64> {
    if azimuths == 0 || a >= azimuths {
        return Err(Error::domain(format!(
            "azimuth bin {a} outside [0, {azimuths})"
        )));
    }
    Ok(TAU * a as f64 / azimuths as f64)
}

/// Pixel offset `(x, y)` from the image center of the polar point
/// `(a, range)`; `x` runs along columns and `y` along rows.
pub fn polar_point_to_cartesian(a: usize, range: f64, azimuths: usize, alpha: f64) -> Result<(f64, f64)> {
    let theta = azimuth_to_angle(a, azimuths)?;
    if !(range >= 0.0) {
        return Err(Error::domain(format!("range must be nonnegative, got {range}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok((alpha * theta.cos() * range, alpha * theta.sin() * range))
}

/// Inverse of [`polar_point_to_cartesian`]: angle in `[0, 2π)` and range in meters.
pub fn cartesian_to_polar(x: f64, y: f64, alpha: f64) -> (f64, f64) {
    let theta = y.atan2(x).rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative angles
    let theta = if theta >= TAU { 0.0 } else { theta };
    (theta, x.hypot(y) / alpha)
}

/// Resamples a polar scan onto a Cartesian grid by inverse mapping: each
/// output pixel looks up its (angle, range) in the scan. Pixels past the
/// scan's maximum range are zero.
pub fn polar_to_cartesian_image(scan: &PolarScan, spec: &CartesianSpec) -> Result<CartesianImage> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::domain("output size must be positive"));
    }
    if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
        return Err(Error::domain(format!("alpha must be positive, got {}", spec.alpha)));
    }
    let m = scan.azimuths;
    let nb = scan.range_bins;
    let max_range = scan.max_range();
    let (cy, cx) = image_center(h, w);
    let mut pixels = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let (theta, range) = cartesian_to_polar(col as f64 - cx, row as f64 - cy, spec.alpha);
            if range > max_range {
                continue;
            }
            let a = theta * m as f64 / TAU;
            let b = range / scan.range_resolution;
            pixels[row * w + col] = match spec.interpolation {
                Interpolation::Nearest => {
                    let ai = (a.round() as usize) % m;
                    let bi = (b.round() as usize).min(nb - 1);
                    scan.get(ai, bi) as f64
                }
                Interpolation::Bilinear => {
                    let a0 = a.floor();
                    let fa = a - a0;
                    let a0 = (a0 as usize) % m;
                    let a1 = (a0 + 1) % m;
                    let b0f = b.floor();
                    let fb = b - b0f;
                    let b0 = (b0f as usize).min(nb - 1);
                    let b1 = (b0 + 1).min(nb - 1);
                    let s = |ai, bi| scan.get(ai, bi) as f64;
                    let v = (1.0 - fa) * ((1.0 - fb) * s(a0, b0) + fb * s(a0, b1))
                        + fa * ((1.0 - fb) * s(a1, b0) + fb * s(a1, b1));
                    v.clamp(0.0, 1.0)
                }
            };
        }
    }
    CartesianImage::new(h, w, pixels, spec.alpha, scan.timestamp)
}
