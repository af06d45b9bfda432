//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page drives a sensor around a random landmark world and shows the
//! simulated polar scan, its Cartesian image and the soft attention mask of
//! a randomly initialized network. Every export has a plain Rust twin so the
//! logic is testable off the browser.

use radar_reloc::attention::{image_tensor, Attention, AttentionConfig, AttentionMode};
use radar_reloc::data::{simulate_scan, NoiseModel, ScanParams, SimWorld};
use radar_reloc::geometry::{polar_to_cartesian_image, CartesianImage, CartesianSpec, Interpolation, PolarScan};
use radar_reloc::params::ParamLayout;
use radar_reloc::pose::Pose;
use radar_reloc::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: radar_reloc::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A landmark world plus the scan geometry used to observe it.
#[wasm_bindgen]
pub struct Scene {
    world: SimWorld,
    scan: ScanParams,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, landmarks: usize, dynamic_objects: usize) -> Scene {
        Scene::build(seed, landmarks, dynamic_objects)
    }

    pub fn azimuths(&self) -> usize {
        self.scan.azimuths
    }

    pub fn range_bins(&self) -> usize {
        self.scan.range_bins
    }

    /// Landmark positions as `[x0, y0, x1, y1, ...]` meters.
    pub fn landmark_positions(&self) -> Vec<f64> {
        self.world.landmarks.iter().flat_map(|l| l.position).collect()
    }

    pub fn set_noise(&mut self, noisy: bool) {
        self.world.noise = if noisy { NoiseModel::moderate() } else { NoiseModel::none() };
    }

    /// Polar scan at planar pose `(x, y, yaw)`, row-major `[azimuth][range]`.
    pub fn simulate(&self, x: f64, y: f64, yaw: f64, time_ms: f64, seed: u64) -> std::result::Result<Vec<f32>, JsError> {
        self.scan_at(x, y, yaw, time_ms, seed)
            .map(|s| s.intensities().to_vec())
            .map_err(js)
    }
}

impl Scene {
    pub fn build(seed: u64, landmarks: usize, dynamic_objects: usize) -> Scene {
        let world = SimWorld::random(landmarks, 30.0, 10.0, 2.0, seed).with_random_dynamics(
            dynamic_objects,
            30.0,
            seed.wrapping_add(1),
        );
        Scene {
            world,
            scan: ScanParams::desk(),
        }
    }

    pub fn scan_at(&self, x: f64, y: f64, yaw: f64, time_ms: f64, seed: u64) -> Result<PolarScan> {
        let pose = Pose::planar(x, y, yaw, (time_ms * 1e6) as i64);
        simulate_scan(&self.world, &pose, &self.scan, seed)
    }
}

pub fn cartesian(
    intensities: Vec<f32>,
    azimuths: usize,
    range_bins: usize,
    range_resolution: f64,
    size: usize,
    alpha: f64,
    bilinear: bool,
) -> Result<CartesianImage> {
    let scan = PolarScan::new(azimuths, range_bins, intensities, range_resolution, 0)?;
    let spec = CartesianSpec {
        height: size,
        width: size,
        alpha,
        interpolation: if bilinear { Interpolation::Bilinear } else { Interpolation::Nearest },
    };
    polar_to_cartesian_image(&scan, &spec)
}

/// Polar scan to a `size × size` bird's-eye image, row-major.
#[wasm_bindgen]
pub fn polar_to_cartesian(
    intensities: Vec<f32>,
    azimuths: usize,
    range_bins: usize,
    range_resolution: f64,
    size: usize,
    alpha: f64,
    bilinear: bool,
) -> std::result::Result<Vec<f32>, JsError> {
    cartesian(intensities, azimuths, range_bins, range_resolution, size, alpha, bilinear)
        .map(|img| img.pixels().iter().map(|&v| v as f32).collect())
        .map_err(js)
}

pub fn mask(image: &[f32], size: usize, seed: u64, mode: &str) -> Result<Vec<f64>> {
    let mode: AttentionMode = mode.parse()?;
    if mode == AttentionMode::Off {
        return Ok(vec![1.0; image.len()]);
    }
    let img = CartesianImage::new(size, size, image.iter().map(|&v| v as f64).collect(), 1.0, 0)?;
    let mut layout = ParamLayout::new();
    let attention = Attention::new(&mut layout, &AttentionConfig::desk(), mode)?;
    attention.check_input(size, size)?;
    let params = layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(attention.forward(&params, &image_tensor(&img))?.mask.data)
}

/// Soft attention mask in (0, 1) of a randomly initialized attention module.
/// `mode` is `nested`, `plain` or `off`.
#[wasm_bindgen]
pub fn attention_mask(image: Vec<f32>, size: usize, seed: u64, mode: &str) -> std::result::Result<Vec<f32>, JsError> {
    mask(&image, size, seed, mode)
        .map(|m| m.into_iter().map(|v| v as f32).collect())
        .map_err(js)
}
