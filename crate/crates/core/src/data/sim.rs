//! A planar radar world with point-like reflectors, used as ground truth.
//!
//! Every visible reflector paints a Gaussian blob into the polar scan at its
//! sensor-frame (azimuth, range). Blobs are max-combined. A reflector is
//! hidden when a nearer one covers its bearing.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::format::{self, DatasetManifest, ScanDtype, SequenceEntry, Split};
use super::{Dataset, Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::PolarScan;
use crate::pose::{Pose, Quaternion};

/// Blob standard deviation along azimuth, in bins.
pub const BLOB_SIGMA_AZIMUTH: f64 = 1.0;
/// Blob standard deviation along range, in bins.
pub const BLOB_SIGMA_RANGE: f64 = 1.5;
const BLOB_EXTENT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub position: [f64; 2],
    pub reflectivity: f64,
    pub radius: f64,
}

/// A reflector moving at constant speed around a closed waypoint loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObject {
    pub waypoints: Vec<[f64; 2]>,
    /// Meters per second.
    pub speed: f64,
    pub reflectivity: f64,
    pub radius: f64,
}

impl DynamicObject {
    pub fn position_at(&self, timestamp_ns: i64) -> [f64; 2] {
        let n = self.waypoints.len();
        if n == 1 {
            return self.waypoints[0];
        }
        let seg = |i: usize| (self.waypoints[i], self.waypoints[(i + 1) % n]);
        let lens: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = seg(i);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .collect();
        let total: f64 = lens.iter().sum();
        if total == 0.0 {
            return self.waypoints[0];
        }
        let mut s = (self.speed * timestamp_ns as f64 * 1e-9).rem_euclid(total);
        for (i, &len) in lens.iter().enumerate() {
            if s <= len && len > 0.0 {
                let (a, b) = seg(i);
                let t = s / len;
                return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            }
            s -= len;
        }
        self.waypoints[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Meters.
    pub range_sigma: f64,
    /// Radians.
    pub angle_sigma: f64,
    /// Expected spurious returns per scan.
    pub false_positive_rate: f64,
    /// Chance that a visible reflector is missed.
    pub false_negative_prob: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn moderate() -> Self {
        Self {
            range_sigma: 0.25,
            angle_sigma: 0.02,
            false_positive_rate: 3.0,
            false_negative_prob: 0.05,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub landmarks: Vec<Landmark>,
    pub dynamic_objects: Vec<DynamicObject>,
    pub noise: NoiseModel,
    /// Reflectors farther than this are never seen.
    pub max_range: f64,
}

impl SimWorld {
    pub fn empty(max_range: f64) -> Self {
        Self {
            landmarks: Vec::new(),
            dynamic_objects: Vec::new(),
            noise: NoiseModel::none(),
            max_range,
        }
    }

    /// Static landmarks scattered over `[-extent, extent]²`, keeping `clearance`
    /// meters away from the circle of `route_radius` around the origin.
    pub fn random(landmarks: usize, extent: f64, route_radius: f64, clearance: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(landmarks);
        while out.len() < landmarks {
            let p = [rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)];
            if (p[0].hypot(p[1]) - route_radius).abs() < clearance {
                continue;
            }
            out.push(Landmark {
                position: p,
                reflectivity: rng.gen_range(0.4..=1.0),
                radius: rng.gen_range(0.3..1.5),
            });
        }
        Self {
            landmarks: out,
            dynamic_objects: Vec::new(),
            noise: NoiseModel::none(),
            max_range: extent * 2.0,
        }
    }

    /// Adds `count` movers wandering between random points of the square.
    pub fn with_random_dynamics(mut self, count: usize, extent: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let waypoints = (0..4)
                .map(|_| [rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)])
                .collect();
            self.dynamic_objects.push(DynamicObject {
                waypoints,
                speed: rng.gen_range(1.0..4.0),
                reflectivity: rng.gen_range(0.5..=1.0),
                radius: rng.gen_range(0.5..1.0),
            });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::domain("max_range must be positive"));
        }
        let reflectors = self
            .landmarks
            .iter()
            .map(|l| (l.reflectivity, l.radius))
            .chain(self.dynamic_objects.iter().map(|d| (d.reflectivity, d.radius)));
        for (refl, radius) in reflectors {
            if !(refl > 0.0 && refl <= 1.0) {
                return Err(Error::domain(format!("reflectivity {refl} outside (0, 1]")));
            }
            if !(radius >= 0.0 && radius.is_finite()) {
                return Err(Error::domain(format!("radius {radius} must be nonnegative")));
            }
        }
        if self.dynamic_objects.iter().any(|d| d.waypoints.is_empty() || !(d.speed >= 0.0)) {
            return Err(Error::domain("dynamic objects need waypoints and a nonnegative speed"));
        }
        let n = &self.noise;
        let rates = [n.range_sigma, n.angle_sigma, n.false_positive_rate, n.false_negative_prob];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || n.false_negative_prob > 1.0 {
            return Err(Error::domain("noise parameters must be nonnegative and finite"));
        }
        Ok(())
    }

    /// The same world expressed in a frame moved by planar rotation `yaw`
    /// then translation `t`.
    pub fn transformed(&self, yaw: f64, t: [f64; 2]) -> Self {
        let (s, c) = yaw.sin_cos();
        let tf = |p: [f64; 2]| [c * p[0] - s * p[1] + t[0], s * p[0] + c * p[1] + t[1]];
        let mut w = self.clone();
        for l in &mut w.landmarks {
            l.position = tf(l.position);
        }
        for d in &mut w.dynamic_objects {
            for p in &mut d.waypoints {
                *p = tf(*p);
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub azimuths: usize,
    pub range_bins: usize,
    /// Meters per range bin.
    pub range_resolution: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScanParams {
    pub fn desk() -> Self {
        Self {
            azimuths: 64,
            range_bins: 64,
            range_resolution: 0.5,
        }
    }
}

struct Target {
    angle: f64,
    range: f64,
    half_width: f64,
    reflectivity: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let a = a.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn paint_blob(buf: &mut [f32], p: &ScanParams, center_a: f64, center_b: f64, intensity: f64) {
    let m = p.azimuths as isize;
    let lo_a = (center_a - BLOB_EXTENT * BLOB_SIGMA_AZIMUTH).floor() as isize;
    let hi_a = (center_a + BLOB_EXTENT * BLOB_SIGMA_AZIMUTH).ceil() as isize;
    let lo_b = ((center_b - BLOB_EXTENT * BLOB_SIGMA_RANGE).floor() as isize).max(0);
    let hi_b = ((center_b + BLOB_EXTENT * BLOB_SIGMA_RANGE).ceil() as isize).min(p.range_bins as isize - 1);
    for a in lo_a..=hi_a {
        let da = (a as f64 - center_a) / BLOB_SIGMA_AZIMUTH;
        let row = a.rem_euclid(m) as usize * p.range_bins;
        for b in lo_b..=hi_b {
            let db = (b as f64 - center_b) / BLOB_SIGMA_RANGE;
            let v = (intensity * (-0.5 * (da * da + db * db)).exp()) as f32;
            let cell = &mut buf[row + b as usize];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// Renders one scan seen from `pose`, stamped with the pose timestamp.
pub fn simulate_scan(world: &SimWorld, pose: &Pose, params: &ScanParams, seed: u64) -> Result<PolarScan> {
    world.validate()?;
    let mut scan_buf = vec![0.0f32; params.azimuths * params.range_bins];
    // Validates the scan parameters before any work.
    PolarScan::zeros(params.azimuths, params.range_bins, params.range_resolution, pose.timestamp)?;
    let scan_range = params.range_bins as f64 * params.range_resolution;
    let reach = world.max_range.min(scan_range);

    let reflectors = world
        .landmarks
        .iter()
        .map(|l| (l.position, l.reflectivity, l.radius))
        .chain(
            world
                .dynamic_objects
                .iter()
                .map(|d| (d.position_at(pose.timestamp), d.reflectivity, d.radius)),
        );
    let targets: Vec<Target> = reflectors
        .map(|(pos, reflectivity, radius)| {
            let local = pose.inverse_transform_point([pos[0], pos[1], 0.0]);
            let range = local[0].hypot(local[1]);
            Target {
                angle: wrap_angle(local[1].atan2(local[0])),
                range,
                half_width: if range > 0.0 { (radius / range).min(1.0).asin() } else { FRAC_PI_2 },
                reflectivity,
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = world.noise;
    let range_noise = Normal::new(0.0, noise.range_sigma).map_err(|e| Error::domain(e.to_string()))?;
    let angle_noise = Normal::new(0.0, noise.angle_sigma).map_err(|e| Error::domain(e.to_string()))?;
    let bins_per_radian = params.azimuths as f64 / TAU;

    for (i, t) in targets.iter().enumerate() {
        // Draws happen for every target so the noise stream does not depend on visibility.
        let missed = rng.gen::<f64>() < noise.false_negative_prob;
        let dr = range_noise.sample(&mut rng);
        let da = angle_noise.sample(&mut rng);
        if missed || t.range <= 0.0 || t.range > reach {
            continue;
        }
        let occluded = targets.iter().enumerate().any(|(j, o)| {
            j != i && o.range > 0.0 && o.range < t.range && angular_distance(o.angle, t.angle) < o.half_width
        });
        if occluded {
            continue;
        }
        let center_a = wrap_angle(t.angle + da) * bins_per_radian;
        let center_b = (t.range + dr) / params.range_resolution;
        paint_blob(&mut scan_buf, params, center_a, center_b, t.reflectivity);
    }

    if noise.false_positive_rate > 0.0 {
        let count = Poisson::new(noise.false_positive_rate)
            .map_err(|e| Error::domain(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let a = rng.gen_range(0.0..params.azimuths as f64);
            let b = rng.gen_range(0.0..params.range_bins as f64);
            let v = rng.gen_range(0.2..1.0);
            paint_blob(&mut scan_buf, params, a, b, v);
        }
    }

    PolarScan::new(
        params.azimuths,
        params.range_bins,
        scan_buf,
        params.range_resolution,
        pose.timestamp,
    )
}

fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn simulate_sequence(world: &SimWorld, trajectory: &[Pose], params: &ScanParams, seed: u64) -> Result<Vec<Frame>> {
    trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            Ok(Frame {
                scan: simulate_scan(world, pose, params, frame_seed(seed, i))?,
                pose: *pose,
            })
        })
        .collect()
}

/// Planar counter-clockwise circle with the sensor facing along the path.
/// The pose at index `i` depends only on `i % frames_per_lap`, so laps
/// revisit bit-identical poses.
pub fn loop_trajectory(
    center: [f64; 2],
    radius: f64,
    frames_per_lap: usize,
    total_frames: usize,
    t0_ns: i64,
    dt_ns: i64,
) -> Vec<Pose> {
    (0..total_frames)
        .map(|i| {
            let phi = TAU * (i % frames_per_lap) as f64 / frames_per_lap as f64;
            Pose::planar(
                center[0] + radius * phi.cos(),
                center[1] + radius * phi.sin(),
                phi + FRAC_PI_2,
                t0_ns + i as i64 * dt_ns,
            )
        })
        .collect()
}

fn write_sequence(
    root: &Path,
    name: &str,
    frames: &[Frame],
    dtype: ScanDtype,
) -> Result<(PathBuf, PathBuf)> {
    let scan_dir = PathBuf::from(name).join("scans");
    let pose_file = PathBuf::from(name).join("poses.csv");
    for f in frames {
        format::write_scan(&root.join(&scan_dir), &f.scan, dtype)?;
    }
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    format::write_poses(&root.join(&pose_file), &poses)?;
    Ok((scan_dir, pose_file))
}

/// Simulates `trajectory` and writes it as a one-sequence training dataset.
pub fn generate_synthetic_dataset(
    world: &SimWorld,
    trajectory: &[Pose],
    params: &ScanParams,
    seed: u64,
    out_root: &Path,
) -> Result<DatasetManifest> {
    if trajectory.is_empty() {
        return Err(Error::domain("trajectory is empty"));
    }
    let frames = simulate_sequence(world, trajectory, params, seed)?;
    let (scan_dir, pose_file) = write_sequence(out_root, "seq0", &frames, ScanDtype::F32)?;
    let mut manifest = DatasetManifest::new(out_root);
    manifest.sequences.push(SequenceEntry {
        name: "seq0".into(),
        scan_dir,
        pose_file,
        tag: "synthetic".into(),
        split: Split::Train,
    });
    manifest.save()?;
    Ok(manifest)
}

/// Several traversals of one route through one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub traversals: usize,
    /// The last this-many traversals form the test split.
    pub test_traversals: usize,
    pub frames_per_traversal: usize,
    pub landmarks: usize,
    pub dynamic_objects: usize,
    /// Half-width of the square the world occupies, meters.
    pub extent: f64,
    pub route_radius: f64,
    /// Amplitude of the smooth lateral wobble added to each traversal, meters.
    pub lateral_jitter: f64,
    /// Radians.
    pub heading_jitter: f64,
    pub noise: NoiseModel,
    pub scan: ScanParams,
    pub frame_interval_ns: i64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            traversals: 3,
            test_traversals: 1,
            frames_per_traversal: 64,
            landmarks: 30,
            dynamic_objects: 0,
            extent: 30.0,
            route_radius: 10.0,
            lateral_jitter: 0.0,
            heading_jitter: 0.0,
            noise: NoiseModel::none(),
            scan: ScanParams::desk(),
            frame_interval_ns: 250_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub name: String,
    pub split: Split,
    pub trajectory: Vec<Pose>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub world: SimWorld,
    pub traversals: Vec<Traversal>,
    pub scan: ScanParams,
}

pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    if spec.traversals == 0 || spec.frames_per_traversal == 0 {
        return Err(Error::config("benchmark needs at least one traversal and one frame"));
    }
    if spec.test_traversals > spec.traversals {
        return Err(Error::config("more test traversals than traversals"));
    }
    let mut world = SimWorld::random(spec.landmarks, spec.extent, spec.route_radius, 2.0, spec.seed)
        .with_random_dynamics(spec.dynamic_objects, spec.extent, spec.seed.wrapping_add(1));
    world.noise = spec.noise;
    world.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let n = spec.frames_per_traversal;
    let traversals = (0..spec.traversals)
        .map(|k| {
            let wobble_phase = rng.gen_range(0.0..TAU);
            let wobble_amp = spec.lateral_jitter * rng.gen_range(-1.0..=1.0);
            let heading_phase = rng.gen_range(0.0..TAU);
            let heading_amp = spec.heading_jitter * rng.gen_range(-1.0..=1.0);
            // Later traversals start between the earlier ones' frames.
            let start = if k == 0 { 0.0 } else { rng.gen_range(0.0..1.0) };
            let t0 = (k as i64 + 1) * 1_000_000_000_000;
            let trajectory = (0..n)
                .map(|i| {
                    let phi = TAU * (i as f64 + start) / n as f64;
                    let r = spec.route_radius + wobble_amp * (2.0 * phi + wobble_phase).sin();
                    let yaw = phi + FRAC_PI_2 + heading_amp * (3.0 * phi + heading_phase).sin();
                    Pose::new(
                        [r * phi.cos(), r * phi.sin(), 0.0],
                        Quaternion::from_yaw(yaw),
                        t0 + i as i64 * spec.frame_interval_ns,
                    )
                })
                .collect();
            let split = if k >= spec.traversals - spec.test_traversals { Split::Test } else { Split::Train };
            Traversal {
                name: format!("traversal{k}"),
                split,
                trajectory,
                noise_seed: spec.seed.wrapping_mul(31).wrapping_add(k as u64 + 100),
            }
        })
        .collect();
    Ok(Benchmark {
        world,
        traversals,
        scan: spec.scan,
    })
}

impl Benchmark {
    pub fn simulate(&self) -> Result<Dataset> {
        let sequences = self
            .traversals
            .iter()
            .map(|t| {
                Ok(Sequence {
                    name: t.name.clone(),
                    tag: "synthetic".into(),
                    split: t.split,
                    frames: simulate_sequence(&self.world, &t.trajectory, &self.scan, t.noise_seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { sequences })
    }

    pub fn write(&self, out_root: &Path, dtype: ScanDtype) -> Result<DatasetManifest> {
        let dataset = self.simulate()?;
        let mut manifest = DatasetManifest::new(out_root);
        for seq in &dataset.sequences {
            let (scan_dir, pose_file) = write_sequence(out_root, &seq.name, &seq.frames, dtype)?;
            manifest.sequences.push(SequenceEntry {
                name: seq.name.clone(),
                scan_dir,
                pose_file,
                tag: seq.tag.clone(),
                split: seq.split,
            });
        }
        manifest.save()?;
        Ok(manifest)
    }
}
