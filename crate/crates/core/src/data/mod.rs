//! Datasets: on-disk format, loading, windowing and a synthetic radar world.

pub mod format;
pub mod sim;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian_image, CartesianImage, CartesianSpec, PolarScan};
use crate::pose::Pose;

pub use format::{DatasetManifest, ScanDtype, ScanMeta, SequenceEntry, Split};
pub use sim::{
    build_benchmark, generate_synthetic_dataset, loop_trajectory, simulate_scan, simulate_sequence,
    Benchmark, BenchmarkSpec, DynamicObject, Landmark, NoiseModel, ScanParams, SimWorld,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scan: PolarScan,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub tag: String,
    pub split: Split,
    /// Sorted by scan timestamp.
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn to_images(&self, spec: &CartesianSpec) -> Result<ImageSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                Ok(ImageFrame {
                    image: polar_to_cartesian_image(&f.scan, spec)?,
                    pose: f.pose,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageSequence {
            name: self.name.clone(),
            tag: self.tag.clone(),
            split: self.split,
            frames,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    /// `(name, frame count)` per sequence, in manifest order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.sequences.iter().map(|s| (s.name.clone(), s.frames.len())).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sequence> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn to_images(&self, spec: &CartesianSpec) -> Result<ImageDataset> {
        Ok(ImageDataset {
            sequences: self
                .sequences
                .iter()
                .map(|s| s.to_images(spec))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub image: CartesianImage,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub name: String,
    pub tag: String,
    pub split: Split,
    pub frames: Vec<ImageFrame>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageDataset {
    pub sequences: Vec<ImageSequence>,
}

impl ImageDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageSequence> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.split(split).map(|s| s.frames.len()).sum()
    }
}

/// N consecutive frames of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceWindow<'a> {
    pub start: usize,
    pub images: Vec<&'a CartesianImage>,
    pub poses: Vec<Pose>,
}

impl SequenceWindow<'_> {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Start indices of the windows [`make_windows`] emits.
pub fn window_starts(len: usize, n: usize, stride: usize) -> Vec<usize> {
    assert!(n >= 1 && stride >= 1, "window length and stride must be positive");
    if len < n {
        return Vec::new();
    }
    (0..=len - n).step_by(stride).collect()
}

pub fn make_windows(seq: &ImageSequence, n: usize, stride: usize) -> Vec<SequenceWindow<'_>> {
    window_starts(seq.frames.len(), n, stride)
        .into_iter()
        .map(|start| {
            let frames = &seq.frames[start..start + n];
            SequenceWindow {
                start,
                images: frames.iter().map(|f| &f.image).collect(),
                poses: frames.iter().map(|f| f.pose).collect(),
            }
        })
        .collect()
}

/// Loads every sequence listed in the manifest, pairing each scan with its
/// nearest pose in time.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let sequences = manifest
        .sequences
        .iter()
        .map(|entry| load_sequence(manifest, entry))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset { sequences };
    for (name, n) in dataset.counts() {
        log::info!("sequence {name}: {n} frames");
    }
    Ok(dataset)
}

fn load_sequence(manifest: &DatasetManifest, entry: &SequenceEntry) -> Result<Sequence> {
    let dir = manifest.resolve(&entry.scan_dir);
    let mut scans = Vec::new();
    for item in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = item.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("npy") {
            continue;
        }
        scans.push(read_timestamped_scan(&path)?);
    }
    if scans.is_empty() {
        return Err(Error::EmptySequence(entry.name.clone()));
    }
    scans.sort_by_key(|s| s.timestamp);
    let poses = format::read_poses(&manifest.resolve(&entry.pose_file))?;
    let frames = scans
        .into_iter()
        .map(|scan| {
            let pose = nearest_pose(&poses, scan.timestamp, manifest.pose_tolerance_ns).ok_or_else(|| {
                Error::MissingPose {
                    sequence: entry.name.clone(),
                    timestamp_ns: scan.timestamp,
                    tolerance_ns: manifest.pose_tolerance_ns,
                }
            })?;
            Ok(Frame { scan, pose })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        name: entry.name.clone(),
        tag: entry.tag.clone(),
        split: entry.split,
        frames,
    })
}

fn read_timestamped_scan(path: &Path) -> Result<PolarScan> {
    let stem: i64 = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, "scan file name is not a nanosecond timestamp"))?;
    let scan = format::read_scan(path)?;
    if scan.timestamp != stem {
        return Err(Error::parse(
            path,
            format!("metadata timestamp {} disagrees with file name", scan.timestamp),
        ));
    }
    Ok(scan)
}

/// `poses` must be sorted by timestamp.
fn nearest_pose(poses: &[Pose], t: i64, tolerance: i64) -> Option<Pose> {
    let i = poses.partition_point(|p| p.timestamp < t);
    let before = i.checked_sub(1).map(|k| poses[k]);
    let after = poses.get(i).copied();
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if t - b.timestamp <= a.timestamp - t {
                b
            } else {
                a
            }
        }
        (Some(p), None) | (None, Some(p)) => p,
        (None, None) => return None,
    };
    ((best.timestamp - t).abs() <= tolerance).then_some(best)
}
