//! On-disk layout of a dataset.
//!
//! ```text
//! <root>/manifest.toml           sequence list (name, tag, split, paths)
//! <root>/<seq>/poses.csv         timestamp_ns,px,py,pz,qu,qx,qy,qz
//! <root>/<seq>/scans/<ts>.npy    [azimuths × range_bins] u8 or f32 array
//! <root>/<seq>/scans/<ts>.meta   key = value sidecar (see ScanMeta)
//! ```
//!
//! `u8` intensities are scaled by `1/255` on load.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PolarScan;
use crate::pose::{Pose, Quaternion};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const POSE_HEADER: &str = "timestamp_ns,px,py,pz,qu,qx,qy,qz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanDtype {
    U8,
    #[default]
    F32,
}

/// Sidecar metadata stored next to each scan array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanMeta {
    pub azimuths: usize,
    pub range_bins: usize,
    pub range_resolution: f64,
    pub timestamp_ns: i64,
    #[serde(default)]
    pub dtype: ScanDtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    /// Relative to the manifest directory.
    pub scan_dir: PathBuf,
    pub pose_file: PathBuf,
    #[serde(default)]
    pub tag: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Directory the relative paths resolve against; set on load.
    #[serde(skip)]
    pub root: PathBuf,
    /// Largest accepted |scan timestamp - pose timestamp|.
    #[serde(default = "default_tolerance")]
    pub pose_tolerance_ns: i64,
    pub sequences: Vec<SequenceEntry>,
}

fn default_tolerance() -> i64 {
    5_000_000
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            pose_tolerance_ns: default_tolerance(),
            sequences: Vec::new(),
        }
    }

    /// Accepts either the manifest file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::parse(&file, e))?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut names: Vec<&str> = m.sequences.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(&file, "duplicate sequence names"));
        }
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let file = self.root.join(MANIFEST_FILE);
        let text = toml::to_string_pretty(self).map_err(|e| Error::parse(&file, e))?;
        fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

pub fn scan_path(dir: &Path, timestamp: i64) -> PathBuf {
    dir.join(format!("{timestamp}.npy"))
}

fn meta_path(npy: &Path) -> PathBuf {
    npy.with_extension("meta")
}

pub fn write_scan(dir: &Path, scan: &PolarScan, dtype: ScanDtype) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = scan_path(dir, scan.timestamp);
    let shape = (scan.azimuths(), scan.range_bins());
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let writer = BufWriter::new(file);
    let res = match dtype {
        ScanDtype::F32 => Array2::from_shape_vec(shape, scan.intensities().to_vec())
            .expect("scan shape")
            .write_npy(writer),
        ScanDtype::U8 => Array2::from_shape_vec(
            shape,
            scan.intensities()
                .iter()
                .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        )
        .expect("scan shape")
        .write_npy(writer),
    };
    res.map_err(|e| Error::parse(&path, e))?;
    let meta = ScanMeta {
        azimuths: shape.0,
        range_bins: shape.1,
        range_resolution: scan.range_resolution,
        timestamp_ns: scan.timestamp,
        dtype,
    };
    let mp = meta_path(&path);
    let text = toml::to_string(&meta).map_err(|e| Error::parse(&mp, e))?;
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    Ok(path)
}

pub fn read_scan(npy: &Path) -> Result<PolarScan> {
    let mp = meta_path(npy);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: ScanMeta = toml::from_str(&text).map_err(|e| Error::parse(&mp, e))?;
    let file = File::open(npy).map_err(|e| Error::io(npy, e))?;
    let reader = BufReader::new(file);
    let (shape, data): ((usize, usize), Vec<f32>) = match meta.dtype {
        ScanDtype::F32 => {
            let a = Array2::<f32>::read_npy(reader).map_err(|e| Error::parse(npy, e))?;
            (a.dim(), a.iter().copied().collect())
        }
        ScanDtype::U8 => {
            let a = Array2::<u8>::read_npy(reader).map_err(|e| Error::parse(npy, e))?;
            (a.dim(), a.iter().map(|&x| x as f32 / 255.0).collect())
        }
    };
    if shape != (meta.azimuths, meta.range_bins) {
        return Err(Error::parse(
            npy,
            format!("array shape {shape:?} disagrees with metadata ({}, {})", meta.azimuths, meta.range_bins),
        ));
    }
    PolarScan::new(shape.0, shape.1, data, meta.range_resolution, meta.timestamp_ns).map_err(|e| Error::parse(npy, e))
}

/// Writes poses as CSV; values use the shortest round-trip float formatting.
pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = || -> std::io::Result<()> {
        writeln!(w, "{POSE_HEADER}")?;
        for p in poses {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                p.timestamp, p.p[0], p.p[1], p.p[2], p.q.u, p.q.v[0], p.q.v[1], p.q.v[2]
            )?;
        }
        w.flush()
    };
    out().map_err(|e| Error::io(path, e))
}

/// Reads a pose CSV (header optional), returning rows sorted by timestamp.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut poses = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        if line == 0 && rec.get(0).is_some_and(|f| f.parse::<i64>().is_err()) {
            continue;
        }
        if rec.len() != 8 {
            return Err(Error::parse(path, format!("row {}: expected 8 fields, got {}", line + 1, rec.len())));
        }
        let ts: i64 = rec[0]
            .parse()
            .map_err(|e| Error::parse(path, format!("row {}: timestamp: {e}", line + 1)))?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse()
                .map_err(|e| Error::parse(path, format!("row {}: field {}: {e}", line + 1, k + 2)))?;
        }
        let q = Quaternion::new(v[3], [v[4], v[5], v[6]]);
        if !q.is_unit() {
            return Err(Error::parse(path, format!("row {}: quaternion is not unit-norm", line + 1)));
        }
        poses.push(Pose::new([v[0], v[1], v[2]], q, ts));
    }
    poses.sort_by_key(|p| p.timestamp);
    Ok(poses)
}
