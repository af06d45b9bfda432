//! Single-frame evaluation and error statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{DatasetManifest, ImageDataset, ImageFrame, Split};
use crate::error::{Error, Result};
use crate::geometry::CartesianImage;
use crate::network::Model;
use crate::pose::{pose_error, Pose};
use crate::train::par_map;

/// Estimates a pose from one image and nothing else.
pub trait PosePredictor: Sync {
    fn predict(&self, image: &CartesianImage) -> Result<Pose>;
}

pub struct ModelPredictor<'a> {
    model: &'a Model,
    params: &'a [f64],
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model, params: &'a [f64]) -> Self {
        Self { model, params }
    }
}

impl PosePredictor for ModelPredictor<'_> {
    fn predict(&self, image: &CartesianImage) -> Result<Pose> {
        Ok(self.model.forward(self.params, image)?.to_pose(image.timestamp))
    }
}

/// Answers with the ground-truth pose recorded for the image timestamp.
pub struct OraclePredictor {
    poses: HashMap<i64, Pose>,
}

impl OraclePredictor {
    pub fn new(data: &ImageDataset) -> Self {
        Self {
            poses: data
                .sequences
                .iter()
                .flat_map(|s| s.frames.iter().map(|f| (f.image.timestamp, f.pose)))
                .collect(),
        }
    }
}

impl PosePredictor for OraclePredictor {
    fn predict(&self, image: &CartesianImage) -> Result<Pose> {
        self.poses
            .get(&image.timestamp)
            .copied()
            .ok_or_else(|| Error::domain(format!("no recorded pose for timestamp {}", image.timestamp)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub timestamp: i64,
    pub predicted: Pose,
    pub ground_truth: Pose,
    pub translation_error: f64,
    /// Degrees.
    pub rotation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub tag: String,
    pub frames: Vec<FrameResult>,
    pub mean_translation: f64,
    pub mean_rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
    /// Mean over every frame of every sequence.
    pub mean_translation: f64,
    pub mean_rotation: f64,
}

impl EvalReport {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    pub fn translation_errors(&self) -> Vec<f64> {
        self.frames().map(|f| f.translation_error).collect()
    }

    pub fn rotation_errors(&self) -> Vec<f64> {
        self.frames().map(|f| f.rotation_error).collect()
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameResult> {
        self.sequences.iter().flat_map(|s| s.frames.iter())
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

/// Empirical CDF as `(error, fraction ≤ error)` pairs in ascending error.
pub fn cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect()
}

/// Predicts every frame of the chosen split (all sequences for `None`)
/// independently and aggregates the errors.
pub fn evaluate(predictor: &dyn PosePredictor, data: &ImageDataset, split: Option<Split>) -> Result<EvalReport> {
    let mut sequences = Vec::new();
    for seq in data.sequences.iter().filter(|s| split.is_none_or(|sp| s.split == sp)) {
        let frames = par_map(&seq.frames, |f: &ImageFrame| {
            let predicted = predictor.predict(&f.image)?;
            let (t, r) = pose_error(&predicted, &f.pose);
            Ok(FrameResult {
                timestamp: f.image.timestamp,
                predicted,
                ground_truth: f.pose,
                translation_error: t,
                rotation_error: r,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        sequences.push(SequenceReport {
            name: seq.name.clone(),
            tag: seq.tag.clone(),
            mean_translation: mean(frames.iter().map(|f| f.translation_error)),
            mean_rotation: mean(frames.iter().map(|f| f.rotation_error)),
            frames,
        });
    }
    let all = || sequences.iter().flat_map(|s| s.frames.iter());
    let n = all().count();
    let (mean_translation, mean_rotation) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            all().map(|f| f.translation_error).sum::<f64>() / n as f64,
            all().map(|f| f.rotation_error).sum::<f64>() / n as f64,
        )
    };
    Ok(EvalReport {
        sequences,
        mean_translation,
        mean_rotation,
    })
}

/// Evaluates a checkpoint on already rendered images.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &ImageDataset, split: Option<Split>) -> Result<EvalReport> {
    let model = ckpt.model()?;
    let cfg = model.config();
    if let Some(f) = data.sequences.iter().flat_map(|s| s.frames.first()).next() {
        if f.image.height() != cfg.input_height || f.image.width() != cfg.input_width {
            return Err(Error::config(format!(
                "images are {}x{} but the checkpoint expects {}x{}",
                f.image.height(),
                f.image.width(),
                cfg.input_height,
                cfg.input_width
            )));
        }
    }
    evaluate(&ModelPredictor::new(&model, &ckpt.params), data, split)
}

/// Loads a manifest, renders it with the checkpoint's image settings and evaluates.
pub fn evaluate_manifest(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Option<Split>) -> Result<EvalReport> {
    let data = crate::data::load_dataset(manifest)?.to_images(&ckpt.config.image)?;
    evaluate_checkpoint(ckpt, &data, split)
}
