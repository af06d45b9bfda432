//! Training: configuration, the Adam optimizer and the window-batched loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{load_dataset, window_starts, DatasetManifest, ImageDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ModelPredictor};
use crate::geometry::CartesianSpec;
use crate::losses::{sequence_loss_grad, LossBalance, LossSettings};
use crate::network::{Model, ModelConfig, TranslationScale};
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Which frames pick the "best" checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    /// Single-frame error on the training frames.
    #[default]
    Train,
    /// Single-frame error on the test split.
    Test,
    /// Lowest training loss.
    None,
}

/// Per-epoch learning rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` at the first epoch down to `min_learning_rate`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub min_learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Frames per window.
    pub window: usize,
    pub window_stride: usize,
    pub beta0: f64,
    pub gamma0: f64,
    pub seed: u64,
    pub loss: LossSettings,
    pub validation: Validation,
    pub adam: AdamConfig,
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    pub image: CartesianSpec,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            min_learning_rate: 0.0,
            batch_size: 8,
            window: 4,
            window_stride: 1,
            beta0: 0.0,
            gamma0: -3.0,
            seed: 0,
            loss: LossSettings::default(),
            validation: Validation::Train,
            adam: AdamConfig::default(),
            manifest: None,
            image: CartesianSpec::desk(),
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = (epoch.max(1) - 1) as f64 / self.epochs.max(1) as f64;
                let (hi, lo) = (self.learning_rate, self.min_learning_rate);
                lo + (hi - lo) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Zero epochs is allowed and yields the initialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be nonnegative and finite"));
        }
        if !(0.0..=self.learning_rate).contains(&self.min_learning_rate) {
            return Err(Error::config("min_learning_rate must lie in [0, learning_rate]"));
        }
        if self.batch_size == 0 || self.window == 0 || self.window_stride == 0 {
            return Err(Error::config("batch_size, window and window_stride must be positive"));
        }
        if !(self.beta0.is_finite() && self.gamma0.is_finite()) {
            return Err(Error::config("initial balance factors must be finite"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::config("adam needs beta1, beta2 in [0, 1) and epsilon > 0"));
        }
        if self.image.height != self.model.input_height || self.image.width != self.model.input_width {
            return Err(Error::config(format!(
                "image is {}x{} but the model expects {}x{}",
                self.image.height, self.image.width, self.model.input_height, self.model.input_width
            )));
        }
        if !(self.image.alpha > 0.0) {
            return Err(Error::config("image alpha must be positive"));
        }
        Ok(())
    }

    pub fn initial_balance(&self) -> LossBalance {
        LossBalance::new(self.beta0, self.gamma0)
    }

    /// Loads the manifest and renders every scan with `self.image`.
    pub fn load_images(&self) -> Result<ImageDataset> {
        let path = self
            .manifest
            .as_ref()
            .ok_or_else(|| Error::config("no dataset manifest configured"))?;
        load_dataset(&DatasetManifest::load(path)?)?.to_images(&self.image)
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            if lr != 0.0 {
                let mhat = self.m[i] / c1;
                let vhat = self.v[i] / c2;
                params[i] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean window loss over the epoch, measured before each step.
    pub loss: f64,
    pub global_loss: f64,
    pub relative_loss: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Mean single-frame errors on the validation frames, if any.
    pub val_translation: Option<f64>,
    pub val_rotation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.loss).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Writes `last.ckpt` and `best.ckpt` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// SHA-256 over sequence names, timestamps, poses and pixels.
pub fn dataset_hash(data: &ImageDataset) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in &data.sequences {
        h.update(s.name.as_bytes());
        h.update([0u8]);
        h.update(s.split.to_string().as_bytes());
        for f in &s.frames {
            h.update(f.pose.timestamp.to_le_bytes());
            for x in f.pose.p.iter().chain(&f.pose.q.as_array()) {
                h.update(x.to_bits().to_le_bytes());
            }
            for x in f.image.pixels() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

struct State<'a> {
    config: &'a TrainConfig,
    model: Model,
    /// Network parameters followed by the balance factors.
    trainable: Vec<f64>,
    n_net: usize,
    separate: bool,
}

impl State<'_> {
    fn balance(&self) -> LossBalance {
        LossBalance::new(self.trainable[self.n_net], self.trainable[self.n_net + 1])
    }

    fn relative_balance(&self) -> Option<LossBalance> {
        self.separate
            .then(|| LossBalance::new(self.trainable[self.n_net + 2], self.trainable[self.n_net + 3]))
    }

    fn checkpoint(&self, epoch: usize, data_hash: &str) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.trainable[..self.n_net].to_vec(),
            balance: self.balance(),
            relative_balance: self.relative_balance(),
            translation_scale: self.model.translation_scale,
            epoch,
            data_hash: data_hash.to_string(),
        }
    }
}

/// Loads the configured manifest, then trains.
pub fn train_from_config(config: &TrainConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    let data = config.load_images()?;
    train(config, &data, options)
}

/// Minimizes the mean window loss over the training split with Adam,
/// updating network parameters and balance factors with one learning rate.
pub fn train(config: &TrainConfig, data: &ImageDataset, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let train_seqs: Vec<_> = data.split(Split::Train).collect();
    if train_seqs.iter().all(|s| s.frames.is_empty()) {
        return Err(Error::config("training split is empty"));
    }
    let mut model = Model::new(&config.model)?;
    model.translation_scale =
        TranslationScale::fit(train_seqs.iter().flat_map(|s| s.frames.iter().map(|f| f.pose.p)));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainable = model.init_params(&mut rng);
    let n_net = trainable.len();
    trainable.extend([config.beta0, config.gamma0]);
    let separate = config.loss.separate_relative_balance;
    if separate {
        trainable.extend([config.beta0, config.gamma0]);
    }
    let mut state = State {
        config,
        model,
        trainable,
        n_net,
        separate,
    };
    let hash = dataset_hash(data);

    let mut windows: Vec<(usize, usize)> = Vec::new();
    for (si, s) in train_seqs.iter().enumerate() {
        windows.extend(
            window_starts(s.frames.len(), config.window, config.window_stride)
                .into_iter()
                .map(|st| (si, st)),
        );
    }
    if windows.is_empty() && config.epochs > 0 {
        return Err(Error::config(format!(
            "no training sequence has {} frames for one window",
            config.window
        )));
    }

    let val_frames: Vec<_> = match config.validation {
        Validation::Train => data.split(Split::Train).collect(),
        Validation::Test => data.split(Split::Test).collect(),
        Validation::None => Vec::new(),
    };
    let val_data = ImageDataset {
        sequences: val_frames.into_iter().cloned().collect(),
    };

    let mut adam = Adam::new(state.trainable.len(), config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = state.checkpoint(0, &hash);
    let mut best_score = f64::INFINITY;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        windows.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let (mut sum, mut sum_g, mut sum_r) = (0.0, 0.0, 0.0);
        for batch in windows.chunks(config.batch_size) {
            step += 1;
            let (grads, loss) = batch_gradient(&state, &train_seqs, batch)?;
            if !loss.iter().all(|x| x.is_finite()) || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: loss[0],
                });
            }
            sum += loss[0] * batch.len() as f64;
            sum_g += loss[1] * batch.len() as f64;
            sum_r += loss[2] * batch.len() as f64;
            adam.step(&mut state.trainable, &grads, lr);
        }
        let n = windows.len() as f64;
        let bal = state.balance();
        let mut log = EpochLog {
            epoch,
            loss: sum / n,
            global_loss: sum_g / n,
            relative_loss: sum_r / n,
            beta: bal.beta,
            gamma: bal.gamma,
            val_translation: None,
            val_rotation: None,
        };
        let current = state.checkpoint(epoch, &hash);
        let score = if val_data.sequences.iter().any(|s| !s.frames.is_empty()) {
            let predictor = ModelPredictor::new(&state.model, &state.trainable[..n_net]);
            let report = evaluate(&predictor, &val_data, None)?;
            log.val_translation = Some(report.mean_translation);
            log.val_rotation = Some(report.mean_rotation);
            report.mean_translation
        } else {
            log.loss
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (global {:.5}, relative {:.5}) beta {:.4} gamma {:.4}{}",
            log.loss,
            log.global_loss,
            log.relative_loss,
            log.beta,
            log.gamma,
            log.val_translation
                .map(|t| format!(" val {t:.3} m / {:.3} deg", log.val_rotation.unwrap_or(f64::NAN)))
                .unwrap_or_default()
        );
        if score < best_score {
            best_score = score;
            best = current.clone();
        }
        if let Some(dir) = &options.checkpoint_dir {
            current.save(&dir.join("last.ckpt"))?;
            best.save(&dir.join("best.ckpt"))?;
        }
        history.push(log);
    }

    let last = state.checkpoint(config.epochs, &hash);
    if config.epochs == 0 {
        best = last.clone();
        if let Some(dir) = &options.checkpoint_dir {
            last.save(&dir.join("last.ckpt"))?;
            last.save(&dir.join("best.ckpt"))?;
        }
    }
    Ok(TrainOutcome { last, best, history })
}

/// Gradient of the mean window loss over `batch`, plus the mean
/// `[total, global, relative]` losses. Each distinct frame runs forward and
/// backward once however many windows share it.
fn batch_gradient(
    state: &State<'_>,
    seqs: &[&crate::data::ImageSequence],
    batch: &[(usize, usize)],
) -> Result<(Vec<f64>, [f64; 3])> {
    let cfg = state.config;
    let n_net = state.n_net;
    let params = &state.trainable[..n_net];
    let mut slots: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(s, start) in batch {
        for i in start..start + cfg.window {
            let next = slots.len();
            slots.entry((s, i)).or_insert(next);
        }
    }
    let mut frames: Vec<(usize, usize)> = vec![(0, 0); slots.len()];
    for (&key, &slot) in &slots {
        frames[slot] = key;
    }
    let traces = par_map(&frames, |&(s, i)| state.model.forward_trace(params, &seqs[s].frames[i].image))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / batch.len() as f64;
    let bal = state.balance();
    let rel = state.relative_balance();
    let mut d_out = vec![[0.0f64; 6]; frames.len()];
    let mut grads = vec![0.0; state.trainable.len()];
    let mut loss = [0.0; 3];
    for &(s, start) in batch {
        let idx: Vec<usize> = (start..start + cfg.window).map(|i| slots[&(s, i)]).collect();
        let preds: Vec<_> = idx.iter().map(|&k| traces[k].output).collect();
        let gt: Vec<Pose> = (start..start + cfg.window).map(|i| seqs[s].frames[i].pose).collect();
        let g = sequence_loss_grad(&preds, &gt, &bal, rel.as_ref(), &cfg.loss)?;
        loss[0] += g.loss.total * scale;
        loss[1] += g.loss.global * scale;
        loss[2] += g.loss.relative * scale;
        for (k, d) in idx.iter().zip(&g.d_preds) {
            for c in 0..6 {
                d_out[*k][c] += d[c] * scale;
            }
        }
        grads[n_net] += g.d_global_balance[0] * scale;
        grads[n_net + 1] += g.d_global_balance[1] * scale;
        if state.separate {
            grads[n_net + 2] += g.d_relative_balance[0] * scale;
            grads[n_net + 3] += g.d_relative_balance[1] * scale;
        }
    }

    let work: Vec<usize> = (0..frames.len()).collect();
    let partials = par_map(&work, |&k| {
        let mut g = vec![0.0; n_net];
        state.model.backward(params, &traces[k], &d_out[k], &mut g);
        g
    });
    for p in &partials {
        for (a, b) in grads[..n_net].iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_with_zero_rate_is_inert() {
        let mut p = vec![0.3, -1.5, 0.0, -0.0, 1e-300];
        let before = p.clone();
        let mut adam = Adam::new(p.len(), AdamConfig::default());
        adam.step(&mut p, &[1.0, -2.0, 3.0, 0.0, 1e10], 0.0);
        assert_eq!(
            p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            before.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 1e-2,
            min_learning_rate: 1e-4,
            lr_schedule: LrSchedule::Cosine,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(1), 1e-2);
        assert!(cfg.learning_rate_at(10) > 1e-4 && cfg.learning_rate_at(10) < 1e-3);
        assert!((1..10).all(|e| cfg.learning_rate_at(e + 1) < cfg.learning_rate_at(e)));
        let flat = TrainConfig::default();
        assert_eq!(flat.learning_rate_at(7), flat.learning_rate);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0];
        let mut adam = Adam::new(2, AdamConfig::default());
        adam.step(&mut p, &[0.5, -4.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = TrainConfig::from_toml("epochs = 3\n[loss]\ngeometric_constraints = false\n").unwrap();
        assert_eq!(partial.epochs, 3);
        assert!(!partial.loss.geometric_constraints);
        assert!(TrainConfig::from_toml("epoch = 3").is_err());
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
    }
}
