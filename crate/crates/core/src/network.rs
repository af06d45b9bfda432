//! Radar encoder, two-branch pose regressor and the assembled model
//! `image -> mask -> encoder -> regressor -> LogPose`.

use serde::{Deserialize, Serialize};

use crate::attention::{image_tensor, Attention, AttentionConfig, AttentionMode, AttentionTrace};
use crate::error::{Error, Result};
use crate::geometry::CartesianImage;
use crate::layers::{Conv, ConvTrace, Linear, Mlp};
use crate::params::{he_bound, lecun_bound, ParamLayout};
use crate::pose::LogPose;
use crate::tensor::{
    avgpool2, avgpool2_backward, concat, global_avg_pool, global_avg_pool_backward, split, Activation, ConvShape,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    #[default]
    Dense,
    Residual,
}

impl std::str::FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "residual" => Ok(Self::Residual),
            other => Err(Error::config(format!("unknown encoder variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthPreset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub feature_dim: usize,
    pub preset: DepthPreset,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::Dense,
            feature_dim: 256,
            preset: DepthPreset::Desk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    /// Shared trunk widths; empty means the branches read `z` directly.
    pub trunk: Vec<usize>,
    /// Hidden widths of each branch before its 3-wide output layer.
    pub branch: Vec<usize>,
    pub activation: Activation,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self::for_features(256)
    }
}

impl RegressorConfig {
    pub fn for_features(f: usize) -> Self {
        Self {
            trunk: vec![(f / 2).max(1)],
            branch: vec![(f / 4).max(1)],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk.is_empty() && self.branch.is_empty() {
            return Err(Error::config("regressor needs at least one hidden layer"));
        }
        if self.trunk.iter().chain(&self.branch).any(|&w| w == 0) {
            return Err(Error::config("regressor widths must be positive"));
        }
        Ok(())
    }
}

/// Full architecture description; the parameter layout is a pure function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub attention_mode: AttentionMode,
    pub attention: AttentionConfig,
    pub encoder: EncoderConfig,
    pub regressor: RegressorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            attention_mode: AttentionMode::Nested,
            attention: AttentionConfig::desk(),
            encoder: EncoderConfig::default(),
            regressor: RegressorConfig::for_features(256),
        }
    }

    pub fn full() -> Self {
        Self {
            input_height: 224,
            input_width: 224,
            attention_mode: AttentionMode::Nested,
            attention: AttentionConfig::full(),
            encoder: EncoderConfig {
                variant: EncoderVariant::Dense,
                feature_dim: 1024,
                preset: DepthPreset::Full,
            },
            regressor: RegressorConfig::for_features(1024),
        }
    }
}

// ---------------------------------------------------------------------------
// Encoders

struct DenseArch {
    stem: usize,
    growth: usize,
    layers: &'static [usize],
    compression: Option<f64>,
}

impl DenseArch {
    fn of(preset: DepthPreset) -> Self {
        match preset {
            DepthPreset::Desk => Self {
                stem: 16,
                growth: 8,
                layers: &[2, 2, 2, 2],
                compression: None,
            },
            DepthPreset::Full => Self {
                stem: 64,
                growth: 32,
                layers: &[6, 12, 24, 16],
                compression: Some(0.5),
            },
        }
    }
}

struct ResidualArch {
    stem: usize,
    widths: &'static [usize],
    blocks: usize,
}

impl ResidualArch {
    fn of(preset: DepthPreset) -> Self {
        match preset {
            DepthPreset::Desk => Self {
                stem: 16,
                widths: &[16, 32, 64, 128],
                blocks: 1,
            },
            DepthPreset::Full => Self {
                stem: 64,
                widths: &[64, 128, 256, 512],
                blocks: 2,
            },
        }
    }
}

#[derive(Debug, Clone)]
struct DenseBlock {
    input_channels: usize,
    layers: Vec<Conv>,
    transition: Option<Conv>,
    pool_after: bool,
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
}

#[derive(Debug, Clone)]
struct ResidualStage {
    down: Option<Conv>,
    blocks: Vec<ResidualBlock>,
}

#[derive(Debug, Clone)]
enum Backbone {
    Dense(Vec<DenseBlock>),
    Residual(Vec<ResidualStage>),
}

const STANDARDIZE_EPS: f64 = 1e-8;

/// Zero mean, unit variance across the vector; returns `1/σ` for the backward pass.
fn standardize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + STANDARDIZE_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

fn standardize_backward(y: &[f64], inv_std: f64, dy: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    dy.iter()
        .zip(y)
        .map(|(d, yv)| inv_std * (d - mean_dy - yv * mean_dy_y))
        .collect()
}

/// Backbone over the 3-channel broadcast image, global average pooling, a
/// fully connected layer to `feature_dim` and per-sample standardization of
/// that feature vector.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    stem: Conv,
    backbone: Backbone,
    fc: Linear,
    /// Spatial size divisor required by the downsampling stages.
    divisor: usize,
}

enum StageTrace {
    Dense {
        layers: Vec<ConvTrace>,
        out_channels: usize,
        out_hw: (usize, usize),
        transition: Option<ConvTrace>,
    },
    Residual {
        down: Option<ConvTrace>,
        blocks: Vec<(ConvTrace, ConvTrace, Tensor)>,
    },
}

pub struct EncoderTrace {
    stem: ConvTrace,
    stages: Vec<StageTrace>,
    pooled: Vec<f64>,
    last_hw: (usize, usize),
    fc_out: Vec<f64>,
    inv_std: f64,
    pub z: Vec<f64>,
}

impl Encoder {
    pub fn new(layout: &mut ParamLayout, config: &EncoderConfig) -> Result<Self> {
        if config.feature_dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        let relu = Activation::Relu;
        let conv = |layout: &mut ParamLayout, name: &str, cin, cout, k, stride, act: Activation| {
            let shape = ConvShape { cin, cout, k, stride };
            let bound = if act == Activation::Identity {
                lecun_bound(shape.fan_in())
            } else {
                he_bound(shape.fan_in())
            };
            Conv::new(layout, name, shape, act, bound)
        };
        let (stem, backbone, channels, divisor) = match config.variant {
            EncoderVariant::Dense => {
                let arch = DenseArch::of(config.preset);
                let stem = conv(layout, "encoder.stem", 3, arch.stem, 3, 2, relu);
                let mut c = arch.stem;
                let mut blocks = Vec::new();
                let nb = arch.layers.len();
                for (b, &n_layers) in arch.layers.iter().enumerate() {
                    let input_channels = c;
                    let layers = (0..n_layers)
                        .map(|l| {
                            conv(
                                layout,
                                &format!("encoder.block{b}.layer{l}"),
                                c + l * arch.growth,
                                arch.growth,
                                3,
                                1,
                                relu,
                            )
                        })
                        .collect();
                    c += n_layers * arch.growth;
                    let last = b + 1 == nb;
                    let transition = match (last, arch.compression) {
                        (false, Some(ratio)) => {
                            let out = ((c as f64 * ratio) as usize).max(1);
                            let t = conv(layout, &format!("encoder.transition{b}"), c, out, 1, 1, relu);
                            c = out;
                            Some(t)
                        }
                        _ => None,
                    };
                    blocks.push(DenseBlock {
                        input_channels,
                        layers,
                        transition,
                        pool_after: !last,
                    });
                }
                // stem stride, stem pool, and one pool between consecutive blocks
                (stem, Backbone::Dense(blocks), c, 1 << (1 + nb))
            }
            EncoderVariant::Residual => {
                let arch = ResidualArch::of(config.preset);
                let stem = conv(layout, "encoder.stem", 3, arch.stem, 3, 2, relu);
                let mut c = arch.stem;
                let mut stages = Vec::new();
                for (s, &width) in arch.widths.iter().enumerate() {
                    let down = (s > 0).then(|| conv(layout, &format!("encoder.stage{s}.down"), c, width, 3, 2, relu));
                    c = width;
                    let blocks = (0..arch.blocks)
                        .map(|b| ResidualBlock {
                            conv1: conv(layout, &format!("encoder.stage{s}.block{b}.conv1"), c, c, 3, 1, relu),
                            conv2: conv(
                                layout,
                                &format!("encoder.stage{s}.block{b}.conv2"),
                                c,
                                c,
                                3,
                                1,
                                Activation::Identity,
                            ),
                        })
                        .collect();
                    stages.push(ResidualStage { down, blocks });
                }
                (stem, Backbone::Residual(stages), c, 1 << (1 + arch.widths.len()))
            }
        };
        let fc = Linear::new(
            layout,
            "encoder.fc",
            channels,
            config.feature_dim,
            Activation::Identity,
            lecun_bound(channels),
        );
        Ok(Self {
            config: config.clone(),
            stem,
            backbone,
            fc,
            divisor,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h % self.divisor != 0 || w % self.divisor != 0 {
            return Err(Error::config(format!(
                "encoder input {h}x{w} must be divisible by {}",
                self.divisor
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], image: &Tensor) -> Result<EncoderTrace> {
        if image.c != 1 {
            return Err(Error::domain("encoder expects a single-channel image"));
        }
        if image.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("encoder input contains non-finite values"));
        }
        self.check_input(image.h, image.w)?;
        let rgb = concat(&[image, image, image]);
        let stem = self.stem.forward(params, &rgb);
        let mut x = avgpool2(&stem.out);
        let mut stages = Vec::new();
        match &self.backbone {
            Backbone::Dense(blocks) => {
                for block in blocks {
                    let mut feats = vec![x];
                    let mut layers = Vec::with_capacity(block.layers.len());
                    for layer in &block.layers {
                        let inp = if feats.len() == 1 {
                            feats[0].clone()
                        } else {
                            concat(&feats.iter().collect::<Vec<_>>())
                        };
                        let t = layer.forward(params, &inp);
                        feats.push(t.out.clone());
                        layers.push(t);
                    }
                    let mut out = concat(&feats.iter().collect::<Vec<_>>());
                    let out_channels = out.c;
                    let out_hw = (out.h, out.w);
                    let transition = block.transition.as_ref().map(|t| {
                        let tr = t.forward(params, &out);
                        out = tr.out.clone();
                        tr
                    });
                    x = if block.pool_after { avgpool2(&out) } else { out };
                    stages.push(StageTrace::Dense {
                        layers,
                        out_channels,
                        out_hw,
                        transition,
                    });
                }
            }
            Backbone::Residual(stage_defs) => {
                for stage in stage_defs {
                    let down = stage.down.as_ref().map(|d| {
                        let t = d.forward(params, &x);
                        x = t.out.clone();
                        t
                    });
                    let mut blocks = Vec::new();
                    for block in &stage.blocks {
                        let t1 = block.conv1.forward(params, &x);
                        let t2 = block.conv2.forward(params, &t1.out);
                        let mut y = x.clone();
                        y.add_assign(&t2.out);
                        Activation::Relu.forward_inplace(&mut y.data);
                        x = y.clone();
                        blocks.push((t1, t2, y));
                    }
                    stages.push(StageTrace::Residual { down, blocks });
                }
            }
        }
        let last_hw = (x.h, x.w);
        let pooled = global_avg_pool(&x);
        let fc_out = self.fc.forward(params, &pooled);
        let (z, inv_std) = standardize(&fc_out);
        Ok(EncoderTrace {
            stem,
            stages,
            pooled,
            last_hw,
            fc_out,
            inv_std,
            z,
        })
    }

    /// Returns the gradient w.r.t. the single-channel input image.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &EncoderTrace, dz: &[f64]) -> Tensor {
        let dfc = standardize_backward(&trace.z, trace.inv_std, dz);
        let dpooled = self.fc.backward(params, grads, &trace.pooled, &trace.fc_out, &dfc);
        let mut dx = global_avg_pool_backward(&dpooled, trace.last_hw.0, trace.last_hw.1);
        match &self.backbone {
            Backbone::Dense(blocks) => {
                for (block, st) in blocks.iter().zip(&trace.stages).rev() {
                    let StageTrace::Dense {
                        layers,
                        out_channels,
                        out_hw,
                        transition,
                    } = st
                    else {
                        unreachable!()
                    };
                    let mut d_out = if block.pool_after { avgpool2_backward(&dx) } else { dx };
                    if let (Some(t), Some(tr)) = (&block.transition, transition) {
                        d_out = t.backward(params, grads, tr, d_out, true).unwrap();
                    }
                    debug_assert_eq!((d_out.c, d_out.h, d_out.w), (*out_channels, out_hw.0, out_hw.1));
                    let growth = if block.layers.is_empty() { 0 } else { block.layers[0].shape.cout };
                    let mut channels = vec![block.input_channels];
                    channels.extend(std::iter::repeat(growth).take(block.layers.len()));
                    let mut feat_grads = split(&d_out, &channels);
                    for (l, layer) in block.layers.iter().enumerate().rev() {
                        let dy = feat_grads[l + 1].clone();
                        let d_in = layer.backward(params, grads, &layers[l], dy, true).unwrap();
                        let parts = if l == 0 { vec![d_in] } else { split(&d_in, &channels[..=l]) };
                        for (k, p) in parts.into_iter().enumerate() {
                            feat_grads[k].add_assign(&p);
                        }
                    }
                    dx = feat_grads.swap_remove(0);
                }
            }
            Backbone::Residual(stage_defs) => {
                for (stage, st) in stage_defs.iter().zip(&trace.stages).rev() {
                    let StageTrace::Residual { down, blocks } = st else {
                        unreachable!()
                    };
                    for (block, (t1, t2, y)) in stage.blocks.iter().zip(blocks).rev() {
                        let mut d = dx;
                        Activation::Relu.backward_inplace(&y.data, &mut d.data);
                        let dh1 = block.conv2.backward(params, grads, t2, d.clone(), true).unwrap();
                        let dskip = block.conv1.backward(params, grads, t1, dh1, true).unwrap();
                        d.add_assign(&dskip);
                        dx = d;
                    }
                    if let (Some(dconv), Some(dt)) = (&stage.down, down) {
                        dx = dconv.backward(params, grads, dt, dx, true).unwrap();
                    }
                }
            }
        }
        let dstem = avgpool2_backward(&dx);
        let drgb = self.stem.backward(params, grads, &trace.stem, dstem, true).unwrap();
        let plane = drgb.plane();
        let mut dimg = Tensor::zeros(1, drgb.h, drgb.w);
        for c in 0..3 {
            for (d, s) in dimg.data.iter_mut().zip(&drgb.data[c * plane..(c + 1) * plane]) {
                *d += s;
            }
        }
        dimg
    }
}

// ---------------------------------------------------------------------------
// Regressor

/// Shared trunk followed by independent translation and rotation heads.
#[derive(Debug, Clone)]
pub struct Regressor {
    config: RegressorConfig,
    trunk: Option<Mlp>,
    translation: Mlp,
    rotation: Mlp,
}

pub struct RegressorTrace {
    trunk: Vec<Vec<f64>>,
    translation: Vec<Vec<f64>>,
    rotation: Vec<Vec<f64>>,
}

impl RegressorTrace {
    pub fn output(&self) -> [f64; 6] {
        let t = self.translation.last().unwrap();
        let r = self.rotation.last().unwrap();
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }
}

impl Regressor {
    pub fn new(layout: &mut ParamLayout, feature_dim: usize, config: &RegressorConfig) -> Result<Self> {
        config.validate()?;
        let act = config.activation;
        let trunk = if config.trunk.is_empty() {
            None
        } else {
            let mut sizes = vec![feature_dim];
            sizes.extend(&config.trunk);
            Some(Mlp::new(layout, "regressor.trunk", &sizes, act, he_bound, he_bound, false))
        };
        let branch_in = config.trunk.last().copied().unwrap_or(feature_dim);
        let mut sizes = vec![branch_in];
        sizes.extend(&config.branch);
        sizes.push(3);
        let translation = Mlp::new(layout, "regressor.translation", &sizes, act, he_bound, lecun_bound, true);
        let rotation = Mlp::new(layout, "regressor.rotation", &sizes, act, he_bound, lecun_bound, true);
        Ok(Self {
            config: config.clone(),
            trunk,
            translation,
            rotation,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn rotation_params(&self) -> std::ops::Range<usize> {
        self.rotation.params_range()
    }

    pub fn translation_params(&self) -> std::ops::Range<usize> {
        self.translation.params_range()
    }

    pub fn translation_bias(&self) -> std::ops::Range<usize> {
        self.translation.layers.last().unwrap().bias_range()
    }

    pub fn forward(&self, params: &[f64], z: &[f64]) -> Result<RegressorTrace> {
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("feature vector contains non-finite values"));
        }
        let trunk = match &self.trunk {
            Some(t) => t.forward(params, z),
            None => vec![z.to_vec()],
        };
        let h = trunk.last().unwrap();
        let translation = self.translation.forward(params, h);
        let rotation = self.rotation.forward(params, h);
        Ok(RegressorTrace {
            trunk,
            translation,
            rotation,
        })
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &RegressorTrace, dout: &[f64; 6]) -> Vec<f64> {
        let mut dh = self.translation.backward(params, grads, &trace.translation, &dout[..3]);
        let dr = self.rotation.backward(params, grads, &trace.rotation, &dout[3..]);
        for (a, b) in dh.iter_mut().zip(dr) {
            *a += b;
        }
        match &self.trunk {
            Some(t) => t.backward(params, grads, &trace.trunk, &dh),
            None => dh,
        }
    }
}

// ---------------------------------------------------------------------------
// Full model

/// Affine map from the translation head's output to meters, fitted to the
/// training poses so the head works in unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationScale {
    pub offset: [f64; 3],
    pub scale: f64,
}

impl Default for TranslationScale {
    fn default() -> Self {
        Self {
            offset: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl TranslationScale {
    /// Per-axis mean and the largest per-axis standard deviation.
    pub fn fit(points: impl IntoIterator<Item = [f64; 3]>) -> Self {
        let pts: Vec<[f64; 3]> = points.into_iter().collect();
        if pts.is_empty() {
            return Self::default();
        }
        let n = pts.len() as f64;
        let mut mean = [0.0; 3];
        for p in &pts {
            for k in 0..3 {
                mean[k] += p[k] / n;
            }
        }
        let mut sd: f64 = 0.0;
        for k in 0..3 {
            let var = pts.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n;
            sd = sd.max(var.sqrt());
        }
        Self {
            offset: mean,
            scale: if sd > 1e-9 { sd } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    attention: Option<Attention>,
    encoder: Encoder,
    regressor: Regressor,
    pub translation_scale: TranslationScale,
}

pub struct ForwardTrace {
    attention: Option<AttentionTrace>,
    encoder: EncoderTrace,
    regressor: RegressorTrace,
    pub output: LogPose,
}

impl ForwardTrace {
    pub fn attention(&self) -> Option<&AttentionTrace> {
        self.attention.as_ref()
    }

    pub fn features(&self) -> &[f64] {
        &self.encoder.z
    }
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut layout = ParamLayout::new();
        let attention = match config.attention_mode {
            AttentionMode::Off => None,
            mode => Some(Attention::new(&mut layout, &config.attention, mode)?),
        };
        let encoder = Encoder::new(&mut layout, &config.encoder)?;
        let regressor = Regressor::new(&mut layout, config.encoder.feature_dim, &config.regressor)?;
        if let Some(a) = &attention {
            a.check_input(config.input_height, config.input_width)?;
        }
        encoder.check_input(config.input_height, config.input_width)?;
        Ok(Self {
            config: config.clone(),
            layout,
            attention,
            encoder,
            regressor,
            translation_scale: TranslationScale::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn attention(&self) -> Option<&Attention> {
        self.attention.as_ref()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn init_params<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.layout.init(rng)
    }

    fn check_image(&self, image: &CartesianImage) -> Result<()> {
        if image.height() != self.config.input_height || image.width() != self.config.input_width {
            return Err(Error::config(format!(
                "image is {}x{} but the model expects {}x{}",
                image.height(),
                image.width(),
                self.config.input_height,
                self.config.input_width
            )));
        }
        Ok(())
    }

    /// Masked image (identity when attention is off).
    pub fn attend(&self, params: &[f64], image: &CartesianImage) -> Result<Tensor> {
        let t = image_tensor(image);
        match &self.attention {
            Some(a) => Ok(a.forward(params, &t)?.masked),
            None => Ok(t),
        }
    }

    pub fn encode(&self, params: &[f64], masked: &Tensor) -> Result<Vec<f64>> {
        Ok(self.encoder.forward(params, masked)?.z)
    }

    pub fn regress(&self, params: &[f64], z: &[f64]) -> Result<LogPose> {
        let raw = self.regressor.forward(params, z)?.output();
        Ok(self.denormalize(raw))
    }

    fn denormalize(&self, raw: [f64; 6]) -> LogPose {
        let s = &self.translation_scale;
        LogPose::new(
            [
                s.offset[0] + s.scale * raw[0],
                s.offset[1] + s.scale * raw[1],
                s.offset[2] + s.scale * raw[2],
            ],
            [raw[3], raw[4], raw[5]],
        )
    }

    pub fn forward(&self, params: &[f64], image: &CartesianImage) -> Result<LogPose> {
        Ok(self.forward_trace(params, image)?.output)
    }

    pub fn forward_trace(&self, params: &[f64], image: &CartesianImage) -> Result<ForwardTrace> {
        self.check_image(image)?;
        debug_assert_eq!(params.len(), self.layout.len());
        let t = image_tensor(image);
        let attention = match &self.attention {
            Some(a) => Some(a.forward(params, &t)?),
            None => None,
        };
        let encoder_in = attention.as_ref().map(|a| &a.masked).unwrap_or(&t);
        let encoder = self.encoder.forward(params, encoder_in)?;
        let regressor = self.regressor.forward(params, &encoder.z)?;
        let output = self.denormalize(regressor.output());
        Ok(ForwardTrace {
            attention,
            encoder,
            regressor,
            output,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// (translation in meters, then log-rotation).
    pub fn backward(&self, params: &[f64], trace: &ForwardTrace, d_output: &[f64; 6], grads: &mut [f64]) {
        let s = self.translation_scale.scale;
        let draw = [
            d_output[0] * s,
            d_output[1] * s,
            d_output[2] * s,
            d_output[3],
            d_output[4],
            d_output[5],
        ];
        let dz = self.regressor.backward(params, grads, &trace.regressor, &draw);
        let d_masked = self.encoder.backward(params, grads, &trace.encoder, &dz);
        if let (Some(a), Some(at)) = (&self.attention, &trace.attention) {
            a.backward(params, grads, at, &d_masked, false);
        }
    }
}
