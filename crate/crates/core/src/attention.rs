//! Nested encoder-decoder self-attention producing a soft mask over the
//! input radar image.
//!
//! Nodes `X[i][j]` live on pyramid level `i` (spatial size halves per level)
//! and skip-pathway column `j`, for `i + j <= n - 1`:
//!
//! * `X[i][0] = g(X[i-1][0])`, a strided convolution down the backbone
//!   (`X[0][0]` convolves the input without striding);
//! * `X[i][j] = g([X[i][0], .., X[i][j-1], up(X[i+1][j-1])])` for `j > 0`.
//!
//! Level-0 nodes carry a single channel and no activation, so their mean is
//! directly the logit map of the mask. Deeper nodes use `config.activation`.
//! The `Plain` mode keeps only the backbone and one decoder path (U-shape)
//! and reads the mask from the last decoder node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CartesianImage;
use crate::layers::{Conv, ConvTrace};
use crate::params::{he_bound, lecun_bound, ParamLayout};
use crate::tensor::{concat, sigmoid, split, upsample2, upsample2_backward, Activation, ConvShape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub levels: usize,
    pub channel_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AttentionConfig {
    pub fn desk() -> Self {
        Self {
            levels: 3,
            channel_widths: vec![8, 16, 32],
            activation: Activation::Relu,
        }
    }

    pub fn full() -> Self {
        Self {
            levels: 6,
            channel_widths: vec![8, 16, 32, 64, 128, 256],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::config("attention needs at least 2 pyramid levels"));
        }
        if self.channel_widths.len() != self.levels {
            return Err(Error::config(format!(
                "{} channel widths for {} levels",
                self.channel_widths.len(),
                self.levels
            )));
        }
        if self.channel_widths.contains(&0) {
            return Err(Error::config("channel widths must be positive"));
        }
        Ok(())
    }

    /// Output channels of node `(i, j)`.
    pub fn node_channels(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.channel_widths[i]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Dense nested skip pathways.
    #[default]
    Nested,
    /// Backbone plus a single decoder path.
    Plain,
    /// No mask: the image passes through unchanged.
    Off,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" | "full" => Ok(Self::Nested),
            "plain" | "plain-encoder-decoder" => Ok(Self::Plain),
            "off" => Ok(Self::Off),
            other => Err(Error::config(format!("unknown attention mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Input,
    Node(usize, usize),
    Up(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    i: usize,
    j: usize,
    conv: Conv,
    sources: Vec<Source>,
}

/// Node features keyed by `(level, column)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeGrid {
    pub nodes: BTreeMap<(usize, usize), Tensor>,
}

impl NodeGrid {
    pub fn get(&self, i: usize, j: usize) -> Option<&Tensor> {
        self.nodes.get(&(i, j))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    config: AttentionConfig,
    plain: bool,
    nodes: Vec<Node>,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    traces: Vec<ConvTrace>,
    pub logits: Tensor,
    pub mask: Tensor,
    pub masked: Tensor,
    input: Tensor,
}

impl AttentionTrace {
    pub fn grid(&self, attention: &Attention) -> NodeGrid {
        NodeGrid {
            nodes: attention
                .nodes
                .iter()
                .zip(&self.traces)
                .map(|(n, t)| ((n.i, n.j), t.out.clone()))
                .collect(),
        }
    }
}

impl Attention {
    /// `mode` must be `Nested` or `Plain`.
    pub fn new(layout: &mut ParamLayout, config: &AttentionConfig, mode: AttentionMode) -> Result<Self> {
        config.validate()?;
        let plain = match mode {
            AttentionMode::Nested => false,
            AttentionMode::Plain => true,
            AttentionMode::Off => return Err(Error::config("attention mode 'off' has no module")),
        };
        let n = config.levels;
        let mut order = Vec::new();
        for j in 0..n {
            for i in 0..n - j {
                if j == 0 || !plain || i + j == n - 1 {
                    order.push((i, j));
                }
            }
        }
        let ch = |i: usize| config.node_channels(i);
        let mut nodes = Vec::with_capacity(order.len());
        for (i, j) in order {
            let (sources, cin, stride) = if j == 0 {
                if i == 0 {
                    (vec![Source::Input], 1, 1)
                } else {
                    (vec![Source::Node(i - 1, 0)], ch(i - 1), 2)
                }
            } else {
                let mut s: Vec<Source> = if plain {
                    vec![Source::Node(i, 0)]
                } else {
                    (0..j).map(|k| Source::Node(i, k)).collect()
                };
                s.push(Source::Up(i + 1, j - 1));
                let cin = (s.len() - 1) * ch(i) + ch(i + 1);
                (s, cin, 1)
            };
            let shape = ConvShape {
                cin,
                cout: ch(i),
                k: 3,
                stride,
            };
            let (act, bound) = if i == 0 {
                (Activation::Identity, lecun_bound(shape.fan_in()))
            } else {
                (config.activation, he_bound(shape.fan_in()))
            };
            let conv = Conv::new(layout, &format!("attention.x{i}_{j}"), shape, act, bound);
            nodes.push(Node { i, j, conv, sources });
        }
        Ok(Self {
            config: config.clone(),
            plain,
            nodes,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn is_plain(&self) -> bool {
        self.plain
    }

    pub fn node_indices(&self) -> Vec<(usize, usize)> {
        self.nodes.iter().map(|n| (n.i, n.j)).collect()
    }

    /// Parameter ranges (weight, bias) of node `(i, j)`.
    pub fn node_params(&self, i: usize, j: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.nodes
            .iter()
            .find(|n| n.i == i && n.j == j)
            .map(|n| (n.conv.weight_range(), n.conv.bias_range()))
    }

    /// Top-level nodes whose mean forms the mask logits.
    pub fn fused_columns(&self) -> Vec<usize> {
        if self.plain {
            vec![self.config.levels - 1]
        } else {
            (0..self.config.levels).collect()
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let div = 1usize << (self.config.levels - 1);
        if h % div != 0 || w % div != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} is not divisible by 2^{} for {} attention levels",
                self.config.levels - 1,
                self.config.levels
            )));
        }
        Ok(())
    }

    fn build(&self, params: &[f64], input: &Tensor) -> Vec<ConvTrace> {
        let mut traces: Vec<ConvTrace> = Vec::with_capacity(self.nodes.len());
        let index = |i: usize, j: usize, nodes: &[Node]| nodes.iter().position(|n| n.i == i && n.j == j).unwrap();
        for node in &self.nodes {
            let ups: Vec<Tensor>;
            let x = if node.sources == [Source::Input] {
                input.clone()
            } else {
                ups = node
                    .sources
                    .iter()
                    .filter_map(|s| match *s {
                        Source::Up(a, b) => Some(upsample2(&traces[index(a, b, &self.nodes)].out)),
                        _ => None,
                    })
                    .collect();
                let mut parts: Vec<&Tensor> = Vec::new();
                let mut up_iter = ups.iter();
                for s in &node.sources {
                    match *s {
                        Source::Node(a, b) => parts.push(&traces[index(a, b, &self.nodes)].out),
                        Source::Up(..) => parts.push(up_iter.next().unwrap()),
                        Source::Input => unreachable!(),
                    }
                }
                if parts.len() == 1 {
                    parts[0].clone()
                } else {
                    concat(&parts)
                }
            };
            traces.push(node.conv.forward(params, &x));
        }
        traces
    }

    /// Computes every node of the pyramid for a single-channel input.
    pub fn build_node_grid(&self, params: &[f64], input: &Tensor) -> Result<NodeGrid> {
        if input.c != 1 {
            return Err(Error::domain("attention input must be single-channel"));
        }
        self.check_input(input.h, input.w)?;
        let traces = self.build(params, input);
        Ok(NodeGrid {
            nodes: self
                .nodes
                .iter()
                .zip(traces)
                .map(|(n, t)| ((n.i, n.j), t.out))
                .collect(),
        })
    }

    /// Mean of the top-level node outputs.
    pub fn fuse_top_level(&self, grid: &NodeGrid) -> Result<Tensor> {
        fuse(
            self.fused_columns()
                .iter()
                .map(|&j| {
                    grid.get(0, j)
                        .ok_or_else(|| Error::domain(format!("node (0, {j}) missing from grid")))
                })
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Result<AttentionTrace> {
        if input.c != 1 {
            return Err(Error::domain("attention input must be single-channel"));
        }
        self.check_input(input.h, input.w)?;
        let traces = self.build(params, input);
        let tops: Vec<&Tensor> = self
            .fused_columns()
            .iter()
            .map(|&j| &traces[self.position(0, j)].out)
            .collect();
        let logits = fuse(tops)?;
        let (mask, masked) = mask_and_apply(input, &logits)?;
        Ok(AttentionTrace {
            traces,
            logits,
            mask,
            masked,
            input: input.clone(),
        })
    }

    fn position(&self, i: usize, j: usize) -> usize {
        self.nodes.iter().position(|n| n.i == i && n.j == j).unwrap()
    }

    /// Back-propagates `d_masked` (gradient w.r.t. the masked image) into
    /// `grads`; returns the gradient w.r.t. the input image if requested.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        trace: &AttentionTrace,
        d_masked: &Tensor,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let input = &trace.input;
        // I' = s(L)·I  =>  dL = dI'·I·s(1-s),  dI = dI'·s
        let mut d_logits = Tensor::zeros(1, input.h, input.w);
        for k in 0..d_logits.len() {
            let s = trace.mask.data[k];
            d_logits.data[k] = d_masked.data[k] * input.data[k] * s * (1.0 - s);
        }
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let cols = self.fused_columns();
        let share = 1.0 / cols.len() as f64;
        for &j in &cols {
            let mut g = d_logits.clone();
            g.data.iter_mut().for_each(|x| *x *= share);
            accumulate(&mut node_grads[self.position(0, j)], g);
        }
        let mut d_input = if need_input_grad {
            let mut d = d_masked.clone();
            for (x, s) in d.data.iter_mut().zip(&trace.mask.data) {
                *x *= s;
            }
            Some(d)
        } else {
            None
        };
        for (idx, node) in self.nodes.iter().enumerate().rev() {
            let Some(dy) = node_grads[idx].take() else {
                continue;
            };
            let wants_input = node.sources != [Source::Input] || need_input_grad;
            let Some(dx) = node.conv.backward(params, grads, &trace.traces[idx], dy, wants_input) else {
                continue;
            };
            let channels: Vec<usize> = node
                .sources
                .iter()
                .map(|s| match *s {
                    Source::Input => 1,
                    Source::Node(a, _) | Source::Up(a, _) => self.config.node_channels(a),
                })
                .collect();
            let parts = if channels.len() == 1 { vec![dx] } else { split(&dx, &channels) };
            for (src, g) in node.sources.iter().zip(parts) {
                match *src {
                    Source::Input => {
                        if let Some(d) = d_input.as_mut() {
                            d.add_assign(&g);
                        }
                    }
                    Source::Node(a, b) => accumulate(&mut node_grads[self.position(a, b)], g),
                    Source::Up(a, b) => accumulate(&mut node_grads[self.position(a, b)], upsample2_backward(&g)),
                }
            }
        }
        d_input
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn fuse(tops: Vec<&Tensor>) -> Result<Tensor> {
    let first = tops.first().ok_or_else(|| Error::domain("no top-level nodes to fuse"))?;
    let mut out = Tensor::zeros(first.c, first.h, first.w);
    for t in &tops {
        if !t.same_shape(first) {
            return Err(Error::domain("top-level nodes differ in shape"));
        }
        out.add_assign(t);
    }
    let inv = 1.0 / tops.len() as f64;
    out.data.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

fn mask_and_apply(image: &Tensor, logits: &Tensor) -> Result<(Tensor, Tensor)> {
    if !image.same_shape(logits) {
        return Err(Error::domain(format!(
            "mask logits {}x{}x{} do not match image {}x{}x{}",
            logits.c, logits.h, logits.w, image.c, image.h, image.w
        )));
    }
    let mask = Tensor::from_vec(logits.c, logits.h, logits.w, logits.data.iter().map(|&x| sigmoid(x)).collect());
    let masked = Tensor::from_vec(
        image.c,
        image.h,
        image.w,
        image.data.iter().zip(&mask.data).map(|(i, m)| i * m).collect(),
    );
    Ok((mask, masked))
}

/// `sigmoid(logits) ⊙ image`.
pub fn apply_attention(image: &CartesianImage, logits: &Tensor) -> Result<CartesianImage> {
    let t = image_tensor(image);
    let (_, masked) = mask_and_apply(&t, logits)?;
    CartesianImage::new(image.height(), image.width(), masked.data, image.alpha, image.timestamp)
}

pub fn image_tensor(image: &CartesianImage) -> Tensor {
    Tensor::from_vec(1, image.height(), image.width(), image.pixels().to_vec())
}
