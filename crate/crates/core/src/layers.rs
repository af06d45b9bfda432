//! Parameterized layers bound to slices of the flat parameter vector.

use std::ops::Range;

use crate::params::ParamLayout;
use crate::tensor::{conv_backward, conv_forward, linear_backward, linear_forward, Activation, ConvCache, ConvShape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub shape: ConvShape,
    pub act: Activation,
    weight: Range<usize>,
    bias: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvTrace {
    cache: ConvCache,
    /// Post-activation output.
    pub out: Tensor,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, shape: ConvShape, act: Activation, bound: f64) -> Self {
        let weight = layout.add(
            format!("{name}.weight"),
            &[shape.cout, shape.cin, shape.k, shape.k],
            bound,
        );
        let bias = layout.add(format!("{name}.bias"), &[shape.cout], 0.0);
        Self {
            shape,
            act,
            weight,
            bias,
        }
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.weight.clone()
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias.clone()
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> ConvTrace {
        let (mut out, cache) = conv_forward(x, &self.shape, &params[self.weight.clone()], &params[self.bias.clone()]);
        self.act.forward_inplace(&mut out.data);
        ConvTrace { cache, out }
    }

    pub fn infer(&self, params: &[f64], x: &Tensor) -> Tensor {
        self.forward(params, x).out
    }

    /// `dy` is the gradient w.r.t. the post-activation output.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        trace: &ConvTrace,
        mut dy: Tensor,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        self.act.backward_inplace(&trace.out.data, &mut dy.data);
        debug_assert_eq!(self.weight.end, self.bias.start);
        let (dw, db) = grads[self.weight.start..self.bias.end].split_at_mut(self.weight.len());
        conv_backward(
            &dy,
            &trace.cache,
            &self.shape,
            &params[self.weight.clone()],
            dw,
            db,
            need_input_grad,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub act: Activation,
    weight: Range<usize>,
    bias: Range<usize>,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, n_in: usize, n_out: usize, act: Activation, bound: f64) -> Self {
        let weight = layout.add(format!("{name}.weight"), &[n_out, n_in], bound);
        let bias = layout.add(format!("{name}.bias"), &[n_out], 0.0);
        Self {
            n_in,
            n_out,
            act,
            weight,
            bias,
        }
    }

    pub fn params_range(&self) -> Range<usize> {
        self.weight.start..self.bias.end
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias.clone()
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = linear_forward(x, &params[self.weight.clone()], &params[self.bias.clone()]);
        self.act.forward_inplace(&mut y);
        y
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dy = dy.to_vec();
        self.act.backward_inplace(y, &mut dy);
        let (dw, db) = grads[self.weight.start..self.bias.end].split_at_mut(self.weight.len());
        linear_backward(x, &dy, &params[self.weight.clone()], dw, db)
    }
}

/// Stack of linear layers; activation on every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        sizes: &[usize],
        act: Activation,
        hidden_bound: fn(usize) -> f64,
        last_bound: fn(usize) -> f64,
        last_linear: bool,
    ) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let last = k + 1 == n;
                let (a, bound) = if last && last_linear {
                    (Activation::Identity, last_bound(sizes[k]))
                } else {
                    (act, hidden_bound(sizes[k]))
                };
                Linear::new(layout, &format!("{name}.{k}"), sizes[k], sizes[k + 1], a, bound)
            })
            .collect();
        Self { layers }
    }

    /// Returns every activation, input first.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for layer in &self.layers {
            let y = layer.forward(params, acts.last().unwrap());
            acts.push(y);
        }
        acts
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], acts: &[Vec<f64>], dy: &[f64]) -> Vec<f64> {
        let mut g = dy.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(params, grads, &acts[k], &acts[k + 1], &g);
        }
        g
    }

    pub fn params_range(&self) -> Range<usize> {
        self.layers[0].params_range().start..self.layers.last().unwrap().params_range().end
    }
}
