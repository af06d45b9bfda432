//! Channel-major feature maps and the handful of layer primitives the
//! network needs, each with an explicit backward pass.

use matrixmultiply::dgemm;

/// `[channels × height × width]` feature map stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Self::from_vec(c, h, w, vec![value; c * h * w])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        &self.data[k * self.plane()..(k + 1) * self.plane()]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Stacks tensors of equal spatial size along the channel axis.
pub fn concat(parts: &[&Tensor]) -> Tensor {
    let (h, w) = (parts[0].h, parts[0].w);
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
    for t in parts {
        assert!(t.h == h && t.w == w, "concat spatial mismatch");
        data.extend_from_slice(&t.data);
    }
    let c = parts.iter().map(|t| t.c).sum();
    Tensor::from_vec(c, h, w, data)
}

/// Splits a concatenated gradient back into per-part channel counts.
pub fn split(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(channels.len());
    let mut start = 0;
    for &c in channels {
        let n = c * grad.plane();
        out.push(Tensor::from_vec(c, grad.h, grad.w, grad.data[start..start + n].to_vec()));
        start += n;
    }
    out
}

/// Square convolution with zero padding `k/2`; odd `k`, stride 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (h + 2 * pad - self.k) / self.stride + 1,
            (w + 2 * pad - self.k) / self.stride + 1,
        )
    }
}

fn im2col(x: &Tensor, s: &ConvShape, ho: usize, wo: usize) -> Vec<f64> {
    let k = s.k;
    let pad = (k / 2) as isize;
    let p = ho * wo;
    let mut cols = vec![0.0; s.fan_in() * p];
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < x.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], s: &ConvShape, h: usize, w: usize, ho: usize, wo: usize) -> Tensor {
    let k = s.k;
    let pad = (k / 2) as isize;
    let p = ho * wo;
    let mut out = Tensor::zeros(s.cin, h, w);
    for ci in 0..s.cin {
        let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Saved state for [`conv_backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    saved: Saved,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug, Clone)]
enum Saved {
    Cols(Vec<f64>),
    Input(Tensor),
}

/// Narrow stride-1 convolutions are cheaper as shifted row updates than as
/// a matrix product over an unrolled input.
fn use_direct(s: &ConvShape) -> bool {
    s.stride == 1 && s.cout <= 2
}

/// Output columns `[x0, x1)` whose input column `x + dx` is in bounds.
fn valid_cols(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
    (x0, x1.max(x0))
}

fn direct_forward(x: &Tensor, s: &ConvShape, weight: &[f64], bias: &[f64]) -> Tensor {
    let (h, w) = (x.h, x.w);
    let k = s.k;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(s.cout, h, w);
    for co in 0..s.cout {
        let dst = &mut out.data[co * h * w..(co + 1) * h * w];
        dst.fill(bias[co]);
        for ci in 0..s.cin {
            let src = x.channel(ci);
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = weight[((co * s.cin + ci) * k + ky) * k + kx];
                    let (x0, x1) = valid_cols(w, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let n = x1 - x0;
                    for y in 0..h {
                        let iy = y as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let srow = &src[iy * w + sx0..iy * w + sx0 + n];
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        for (d, v) in drow.iter_mut().zip(srow) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn direct_backward(
    dout: &Tensor,
    x: &Tensor,
    s: &ConvShape,
    weight: &[f64],
    dweight: &mut [f64],
    need_input_grad: bool,
) -> Option<Tensor> {
    let (h, w) = (x.h, x.w);
    let k = s.k;
    let pad = (k / 2) as isize;
    let mut dx_t = need_input_grad.then(|| Tensor::zeros(s.cin, h, w));
    for co in 0..s.cout {
        let g = dout.channel(co);
        for ci in 0..s.cin {
            let src = x.channel(ci);
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let widx = ((co * s.cin + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (x0, x1) = valid_cols(w, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let n = x1 - x0;
                    let mut acc = 0.0;
                    for y in 0..h {
                        let iy = y as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[iy * w + sx0..iy * w + sx0 + n];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(dxt) = dx_t.as_mut() {
                            let base = (ci * h + iy) * w + sx0;
                            for (d, gv) in dxt.data[base..base + n].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
    dx_t
}

pub fn conv_forward(x: &Tensor, s: &ConvShape, weight: &[f64], bias: &[f64]) -> (Tensor, ConvCache) {
    assert_eq!(x.c, s.cin, "conv input channels");
    debug_assert_eq!(weight.len(), s.weight_len());
    debug_assert_eq!(bias.len(), s.cout);
    let (ho, wo) = s.out_size(x.h, x.w);
    let cache = |saved| ConvCache {
        saved,
        in_h: x.h,
        in_w: x.w,
        out_h: ho,
        out_w: wo,
    };
    if use_direct(s) {
        let out = direct_forward(x, s, weight, bias);
        return (out, cache(Saved::Input(x.clone())));
    }
    let p = ho * wo;
    let kk = s.fan_in();
    let cols = im2col(x, s, ho, wo);
    let mut out = vec![0.0; s.cout * p];
    for (co, chunk) in out.chunks_mut(p).enumerate() {
        chunk.fill(bias[co]);
    }
    unsafe {
        dgemm(
            s.cout, kk, p, 1.0,
            weight.as_ptr(), kk as isize, 1,
            cols.as_ptr(), p as isize, 1,
            1.0,
            out.as_mut_ptr(), p as isize, 1,
        );
    }
    (Tensor::from_vec(s.cout, ho, wo, out), cache(Saved::Cols(cols)))
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub fn conv_backward(
    dout: &Tensor,
    cache: &ConvCache,
    s: &ConvShape,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Option<Tensor> {
    let p = cache.out_h * cache.out_w;
    let kk = s.fan_in();
    debug_assert_eq!(dout.len(), s.cout * p);
    for (co, chunk) in dout.data.chunks(p).enumerate() {
        dbias[co] += chunk.iter().sum::<f64>();
    }
    let cols = match &cache.saved {
        Saved::Input(x) => return direct_backward(dout, x, s, weight, dweight, need_input_grad),
        Saved::Cols(cols) => cols,
    };
    unsafe {
        // dW[cout, kk] += dout[cout, p] · colsᵀ
        dgemm(
            s.cout, p, kk, 1.0,
            dout.data.as_ptr(), p as isize, 1,
            cols.as_ptr(), 1, p as isize,
            1.0,
            dweight.as_mut_ptr(), kk as isize, 1,
        );
    }
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; kk * p];
    unsafe {
        // dcols[kk, p] = Wᵀ · dout
        dgemm(
            kk, s.cout, p, 1.0,
            weight.as_ptr(), 1, kk as isize,
            dout.data.as_ptr(), p as isize, 1,
            0.0,
            dcols.as_mut_ptr(), p as isize, 1,
        );
    }
    Some(col2im(&dcols, s, cache.in_h, cache.in_w, cache.out_h, cache.out_w))
}

/// `y = W x + b` with `W` stored `[out × in]` row-major.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + dot(&weight[o * n_in..(o + 1) * n_in], x))
        .collect()
}

pub fn linear_backward(
    x: &[f64],
    dout: &[f64],
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dout.iter().enumerate() {
        dbias[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * n_in..(o + 1) * n_in];
        let drow = &mut dweight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut out = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        let src = dout.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..dout.h {
            for x in 0..dout.w {
                dst[(y / 2) * w + x / 2] += src[y * dout.w + x];
            }
        }
    }
    out
}

/// 2×2 average pooling (even spatial sizes).
pub fn avgpool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w + xx] = 0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let mut out = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        let src = dout.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * dout.w + x / 2];
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let n = x.plane() as f64;
    (0..x.c).map(|c| x.channel(c).iter().sum::<f64>() / n).collect()
}

pub fn global_avg_pool_backward(dout: &[f64], h: usize, w: usize) -> Tensor {
    let n = (h * w) as f64;
    let mut data = Vec::with_capacity(dout.len() * h * w);
    for g in dout {
        data.extend(std::iter::repeat(g / n).take(h * w));
    }
    Tensor::from_vec(dout.len(), h, w, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation *output*.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn forward_inplace(self, xs: &mut [f64]) {
        if self != Activation::Identity {
            xs.iter_mut().for_each(|x| *x = self.apply(*x));
        }
    }

    /// Multiplies `grad` in place by the local derivative, given outputs `ys`.
    pub fn backward_inplace(self, ys: &[f64], grad: &mut [f64]) {
        if self != Activation::Identity {
            for (g, &y) in grad.iter_mut().zip(ys) {
                *g *= self.grad_from_output(y);
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(crate::error::Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
