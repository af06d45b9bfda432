#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar_reloc::data::{build_benchmark, BenchmarkSpec, ImageDataset, NoiseModel};
use radar_reloc::geometry::{CartesianImage, CartesianSpec};
use radar_reloc::losses::{sequence_loss_grad, sequence_loss_with, LossBalance, LossSettings};
use radar_reloc::network::Model;
use radar_reloc::pose::{Pose, Quaternion};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on the unit 3-sphere (Gaussian normalization).
pub fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quaternion {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return Quaternion::new(v[0] / n, [v[1] / n, v[2] / n, v[3] / n]);
        }
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, t: i64) -> Pose {
    let p = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0)];
    Pose::new(p, random_unit_quat(rng), t)
}

pub fn random_image(h: usize, w: usize, seed: u64) -> CartesianImage {
    let mut r = rng(seed);
    let px = (0..h * w)
        .map(|_| if r.gen_bool(0.15) { r.gen_range(0.0..1.0) } else { 0.0 })
        .collect();
    CartesianImage::new(h, w, px, 1.0, seed as i64).unwrap()
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Synthetic multi-traversal benchmark rendered at the desk image size.
pub fn benchmark_images(spec: &BenchmarkSpec) -> ImageDataset {
    build_benchmark(spec)
        .unwrap()
        .simulate()
        .unwrap()
        .to_images(&CartesianSpec::desk())
        .unwrap()
}

pub fn small_benchmark(traversals: usize, test: usize, frames: usize, seed: u64) -> ImageDataset {
    benchmark_images(&BenchmarkSpec {
        traversals,
        test_traversals: test,
        frames_per_traversal: frames,
        noise: NoiseModel::none(),
        seed,
        ..BenchmarkSpec::default()
    })
}

/// Window loss of a model on `images` with network parameters `params`.
pub fn window_loss(
    model: &Model,
    params: &[f64],
    images: &[&CartesianImage],
    gt: &[Pose],
    bal: &LossBalance,
    settings: &LossSettings,
) -> f64 {
    let preds: Vec<_> = images.iter().map(|im| model.forward(params, im).unwrap()).collect();
    sequence_loss_with(&preds, gt, bal, None, settings).unwrap().total
}

/// Analytic gradient of the window loss: network parameters, then `[dβ, dγ]`.
pub fn window_grad(
    model: &Model,
    params: &[f64],
    images: &[&CartesianImage],
    gt: &[Pose],
    bal: &LossBalance,
    settings: &LossSettings,
) -> (Vec<f64>, [f64; 2]) {
    let traces: Vec<_> = images.iter().map(|im| model.forward_trace(params, im).unwrap()).collect();
    let preds: Vec<_> = traces.iter().map(|t| t.output).collect();
    let g = sequence_loss_grad(&preds, gt, bal, None, settings).unwrap();
    let mut grads = vec![0.0; params.len()];
    for (t, d) in traces.iter().zip(&g.d_preds) {
        model.backward(params, t, d, &mut grads);
    }
    (grads, g.d_global_balance)
}
