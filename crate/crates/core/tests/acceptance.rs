//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

mod common;

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use radar_reloc::attention::{image_tensor, Attention, AttentionConfig, AttentionMode};
use radar_reloc::checkpoint::Checkpoint;
use radar_reloc::data::{
    loop_trajectory, simulate_sequence, BenchmarkSpec, Dataset, NoiseModel, ScanParams, Sequence,
    SimWorld, Split,
};
use radar_reloc::eval::evaluate_checkpoint;
use radar_reloc::geometry::{azimuth_to_angle, cartesian_to_polar, polar_point_to_cartesian, CartesianImage, CartesianSpec};
use radar_reloc::losses::{sequence_loss, vanilla_loss_h, LossBalance, LossSettings};
use radar_reloc::network::{Model, ModelConfig};
use radar_reloc::params::ParamLayout;
use radar_reloc::pose::{compose, quat_exp, quat_log, relative_pose, LogPose, Pose, Quaternion};
use radar_reloc::tensor::Activation;
use radar_reloc::train::{train, LrSchedule, TrainConfig, TrainOptions, Validation};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join(" / ")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Criterion 1: closed-form oracles for the azimuth angle, point mapping,
/// vanilla loss and log-quaternion.
fn closed_forms() -> Outcome {
    let mut rng = common::rng(101);
    let mut worst = [0.0f64; 4];
    for _ in 0..1000 {
        let m = rng.gen_range(1..2000usize);
        let a = rng.gen_range(0..m);
        let theta = azimuth_to_angle(a, m).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max((theta - 2.0 * PI * a as f64 / m as f64).abs());

        let b = rng.gen_range(0.0..300.0);
        let alpha = rng.gen_range(0.01..5.0);
        let (x, y) = polar_point_to_cartesian(a, b, m, alpha).map_err(|e| e.to_string())?;
        let t = TAU * a as f64 / m as f64;
        worst[1] = worst[1].max((x - alpha * t.cos() * b).abs()).max((y - alpha * t.sin() * b).abs());

        let pred: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-20.0..20.0));
        let gt: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-20.0..20.0));
        let (beta, gamma) = (rng.gen_range(-3.0..3.0), rng.gen_range(-5.0..2.0));
        let h = vanilla_loss_h(&LogPose::from_array(pred), &LogPose::from_array(gt), &LossBalance::new(beta, gamma))
            .map_err(|e| e.to_string())?;
        let l1 = |r: std::ops::Range<usize>| r.map(|k| (pred[k] - gt[k]).abs()).sum::<f64>();
        let oracle = l1(0..3) * (-beta).exp() + beta + l1(3..6) * (-gamma).exp() + gamma;
        worst[2] = worst[2].max((h - oracle).abs());

        let q = common::random_unit_quat(&mut rng).canonical();
        let w = quat_log(&q).map_err(|e| e.to_string())?;
        let vn = (q.v[0] * q.v[0] + q.v[1] * q.v[1] + q.v[2] * q.v[2]).sqrt();
        for k in 0..3 {
            let o = if vn > 0.0 { q.v[k] / vn * q.u.clamp(-1.0, 1.0).acos() } else { 0.0 };
            worst[3] = worst[3].max((w[k] - o).abs());
        }
    }
    ensure(worst.iter().all(|&e| e < 1e-9), format!("max abs errors {}", sci(&worst)))?;
    Ok(format!("1000 samples each, max abs errors {}", sci(&worst)))
}

/// Criterion 2: point, quaternion and pose round trips.
fn round_trips() -> Outcome {
    let mut rng = common::rng(202);
    let (mut point, mut quat, mut pose) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = rng.gen_range(1..2000usize);
        let a = rng.gen_range(0..m);
        let b = rng.gen_range(0.0..300.0);
        let alpha = rng.gen_range(0.01..5.0);
        let (x, y) = polar_point_to_cartesian(a, b, m, alpha).map_err(|e| e.to_string())?;
        let (theta, r) = cartesian_to_polar(x, y, alpha);
        let expected = azimuth_to_angle(a, m).map_err(|e| e.to_string())?;
        let d = (theta - expected).abs();
        point = point.max(d.min(TAU - d)).max((r - b).abs());

        let q = common::random_unit_quat(&mut rng).canonical();
        let back = quat_exp(quat_log(&q).map_err(|e| e.to_string())?).canonical();
        quat = quat.max((back.u - q.u).abs());
        for k in 0..3 {
            quat = quat.max((back.v[k] - q.v[k]).abs());
        }

        let (pa, pb) = (common::random_pose(&mut rng, 0), common::random_pose(&mut rng, 1));
        let c = compose(&pa, &relative_pose(&pa, &pb));
        let qc = if c.q.dot(&pb.q) < 0.0 { Quaternion::new(-c.q.u, c.q.v.map(|v| -v)) } else { c.q };
        for k in 0..3 {
            pose = pose.max((c.p[k] - pb.p[k]).abs()).max((qc.v[k] - pb.q.v[k]).abs());
        }
        pose = pose.max((qc.u - pb.q.u).abs());
    }
    let worst = [point, quat, pose];
    ensure(worst.iter().all(|&e| e < 1e-9), format!("max errors point/quat/pose {}", sci(&worst)))?;
    Ok(format!("1000 samples each, max errors point/quat/pose {}", sci(&worst)))
}

/// Criterion 3: full-model gradients on the desk configuration.
fn gradients() -> Outcome {
    let config = ModelConfig::desk();
    let mut model = Model::new(&config).map_err(|e| e.to_string())?;
    model.translation_scale.scale = 10.0;
    let mut rng = common::rng(303);
    let mut params = model.init_params(&mut rng);
    for spec in model.layout().specs().iter().filter(|s| s.init_bound == 0.0) {
        for p in &mut params[spec.range()] {
            *p = rng.gen_range(-0.05..0.05);
        }
    }
    let data = common::small_benchmark(1, 0, 4, 3);
    let frames = &data.sequences[0].frames;
    let images: Vec<&CartesianImage> = frames.iter().map(|f| &f.image).collect();
    let gt: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    let bal = LossBalance::new(0.2, -2.0);
    let settings = LossSettings::default();
    let (grads, dbal) = common::window_grad(&model, &params, &images, &gt, &bal, &settings);

    let mut probes: Vec<usize> = (0..params.len()).collect();
    probes.shuffle(&mut rng);
    probes.truncate(50);
    let mut worst = 0.0f64;
    for &i in &probes {
        let mut f = |x: &[f64]| common::window_loss(&model, x, &images, &gt, &bal, &settings);
        let mut err = common::rel_err(grads[i], common::central_difference(&mut f, &params, i, 1e-5), 1e-6);
        if err > 1e-4 {
            err = err.min(common::rel_err(grads[i], common::central_difference(&mut f, &params, i, 1e-7), 1e-6));
        }
        ensure(err < 1e-4, format!("parameter {i}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    for (k, analytic) in dbal.iter().enumerate() {
        let mut f = |x: &[f64]| common::window_loss(&model, &params, &images, &gt, &LossBalance::new(x[0], x[1]), &settings);
        let num = common::central_difference(&mut f, &[bal.beta, bal.gamma], k, 1e-6);
        let err = common::rel_err(*analytic, num, 1e-6);
        ensure(err < 1e-4, format!("balance {k}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("50 parameters + (beta, gamma), worst relative error {worst:.1e}"))
}

/// Criterion 4: mask range, zero-parameter mask, fusion mean and node shapes.
fn attention() -> Outcome {
    let mut layout = ParamLayout::new();
    let att = Attention::new(&mut layout, &AttentionConfig::desk(), AttentionMode::Nested).map_err(|e| e.to_string())?;
    let mut rng = common::rng(404);
    for trial in 0..10 {
        let params = layout.init(&mut rng);
        let x = image_tensor(&common::random_image(64, 64, trial));
        let trace = att.forward(&params, &x).map_err(|e| e.to_string())?;
        ensure(trace.mask.data.iter().all(|&m| m > 0.0 && m < 1.0), "mask left (0, 1)")?;
        let grid = trace.grid(&att);
        for k in 0..trace.logits.len() {
            let mean = (0..3).map(|j| grid.get(0, j).unwrap().data[k]).sum::<f64>() / 3.0;
            ensure((trace.logits.data[k] - mean).abs() < 1e-6, "fused logits differ from node mean")?;
        }
        let zero = att.forward(&vec![0.0; params.len()], &x).map_err(|e| e.to_string())?;
        ensure(zero.mask.data.iter().all(|&m| m == 0.5), "zero parameters do not give 0.5")?;
    }
    for (n, size) in [(2usize, 16usize), (3, 64), (6, 64)] {
        let cfg = AttentionConfig {
            levels: n,
            channel_widths: (0..n).map(|i| 2 << i.min(3)).collect(),
            activation: Activation::Relu,
        };
        let mut layout = ParamLayout::new();
        let att = Attention::new(&mut layout, &cfg, AttentionMode::Nested).map_err(|e| e.to_string())?;
        let params = layout.init(&mut rng);
        let grid = att
            .build_node_grid(&params, &image_tensor(&common::random_image(size, size, 9)))
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n - i {
                let t = grid.get(i, j).ok_or(format!("n={n}: node ({i}, {j}) missing"))?;
                ensure(t.h == size >> i && t.w == size >> i, format!("n={n}: node ({i}, {j}) is {}x{}", t.h, t.w))?;
            }
        }
    }
    Ok("10 random inputs; halving rule for n = 2, 3, 6".into())
}

/// Criterion 5: term counts, perfect-prediction value and rigid offsets.
fn loss_structure() -> Outcome {
    let mut rng = common::rng(505);
    let settings = LossSettings::default();
    for _ in 0..100 {
        let gts: Vec<Pose> = (0..4).map(|t| common::random_pose(&mut rng, t)).collect();
        let bal = LossBalance::new(rng.gen_range(-2.0..2.0), rng.gen_range(-4.0..1.0));
        let perfect: Vec<LogPose> = gts.iter().map(|g| g.to_log().unwrap()).collect();
        let l = sequence_loss(&perfect, &gts, &bal, &settings).map_err(|e| e.to_string())?;
        ensure((l.global_terms, l.relative_terms) == (4, 3), "wrong term counts")?;
        let expected = 7.0 * (bal.beta + bal.gamma);
        ensure((l.total - expected).abs() < 1e-9, format!("perfect loss {} vs {expected}", l.total))?;

        let offset = common::random_pose(&mut rng, 0);
        let shifted: Vec<LogPose> = gts.iter().map(|g| compose(&offset, g).to_log().unwrap()).collect();
        let l = sequence_loss(&shifted, &gts, &LossBalance::new(0.0, 0.0), &settings).map_err(|e| e.to_string())?;
        ensure(l.relative.abs() < 1e-8 && l.global > 0.0, format!("rigid offset: L_rp {} L_gp {}", l.relative, l.global))?;
    }
    Ok("100 windows of N = 4".into())
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 300,
        learning_rate: 3e-3,
        lr_schedule: LrSchedule::Cosine,
        min_learning_rate: 1e-5,
        validation: Validation::None,
        ..TrainConfig::default()
    }
}

/// Criterion 6: overfit one noiseless 64-frame loop.
fn overfit() -> Outcome {
    let world = SimWorld::random(30, 30.0, 10.0, 2.0, 6);
    let traj = loop_trajectory([0.0, 0.0], 10.0, 64, 64, 0, 250_000_000);
    let frames = simulate_sequence(&world, &traj, &ScanParams::desk(), 0).map_err(|e| e.to_string())?;
    let data = Dataset {
        sequences: vec![Sequence {
            name: "loop".into(),
            tag: "synthetic".into(),
            split: Split::Train,
            frames,
        }],
    }
    .to_images(&CartesianSpec::desk())
    .map_err(|e| e.to_string())?;
    let cfg = overfit_config();
    let out = train(&cfg, &data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let report = evaluate_checkpoint(&out.last, &data, Some(Split::Train)).map_err(|e| e.to_string())?;
    let msg = format!(
        "{} epochs, training-set mean error {:.3} m / {:.3} deg",
        cfg.epochs, report.mean_translation, report.mean_rotation
    );
    ensure(report.mean_translation < 0.5 && report.mean_rotation < 2.0, msg.clone())?;
    Ok(msg)
}

/// Criterion 7: full model vs. no geometric constraints, median over seeds.
fn ablation() -> Outcome {
    let mut full = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..3u64 {
        let spec = BenchmarkSpec {
            traversals: 3,
            test_traversals: 1,
            frames_per_traversal: 32,
            dynamic_objects: 3,
            lateral_jitter: 1.0,
            heading_jitter: 0.1,
            noise: NoiseModel::moderate(),
            seed: 70 + seed,
            ..BenchmarkSpec::default()
        };
        let data = common::benchmark_images(&spec);
        for (gc, sink) in [(true, &mut full), (false, &mut plain)] {
            let mut cfg = TrainConfig {
                epochs: 150,
                learning_rate: 3e-3,
                lr_schedule: LrSchedule::Cosine,
                min_learning_rate: 1e-5,
                validation: Validation::None,
                seed,
                ..TrainConfig::default()
            };
            cfg.loss.geometric_constraints = gc;
            let out = train(&cfg, &data, &TrainOptions::default()).map_err(|e| e.to_string())?;
            let report = evaluate_checkpoint(&out.last, &data, Some(Split::Test)).map_err(|e| e.to_string())?;
            sink.push(report.mean_translation);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (mf, mp) = (median(&mut full.clone()), median(&mut plain.clone()));
    let msg = format!("test translation median full {mf:.2} m vs w/o GC {mp:.2} m (full {full:.2?}, w/o GC {plain:.2?})");
    ensure(mf <= mp, msg.clone())?;
    Ok(msg)
}

/// Criterion 8: reproducible training and checkpoint round trip.
fn determinism() -> Outcome {
    let data = common::small_benchmark(2, 1, 12, 8);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        seed: 8,
        ..TrainConfig::default()
    };
    let a = train(&cfg, &data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let b = train(&cfg, &data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    ensure(a.losses() == b.losses(), "loss curves differ")?;
    let ra = evaluate_checkpoint(&a.last, &data, None).map_err(|e| e.to_string())?;
    let rb = evaluate_checkpoint(&b.last, &data, None).map_err(|e| e.to_string())?;
    ensure(ra == rb, "reports differ between runs")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    a.last.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let rl = evaluate_checkpoint(&loaded, &data, None).map_err(|e| e.to_string())?;
    ensure(rl == ra, "report differs after checkpoint round trip")?;
    Ok(format!("{} epochs twice, identical losses {:.4?}", cfg.epochs, a.losses()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("closed-form oracles", closed_forms),
        ("geometry round trips", round_trips),
        ("gradient checks", gradients),
        ("attention invariants", attention),
        ("loss structure", loss_structure),
        ("overfit", overfit),
        ("ablation ordering", ablation),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let n = k + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
