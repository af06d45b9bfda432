mod common;

use nalgebra::{Isometry3, Quaternion as NQuat, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use radar_reloc::losses::{sequence_loss, sequence_loss_grad, sequence_loss_with, vanilla_loss_h, LossBalance, LossSettings};
use radar_reloc::pose::{compose, LogPose, Pose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Log-pose of an isometry through nalgebra: half the rotation vector.
fn oracle_log(iso: &Isometry3<f64>) -> [f64; 6] {
    let t = iso.translation.vector;
    let mut q = *iso.rotation.quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    let w = UnitQuaternion::new_unchecked(q).scaled_axis() / 2.0;
    [t[0], t[1], t[2], w[0], w[1], w[2]]
}

fn iso_from_log(a: &[f64; 6]) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_scaled_axis(Vector3::new(2.0 * a[3], 2.0 * a[4], 2.0 * a[5]));
    Isometry3::from_parts(Translation3::new(a[0], a[1], a[2]), rot)
}

fn iso_from_pose(p: &Pose) -> Isometry3<f64> {
    let q = UnitQuaternion::new_unchecked(NQuat::new(p.q.u, p.q.v[0], p.q.v[1], p.q.v[2]));
    Isometry3::from_parts(Translation3::new(p.p[0], p.p[1], p.p[2]), q)
}

fn oracle_h(pred: &[f64; 6], gt: &[f64; 6], beta: f64, gamma: f64) -> f64 {
    let tp: f64 = (0..3).map(|k| (pred[k] - gt[k]).abs()).sum();
    let tr: f64 = (3..6).map(|k| (pred[k] - gt[k]).abs()).sum();
    tp * (-beta).exp() + beta + tr * (-gamma).exp() + gamma
}

fn random_log(rng: &mut ChaCha8Rng) -> LogPose {
    let p = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-2.0..2.0)];
    let w = [rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)];
    LogPose::new(p, w)
}

fn window(rng: &mut ChaCha8Rng, n: usize) -> (Vec<LogPose>, Vec<Pose>) {
    let preds = (0..n).map(|_| random_log(rng)).collect();
    let gts = (0..n as i64).map(|t| common::random_pose(rng, t)).collect();
    (preds, gts)
}

fn oracle_window(preds: &[LogPose], gts: &[Pose], bal: &LossBalance, gc: bool) -> (f64, f64) {
    let pi: Vec<Isometry3<f64>> = preds.iter().map(|p| iso_from_log(&p.to_array())).collect();
    let gi: Vec<Isometry3<f64>> = gts.iter().map(iso_from_pose).collect();
    let global = pi
        .iter()
        .zip(&gi)
        .map(|(p, g)| oracle_h(&oracle_log(p), &oracle_log(g), bal.beta, bal.gamma))
        .sum();
    let relative = if gc {
        (0..pi.len() - 1)
            .map(|i| {
                let rp = oracle_log(&(pi[i].inverse() * pi[i + 1]));
                let rg = oracle_log(&(gi[i].inverse() * gi[i + 1]));
                oracle_h(&rp, &rg, bal.beta, bal.gamma)
            })
            .sum()
    } else {
        0.0
    };
    (global, relative)
}

#[test]
fn h_matches_closed_form() {
    let mut rng = common::rng(1);
    for _ in 0..200 {
        let (a, b) = (random_log(&mut rng), random_log(&mut rng));
        let bal = LossBalance::new(rng.gen_range(-3.0..3.0), rng.gen_range(-5.0..2.0));
        let h = vanilla_loss_h(&a, &b, &bal).unwrap();
        let o = oracle_h(&a.to_array(), &b.to_array(), bal.beta, bal.gamma);
        assert!((h - o).abs() < 1e-9 * o.abs().max(1.0), "{h} vs {o}");
    }
}

#[test]
fn window_loss_matches_isometry_oracle() {
    let mut rng = common::rng(2);
    for trial in 0..100 {
        let n = 1 + trial % 6;
        let (preds, gts) = window(&mut rng, n);
        let bal = LossBalance::new(rng.gen_range(-1.0..1.0), rng.gen_range(-4.0..0.0));
        for gc in [true, false] {
            let settings = LossSettings {
                geometric_constraints: gc,
                ..LossSettings::default()
            };
            let l = sequence_loss(&preds, &gts, &bal, &settings).unwrap();
            let (g, r) = oracle_window(&preds, &gts, &bal, gc);
            assert!((l.global - g).abs() < 1e-9 * g.abs().max(1.0), "{} vs {g}", l.global);
            assert!((l.relative - r).abs() < 1e-9 * r.abs().max(1.0), "{} vs {r}", l.relative);
            assert_eq!(l.total, l.global + l.relative);
        }
    }
}

#[test]
fn term_counts_and_perfect_predictions() {
    let mut rng = common::rng(3);
    for n in 1..=6 {
        let gts: Vec<Pose> = (0..n as i64).map(|t| common::random_pose(&mut rng, t)).collect();
        let preds: Vec<LogPose> = gts.iter().map(|g| g.to_log().unwrap()).collect();
        let bal = LossBalance::new(rng.gen_range(-2.0..2.0), rng.gen_range(-4.0..1.0));
        let l = sequence_loss(&preds, &gts, &bal, &LossSettings::default()).unwrap();
        assert_eq!((l.global_terms, l.relative_terms), (n, n - 1));
        let expected = (2 * n - 1) as f64 * (bal.beta + bal.gamma);
        assert!((l.total - expected).abs() < 1e-9, "n={n}: {} vs {expected}", l.total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_offset_has_zero_relative_residual(seed in 0u64..100_000, n in 2usize..7) {
        let mut rng = common::rng(seed);
        let offset = common::random_pose(&mut rng, 0);
        let gts: Vec<Pose> = (0..n as i64).map(|t| common::random_pose(&mut rng, t)).collect();
        let preds: Vec<LogPose> = gts.iter().map(|g| compose(&offset, g).to_log().unwrap()).collect();
        let l = sequence_loss(&preds, &gts, &LossBalance::new(0.0, 0.0), &LossSettings::default()).unwrap();
        prop_assert!(l.relative.abs() < 1e-8, "relative {}", l.relative);
        prop_assert!(l.global > 0.0);
    }

    #[test]
    fn balance_minimizer_is_log_residual(seed in 0u64..100_000) {
        let mut rng = common::rng(seed);
        let (preds, gts) = window(&mut rng, 1);
        let settings = LossSettings { geometric_constraints: false, ..LossSettings::default() };
        let g = gts[0].to_log().unwrap().to_array();
        let p = preds[0].to_array();
        let rt: f64 = (0..3).map(|k| (p[k] - g[k]).abs()).sum();
        let rr: f64 = (3..6).map(|k| (p[k] - g[k]).abs()).sum();
        let bal = LossBalance::new(rt.ln(), rr.ln());
        let grad = sequence_loss_grad(&preds, &gts, &bal, None, &settings).unwrap();
        prop_assert!(grad.d_global_balance[0].abs() < 1e-9);
        prop_assert!(grad.d_global_balance[1].abs() < 1e-9);
        let l0 = sequence_loss(&preds, &gts, &bal, &settings).unwrap().total;
        for d in [-0.3, 0.3] {
            let moved = LossBalance::new(bal.beta + d, bal.gamma - d);
            prop_assert!(sequence_loss(&preds, &gts, &moved, &settings).unwrap().total > l0);
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = common::rng(4);
    let h = 1e-6;
    for trial in 0..20 {
        let n = 2 + trial % 4;
        let (preds, gts) = window(&mut rng, n);
        let bal = LossBalance::new(rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..0.0));
        let rel = LossBalance::new(rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..0.0));
        let settings = LossSettings {
            geometric_constraints: true,
            separate_relative_balance: trial % 2 == 1,
        };
        let grad = sequence_loss_grad(&preds, &gts, &bal, Some(&rel), &settings).unwrap();
        let mut x: Vec<f64> = preds.iter().flat_map(|p| p.to_array()).collect();
        x.extend([bal.beta, bal.gamma, rel.beta, rel.gamma]);
        let mut f = |x: &[f64]| {
            let ps: Vec<LogPose> = x[..n * 6]
                .chunks(6)
                .map(|c| LogPose::from_array(c.try_into().unwrap()))
                .collect();
            let o = n * 6;
            let b = LossBalance::new(x[o], x[o + 1]);
            let r = LossBalance::new(x[o + 2], x[o + 3]);
            sequence_loss_with(&ps, &gts, &b, Some(&r), &settings).unwrap().total
        };
        let mut analytic: Vec<f64> = grad.d_preds.iter().flatten().copied().collect();
        analytic.extend(grad.d_global_balance);
        analytic.extend(grad.d_relative_balance);
        for i in 0..x.len() {
            let num = common::central_difference(&mut f, &x, i, h);
            let err = common::rel_err(analytic[i], num, 1e-6);
            if err > 1e-4 {
                let num2 = common::central_difference(&mut f, &x, i, h / 100.0);
                assert!(common::rel_err(analytic[i], num2, 1e-6) < 1e-4, "input {i}: {} vs {num}", analytic[i]);
            }
        }
        if !settings.separate_relative_balance {
            assert_eq!(grad.d_relative_balance, [0.0, 0.0]);
        }
    }
}

#[test]
fn without_constraints_relative_term_vanishes() {
    let mut rng = common::rng(5);
    let (preds, gts) = window(&mut rng, 4);
    let settings = LossSettings {
        geometric_constraints: false,
        ..LossSettings::default()
    };
    let bal = LossBalance::default();
    let l = sequence_loss(&preds, &gts, &bal, &settings).unwrap();
    assert_eq!((l.relative, l.relative_terms, l.global_terms), (0.0, 0, 4));
    let full = sequence_loss(&preds, &gts, &bal, &LossSettings::default()).unwrap();
    assert_eq!(full.global, l.global);
    assert!(full.total > l.total);
}

#[test]
fn invalid_inputs_are_errors() {
    let mut rng = common::rng(6);
    let (mut preds, gts) = window(&mut rng, 3);
    let bal = LossBalance::default();
    assert!(sequence_loss(&preds[..2], &gts, &bal, &LossSettings::default()).is_err());
    assert!(sequence_loss(&[], &[], &bal, &LossSettings::default()).is_err());
    preds[1] = LogPose::new([f64::NAN, 0.0, 0.0], [0.0; 3]);
    assert!(sequence_loss(&preds, &gts, &bal, &LossSettings::default()).is_err());
    assert!(vanilla_loss_h(&preds[0], &preds[0], &LossBalance::new(f64::INFINITY, 0.0)).is_err());
}
