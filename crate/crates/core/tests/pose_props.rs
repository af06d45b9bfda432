mod common;

use nalgebra::{Isometry3, Quaternion as NQuat, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use radar_reloc::pose::{compose, pose_error, quat_exp, quat_log, relative_pose, Pose, Quaternion};

fn to_na(q: &Quaternion) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(NQuat::new(q.u, q.v[0], q.v[1], q.v[2]))
}

fn iso(p: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::new(p.p[0], p.p[1], p.p[2]), to_na(&p.q))
}

fn same_rotation(a: &Quaternion, b: &UnitQuaternion<f64>, tol: f64) -> bool {
    let d = (a.u * b.w + a.v[0] * b.i + a.v[1] * b.j + a.v[2] * b.k).abs();
    (1.0 - d).abs() < tol
}

prop_compose! {
    fn unit_quat()(v in prop::array::uniform4(-1.0f64..1.0)) -> Quaternion {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
        let q = Quaternion::new(v[0] / n, [v[1] / n, v[2] / n, v[3] / n]);
        if q.is_unit() { q } else { Quaternion::IDENTITY }
    }
}

prop_compose! {
    fn pose()(p in prop::array::uniform3(-100.0f64..100.0), q in unit_quat(), t in 0i64..1_000_000) -> Pose {
        Pose::new(p, q, t)
    }
}

proptest! {
    #[test]
    fn log_matches_scaled_axis_oracle(q in unit_quat()) {
        let w = quat_log(&q).unwrap();
        let c = q.canonical();
        let axis_angle = to_na(&c).scaled_axis();
        for k in 0..3 {
            prop_assert!((w[k] - axis_angle[k] / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_matches_scaled_axis_oracle(w in prop::array::uniform3(-1.5f64..1.5)) {
        let q = quat_exp(w);
        let oracle = UnitQuaternion::from_scaled_axis(Vector3::new(2.0 * w[0], 2.0 * w[1], 2.0 * w[2]));
        prop_assert!(same_rotation(&q, &oracle, 1e-12));
        prop_assert!(q.is_unit());
    }

    #[test]
    fn log_exp_round_trip(q in unit_quat()) {
        let back = quat_exp(quat_log(&q).unwrap()).canonical();
        let c = q.canonical();
        prop_assert!((back.u - c.u).abs() < 1e-9);
        for k in 0..3 {
            prop_assert!((back.v[k] - c.v[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_matches_oracle(q in unit_quat(), x in prop::array::uniform3(-10.0f64..10.0)) {
        let r = q.rotate(x);
        let o = to_na(&q) * Vector3::new(x[0], x[1], x[2]);
        for k in 0..3 {
            prop_assert!((r[k] - o[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn relative_pose_matches_isometry_oracle(a in pose(), b in pose()) {
        let r = relative_pose(&a, &b);
        let o = iso(&a).inverse() * iso(&b);
        for k in 0..3 {
            prop_assert!((r.p[k] - o.translation.vector[k]).abs() < 1e-9);
        }
        prop_assert!(same_rotation(&r.q, &o.rotation, 1e-12));
        prop_assert!(r.q.u >= 0.0);
    }

    #[test]
    fn compose_inverts_relative(a in pose(), b in pose()) {
        let back = compose(&a, &relative_pose(&a, &b));
        let (t, r) = pose_error(&back, &b);
        prop_assert!(t < 1e-9);
        prop_assert!(r < 1e-5);
        let ident = relative_pose(&a, &a);
        prop_assert!(ident.p.iter().all(|x| x.abs() < 1e-9));
        prop_assert!((ident.q.u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_error_is_symmetric_and_zero_on_self(a in pose(), b in pose()) {
        let (t1, r1) = pose_error(&a, &b);
        let (t2, r2) = pose_error(&b, &a);
        prop_assert!((t1 - t2).abs() < 1e-12);
        prop_assert!((r1 - r2).abs() < 1e-9);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&r1));
        let (t0, r0) = pose_error(&a, &a);
        prop_assert!(t0 == 0.0 && r0 < 1e-5);
    }

    #[test]
    fn rotation_error_ignores_hemisphere(a in pose(), b in pose()) {
        let flipped = Pose::new(b.p, Quaternion::new(-b.q.u, [-b.q.v[0], -b.q.v[1], -b.q.v[2]]), b.timestamp);
        let (_, r1) = pose_error(&a, &b);
        let (_, r2) = pose_error(&a, &flipped);
        prop_assert!((r1 - r2).abs() < 1e-9);
        let angle = to_na(&a.q).angle_to(&to_na(&b.q)).to_degrees();
        prop_assert!((r1 - angle).abs() < 1e-6);
    }
}

#[test]
fn log_pose_round_trip_through_arrays() {
    let mut rng = common::rng(11);
    for i in 0..200 {
        let p = common::random_pose(&mut rng, i);
        let lp = p.to_log().unwrap();
        let back = radar_reloc::pose::LogPose::from_array(lp.to_array()).to_pose(i);
        let (t, r) = pose_error(&back, &p);
        assert!(t < 1e-12 && r < 1e-6, "{t} {r}");
        assert_eq!(back.timestamp, i);
    }
}
