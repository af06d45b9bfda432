//! Quaternions, 6-DoF poses and the log-quaternion pose parameterization.
//!
//! Rotations are unit quaternions `(u, v)` with scalar part `u`. The
//! logarithm maps a unit quaternion on the `u >= 0` hemisphere to the
//! 3-vector `v/|v| * acos(u)`; its inverse is `exp(w) = (cos|w|, sin|w| w/|w|)`.
//! Note the logarithm carries the *half* rotation angle.
//!
//! The internal helpers are generic over [`Scalar`] so the loss can be
//! differentiated with dual numbers through the same code paths.

use serde::{Deserialize, Serialize};

use crate::dual::Scalar;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Tolerance on `|q| - 1` accepted by the checked entry points.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Below this squared norm the log/exp factors switch to their Taylor series.
const SERIES_THRESHOLD_SQ: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub u: f64,
    pub v: Vec3,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        u: 1.0,
        v: [0.0; 3],
    };

    pub fn new(u: f64, v: Vec3) -> Self {
        Self { u, v }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let s = (0.5 * angle).sin() / n;
        Self::new((0.5 * angle).cos(), [axis[0] * s, axis[1] * s, axis[2] * s])
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], yaw)
    }

    pub fn norm(&self) -> f64 {
        (self.u * self.u + dot(self.v, self.v)).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::domain("cannot normalize a zero or non-finite quaternion"));
        }
        Ok(Self::new(self.u / n, [self.v[0] / n, self.v[1] / n, self.v[2] / n]))
    }

    /// Representative on the `u >= 0` hemisphere. When `u == 0` the first
    /// nonzero component of `v` is made positive.
    pub fn canonical(&self) -> Self {
        from_arr(canonicalize(to_arr(*self)))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.u, [-self.v[0], -self.v[1], -self.v[2]])
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        from_arr(qmul(to_arr(*self), to_arr(*rhs)))
    }

    pub fn rotate(&self, x: Vec3) -> Vec3 {
        qrotate(to_arr(*self), x)
    }

    pub fn dot(&self, rhs: &Self) -> f64 {
        self.u * rhs.u + dot(self.v, rhs.v)
    }

    /// Heading about +z, for planar projections.
    pub fn yaw(&self) -> f64 {
        let [u, x, y, z] = to_arr(*self);
        (2.0 * (u * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    pub fn as_array(&self) -> [f64; 4] {
        to_arr(*self)
    }
}

/// Absolute pose of the sensor in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub p: Vec3,
    pub q: Quaternion,
    pub timestamp: i64,
}

impl Pose {
    pub fn new(p: Vec3, q: Quaternion, timestamp: i64) -> Self {
        Self { p, q, timestamp }
    }

    pub fn identity() -> Self {
        Self::new([0.0; 3], Quaternion::IDENTITY, 0)
    }

    pub fn planar(x: f64, y: f64, yaw: f64, timestamp: i64) -> Self {
        Self::new([x, y, 0.0], Quaternion::from_yaw(yaw), timestamp)
    }

    /// `(x, y, yaw)` projection used for top-down plots.
    pub fn to_planar(&self) -> [f64; 3] {
        [self.p[0], self.p[1], self.q.yaw()]
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, x: Vec3) -> Vec3 {
        add(self.p, self.q.rotate(x))
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn inverse_transform_point(&self, x: Vec3) -> Vec3 {
        self.q.conjugate().rotate(sub(x, self.p))
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.conjugate();
        let p = qi.rotate(self.p);
        Pose::new([-p[0], -p[1], -p[2]], qi.canonical(), self.timestamp)
    }

    pub fn to_log(&self) -> Result<LogPose> {
        Ok(LogPose {
            p: self.p,
            w: quat_log(&self.q.canonical())?,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.p.iter().all(|x| x.is_finite()) && self.q.is_unit()
    }
}

/// Translation plus log-quaternion: the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogPose {
    pub p: Vec3,
    pub w: Vec3,
}

impl LogPose {
    pub fn new(p: Vec3, w: Vec3) -> Self {
        Self { p, w }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.p[0], self.p[1], self.p[2], self.w[0], self.w[1], self.w[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new([a[0], a[1], a[2]], [a[3], a[4], a[5]])
    }

    pub fn to_pose(&self, timestamp: i64) -> Pose {
        Pose::new(self.p, quat_exp(self.w), timestamp)
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.w.iter()).all(|x| x.is_finite())
    }
}

/// Logarithm of a unit quaternion.
///
/// The input is canonicalized to the `u >= 0` hemisphere first, so `q` and
/// `-q` share a logarithm.
pub fn quat_log(q: &Quaternion) -> Result<Vec3> {
    if !q.norm().is_finite() || !q.is_unit() {
        return Err(Error::domain(format!(
            "quat_log needs a unit quaternion, got norm {}",
            q.norm()
        )));
    }
    Ok(log_generic(canonicalize(to_arr(*q))))
}

pub fn quat_exp(w: Vec3) -> Quaternion {
    from_arr(exp_generic(w))
}

/// Rigid transform taking frame `a` to frame `b`, expressed in frame `a`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let (p, q) = relative_generic((a.p, to_arr(a.q)), (b.p, to_arr(b.q)));
    Pose::new(p, from_arr(q), b.timestamp)
}

/// `a ∘ b`: applies `b` in the frame of `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    let p = add(a.p, a.q.rotate(b.p));
    Pose::new(p, a.q.mul(&b.q).canonical(), b.timestamp)
}

/// Translation error in meters and rotation error in degrees.
pub fn pose_error(pred: &Pose, gt: &Pose) -> (f64, f64) {
    let t = norm(sub(pred.p, gt.p));
    // 2·acos(|<q1,q2>|) evaluated via atan2 of the relative rotation for accuracy near 0.
    let d = pred.q.conjugate().mul(&gt.q);
    let angle = 2.0 * norm(d.v).atan2(d.u.abs());
    (t, angle.to_degrees())
}

// ---------------------------------------------------------------------------
// Generic helpers (quaternions as [u, x, y, z]).

pub(crate) fn to_arr(q: Quaternion) -> [f64; 4] {
    [q.u, q.v[0], q.v[1], q.v[2]]
}

fn from_arr(a: [f64; 4]) -> Quaternion {
    Quaternion::new(a[0], [a[1], a[2], a[3]])
}

pub(crate) fn canonicalize<S: Scalar>(q: [S; 4]) -> [S; 4] {
    let flip = if q[0].re() != 0.0 {
        q[0].re() < 0.0
    } else {
        q[1..]
            .iter()
            .find(|c| c.re() != 0.0)
            .map(|c| c.re() < 0.0)
            .unwrap_or(false)
    };
    if flip {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// `v/|v| * atan2(|v|, u)`, which equals `v/|v| * acos(u)` on unit inputs.
pub(crate) fn log_generic<S: Scalar>(q: [S; 4]) -> [S; 3] {
    let [u, x, y, z] = q;
    let s2 = x * x + y * y + z * z;
    if s2.re() == 0.0 {
        return [S::zero(); 3];
    }
    let factor = if s2.re() < SERIES_THRESHOLD_SQ && u.re() > 0.5 {
        // atan(t)/t with t = |v|/u, divided by u
        let t2 = s2 / (u * u);
        (S::cst(1.0) - t2 / S::cst(3.0) + t2 * t2 / S::cst(5.0)) / u
    } else {
        let s = s2.sqrt();
        s.atan2(u) / s
    };
    [x * factor, y * factor, z * factor]
}

pub(crate) fn exp_generic<S: Scalar>(w: [S; 3]) -> [S; 4] {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (c, sinc) = if t2.re() < SERIES_THRESHOLD_SQ {
        (
            S::cst(1.0) - t2 / S::cst(2.0) + t2 * t2 / S::cst(24.0),
            S::cst(1.0) - t2 / S::cst(6.0) + t2 * t2 / S::cst(120.0),
        )
    } else {
        let t = t2.sqrt();
        (t.cos(), t.sin() / t)
    };
    [c, w[0] * sinc, w[1] * sinc, w[2] * sinc]
}

pub(crate) fn qmul<S: Scalar>(a: [S; 4], b: [S; 4]) -> [S; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn cross<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn qrotate<S: Scalar>(q: [S; 4], x: [S; 3]) -> [S; 3] {
    // x + 2u(v×x) + 2 v×(v×x)
    let v = [q[1], q[2], q[3]];
    let t = cross(v, x);
    let t = [t[0] + t[0], t[1] + t[1], t[2] + t[2]];
    let vt = cross(v, t);
    [
        x[0] + q[0] * t[0] + vt[0],
        x[1] + q[0] * t[1] + vt[1],
        x[2] + q[0] * t[2] + vt[2],
    ]
}

pub(crate) type GenericPose<S> = ([S; 3], [S; 4]);

pub(crate) fn relative_generic<S: Scalar>(a: GenericPose<S>, b: GenericPose<S>) -> GenericPose<S> {
    let qa_inv = [a.1[0], -a.1[1], -a.1[2], -a.1[3]];
    let dp = [b.0[0] - a.0[0], b.0[1] - a.0[1], b.0[2] - a.0[2]];
    (qrotate(qa_inv, dp), canonicalize(qmul(qa_inv, b.1)))
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
