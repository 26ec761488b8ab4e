//! Rotation and rigid-transform primitives.
//!
//! Rotations are stored as unit quaternions and converted to matrices only
//! where a formula is naturally written in matrix form.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this rotation-vector magnitude the log/exp maps switch to series
/// expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// A 3-D rotation backed by a unit quaternion kept on the `w >= 0`
/// hemisphere, so equal rotations compare equal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

fn hemisphere(q: Quaternion<f64>) -> Quaternion<f64> {
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion components. Components that are
    /// already unit length to rounding are kept bit-for-bit.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = hemisphere(Quaternion::new(w, x, y, z));
        if (q.norm_squared() - 1.0).abs() < 1e-14 {
            Rotation(UnitQuaternion::new_unchecked(q))
        } else {
            Rotation(UnitQuaternion::from_quaternion(q))
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        rotation_vector_exp(axis * (angle / n))
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(UnitQuaternion::new_unchecked(hemisphere(q.into_inner())))
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Components `(w, x, y, z)` on the `w >= 0` hemisphere.
    pub fn canonical_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(UnitQuaternion::new_normalize(hemisphere(*self.0.quaternion() * *other.0.quaternion())))
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn log(&self) -> Vec3 {
        rotation_vector_log(self)
    }

    pub fn exp(v: &Vec3) -> Self {
        rotation_vector_exp(*v)
    }
}

/// Angle of the relative rotation `a b^T`, in `[0, pi]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let (p, q) = (a.quaternion().coords, b.quaternion().coords);
    let q = if p.dot(&q) < 0.0 { -q } else { q };
    4.0 * (p - q).norm().atan2((p + q).norm())
}

/// Axis-angle vector of `r`, magnitude in `[0, pi]`.
pub fn rotation_vector_log(r: &Rotation) -> Vec3 {
    let [w, x, y, z] = r.canonical_wxyz();
    let v = Vec3::new(x, y, z);
    let s = v.norm();
    if s < SMALL_ANGLE {
        // 2 atan(s/w)/s ~ (2/w)(1 - s^2/(3 w^2))
        return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w));
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Rodrigues exponential of a rotation vector.
pub fn rotation_vector_exp(v: Vec3) -> Rotation {
    let theta = v.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < SMALL_ANGLE {
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    Rotation(UnitQuaternion::from_quaternion(hemisphere(Quaternion::new(
        w,
        k * v.x,
        k * v.y,
        k * v.z,
    ))))
}

/// Rigid transform: rotation followed by translation (meters).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose {
            rotation: rinv,
            translation: -rinv.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse().rotate(&(p - self.translation))
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]` with `qw >= 0`.
    pub fn to_array(&self) -> [f64; 7] {
        let [w, x, y, z] = self.rotation.canonical_wxyz();
        let t = self.translation;
        [w, x, y, z, t.x, t.y, t.z]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Pose> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite pose component".into()));
        }
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
        if n < 1e-12 {
            return Err(Error::InvalidValue("zero-norm quaternion".into()));
        }
        Ok(Pose::new(
            Rotation::from_wxyz(a[0], a[1], a[2], a[3]),
            Vec3::new(a[4], a[5], a[6]),
        ))
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}

/// Linear (m/s) and angular (rad/s) velocity, both in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// Velocities of a pose sequence by finite differences.
///
/// Interior frames use central differences, the two ends one-sided ones.
/// Angular velocity is the world-frame rotation vector of the relative
/// rotation divided by the elapsed time.
pub fn finite_difference_twist(poses: &[Pose], dt: f64) -> Result<Vec<Twist>> {
    if poses.len() < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            got: poses.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidValue(format!("dt must be positive, got {dt}")));
    }
    let n = poses.len();
    let diff = |a: &Pose, b: &Pose, span: f64| {
        let linear = (b.translation - a.translation) / span;
        let rel = b.rotation.compose(&a.rotation.inverse());
        Twist::new(linear, rel.log() / span)
    };
    Ok((0..n)
        .map(|i| match i {
            0 => diff(&poses[0], &poses[1], dt),
            i if i == n - 1 => diff(&poses[n - 2], &poses[n - 1], dt),
            i => diff(&poses[i - 1], &poses[i + 1], 2.0 * dt),
        })
        .collect())
}
