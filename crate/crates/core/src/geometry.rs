//! Frames, rigid-body transforms and angle helpers.
//!
//! All frames follow the NED / body (x forward, y right, z down) convention.
//! Euler angles are Z-Y-X (yaw, then pitch, then roll), so that
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)` maps body vectors into the
//! reference frame.

use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference frames that poses can be expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameId {
    WorldNed,
    Station,
    /// The principal tag just above the station entry; the docking filter's navigation frame.
    TagStar,
    Body,
    Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("frame mismatch: expected {expected:?}, got {found:?}")]
pub struct FrameMismatch {
    pub expected: FrameId,
    pub found: FrameId,
}

impl FrameMismatch {
    pub fn check(expected: FrameId, found: FrameId) -> Result<(), FrameMismatch> {
        if expected == found {
            Ok(())
        } else {
            Err(FrameMismatch { expected, found })
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a - TAU * ((a + PI) / TAU).floor();
    // floor() leaves us in [-pi, pi); fold the lower edge over.
    if w <= -PI {
        w += TAU;
    }
    if w > PI {
        w -= TAU;
    }
    w
}

/// A rigid transform tagged with the frame it is expressed in.
///
/// `position` and `orientation` give the child frame's origin and axes in
/// `frame`. The child frame is not stored; callers keep the bookkeeping
/// straight when chaining poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub frame: FrameId,
}

impl Pose {
    pub fn identity(frame: FrameId) -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            frame,
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>, frame: FrameId) -> Self {
        Self {
            position,
            orientation,
            frame,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64, frame: FrameId) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity(), frame)
    }

    pub fn from_euler(
        position: Vector3<f64>,
        roll: f64,
        pitch: f64,
        yaw: f64,
        frame: FrameId,
    ) -> Self {
        Self::new(
            position,
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            frame,
        )
    }

    /// Planar pose helper: position plus heading, level attitude.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64, frame: FrameId) -> Self {
        Self::from_euler(Vector3::new(x, y, z), 0.0, 0.0, yaw, frame)
    }

    /// (roll, pitch, yaw), yaw in `(-pi, pi]`.
    pub fn euler(&self) -> (f64, f64, f64) {
        let (r, p, y) = self.orientation.euler_angles();
        (r, p, wrap_angle(y))
    }

    pub fn roll(&self) -> f64 {
        self.euler().0
    }

    pub fn pitch(&self) -> f64 {
        self.euler().1
    }

    pub fn yaw(&self) -> f64 {
        self.euler().2
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.orientation.to_rotation_matrix()
    }

    /// Maps a point from the child frame into `self.frame`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    /// Maps a point from `self.frame` into the child frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }

    /// `self ∘ other`: `other` is expressed in this pose's child frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.orientation * other.orientation;
        Pose {
            position: self.transform_point(&other.position),
            orientation: UnitQuaternion::new_normalize(q.into_inner()),
            frame: self.frame,
        }
    }

    /// The inverse transform, expressed in `frame` (this pose's child frame).
    pub fn inverse(&self, frame: FrameId) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
            frame,
        }
    }

    /// Same transform relabelled into a different frame id. Used where two
    /// frames coincide by construction.
    pub fn with_frame(mut self, frame: FrameId) -> Pose {
        self.frame = frame;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// Translation distance and absolute rotation angle to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let dp = (self.position - other.position).norm();
        let dr = self.orientation.angle_to(&other.orientation);
        (dp, dr)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let q = self.orientation.quaternion();
        let mut st = s.serialize_struct("Pose", 3)?;
        st.serialize_field(
            "position",
            &[self.position.x, self.position.y, self.position.z],
        )?;
        st.serialize_field("orientation", &[q.w, q.i, q.j, q.k])?;
        st.serialize_field("frame", &self.frame)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            position: [f64; 3],
            orientation: [f64; 4],
            frame: FrameId,
        }
        let r = Raw::deserialize(d)?;
        let o = r.orientation;
        Ok(Pose::new(
            Vector3::from(r.position),
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(o[0], o[1], o[2], o[3])),
            r.frame,
        ))
    }
}

/// `a ∘ b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Inverse of `p`, expressed in `frame`.
pub fn invert(p: &Pose, frame: FrameId) -> Pose {
    p.inverse(frame)
}

/// Body-frame velocity twist.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl BodyVelocity {
    pub fn linear(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.w)
    }

    pub fn angular(&self) -> Vector3<f64> {
        Vector3::new(self.p, self.q, self.r)
    }

    pub fn is_finite(&self) -> bool {
        [self.u, self.v, self.w, self.p, self.q, self.r]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: [
                self.min[0] - margin,
                self.min[1] - margin,
                self.min[2] - margin,
            ],
            max: [
                self.max[0] + margin,
                self.max[1] + margin,
                self.max[2] + margin,
            ],
        }
    }

    /// Parametric interval `[t0, t1] ⊆ [0, 1]` over which the segment `a → b`
    /// lies inside the box, if any (slab method).
    pub fn segment_interval(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<(f64, f64)> {
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if a[i] < self.min[i] || a[i] > self.max[i] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[i];
                let mut lo = (self.min[i] - a[i]) * inv;
                let mut hi = (self.max[i] - a[i]) * inv;
                if lo > hi {
                    core::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

/// True if the segment `a → b` passes within `radius` of `center`.
pub fn segment_hits_sphere(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    center: &Vector3<f64>,
    radius: f64,
) -> bool {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((center - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + d * t - center).norm() <= radius
}

#[cfg(test)]
mod tests {
    use super::*;
    #[test]
    fn wrap_angle_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_close!(wrap_angle(TAU), 0.0, 1e-12);
        assert_close!(wrap_angle(3.5 * PI), -0.5 * PI, 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn identity_compose() {
        let p = Pose::from_euler(
            Vector3::new(1.0, -2.0, 0.5),
            0.1,
            -0.2,
            2.0,
            FrameId::Station,
        );
        let id = Pose::identity(FrameId::Station);
        let (dp, dr) = id.compose(&p).distance_to(&p);
        assert!(dp < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn translate_yaw_translate() {
        // Hand-built: T(1,0,0) * Rz(90°) * T(1,0,0). Rz(90°) maps x to y
        // (north to east), so the second unit step goes east.
        let t = Pose::from_translation(1.0, 0.0, 0.0, FrameId::WorldNed);
        let r = Pose::from_xyz_yaw(0.0, 0.0, 0.0, PI / 2.0, FrameId::WorldNed);
        let out = t.compose(&r).compose(&t);
        assert_close!(out.position.x, 1.0, 1e-12);
        assert_close!(out.position.y, 1.0, 1e-12);
        assert_close!(out.position.z, 0.0, 1e-12);
        assert_close!(out.yaw(), PI / 2.0, 1e-12);
    }

    #[test]
    fn pure_translation_inverse() {
        let p = Pose::from_translation(1.0, 2.0, 3.0, FrameId::Station);
        let inv = p.inverse(FrameId::Body);
        assert_eq!(inv.position, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(inv.frame, FrameId::Body);
        let id = Pose::identity(FrameId::Station).inverse(FrameId::Station);
        assert_eq!(id, Pose::identity(FrameId::Station));
    }

    #[test]
    fn slab_interval() {
        let b = Aabb::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let (t0, t1) = b
            .segment_interval(&Vector3::new(-3.0, 0.0, 0.0), &Vector3::new(3.0, 0.0, 0.0))
            .unwrap();
        assert_close!(t0, 1.0 / 3.0, 1e-12);
        assert_close!(t1, 2.0 / 3.0, 1e-12);
        assert!(b
            .segment_interval(&Vector3::new(-3.0, 2.0, 0.0), &Vector3::new(3.0, 2.0, 0.0))
            .is_none());
    }

    #[test]
    fn sphere_segment() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(2.0, 0.0, 0.0);
        assert!(segment_hits_sphere(
            &a,
            &b,
            &Vector3::new(1.0, 0.2, 0.0),
            0.25
        ));
        assert!(!segment_hits_sphere(
            &a,
            &b,
            &Vector3::new(1.0, 0.3, 0.0),
            0.25
        ));
        assert!(!segment_hits_sphere(
            &a,
            &b,
            &Vector3::new(-0.5, 0.0, 0.0),
            0.25
        ));
    }
}
