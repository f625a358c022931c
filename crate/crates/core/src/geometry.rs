//! Pinhole projection and rigid-pose algebra.
//!
//! A model point `(a, b, c)` in the object frame is mapped to the camera frame
//! by `R·p + T` and then to pixel coordinates through the intrinsic matrix:
//!
//! ```text
//! u = fx·x/d + cx
//! v = fy·y/d + cy
//! ```
//!
//! # Conventions
//!
//! - Pixel coordinates are continuous. The center of the pixel at integer
//!   indices `(col, row)` is `(u, v) = (col, row)`.
//! - Depth and translations are in meters.
//! - Quaternions are stored `(w, x, y, z)` with `w >= 0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the quaternion norm accepted by [`Rotation::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Pinhole intrinsics plus the image extent they were calibrated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsJson", into = "IntrinsicsJson")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<IntrinsicsJson> for CameraIntrinsics {
    type Error = Error;

    fn try_from(j: IntrinsicsJson) -> Result<Self> {
        CameraIntrinsics::new(j.fx, j.fy, j.cx, j.cy, j.width, j.height)
    }
}

impl From<CameraIntrinsics> for IntrinsicsJson {
    fn from(k: CameraIntrinsics) -> Self {
        IntrinsicsJson {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "extent must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Unit quaternion `(w, x, y, z)`, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a rotation from a quaternion whose norm is within 1e-6 of one.
    /// The stored value is renormalized and sign-canonicalized.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NonUnitQuaternion(norm));
        }
        Ok(Self::normalized(w, x, y, z))
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonUnitQuaternion(norm));
        }
        Ok(Self::normalized(w, x, y, z))
    }

    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        // Already unit up to rounding: keep the bits so serialization round-trips.
        let n = if (n - 1.0).abs() <= 4.0 * f64::EPSILON { 1.0 } else { n };
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument("rotation axis must be non-zero".into()));
        }
        let (s, c) = (angle * 0.5).sin_cos();
        Ok(Self::normalized(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n))
    }

    /// Converts a proper rotation matrix to a quaternion (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > m[(0, 0)] && trace > m[(1, 1)] && trace > m[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::from_quaternion(w, x, y, z)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn inverse(&self) -> Self {
        Self::normalized(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * other` (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Self {
        let (a, b) = (self, other);
        Self::normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.matrix() * Vector3::from(v);
        [r.x, r.y, r.z]
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic distance on SO(3) between two rotations, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }
}

/// Checked conversion of a raw quaternion into a rotation matrix.
pub fn quat_to_matrix(wxyz: [f64; 4]) -> Result<Matrix3<f64>> {
    Ok(Rotation::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3])?.matrix())
}

/// Object-frame point `(a, b, c)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelPoint {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ModelPoint {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }
}

/// Camera-frame point `(x, y, d)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CamPoint {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

impl CamPoint {
    pub fn new(x: f64, y: f64, d: f64) -> Self {
        Self { x, y, d }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.d]
    }
}

/// Pixel position plus the depth observed there.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelSample {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl PixelSample {
    pub fn new(u: f64, v: f64, d: f64) -> Self {
        Self { u, v, d }
    }
}

/// Rigid transform from the object frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

/// Wire form: `{"quat_wxyz": [w, x, y, z], "t": [tx, ty, tz]}`.
#[derive(Serialize, Deserialize)]
struct PoseJson {
    quat_wxyz: [f64; 4],
    t: [f64; 3],
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(j: PoseJson) -> Result<Self> {
        let [w, x, y, z] = j.quat_wxyz;
        Pose::new(Rotation::new(w, x, y, z)?, j.t)
    }
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        PoseJson {
            quat_wxyz: p.rotation.wxyz(),
            t: p.translation,
        }
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Rotation::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Rotation, translation: [f64; 3]) -> Result<Self> {
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("translation must be finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Result<Self> {
        Self::new(Rotation::IDENTITY, t)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        let t = inv.rotate(self.translation);
        Pose {
            rotation: inv,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Returns `(geodesic rotation error in radians, translation error in meters)`.
    pub fn error_to(&self, other: &Pose) -> (f64, f64) {
        let dt = [
            self.translation[0] - other.translation[0],
            self.translation[1] - other.translation[1],
            self.translation[2] - other.translation[2],
        ];
        (
            self.rotation.angle_to(&other.rotation),
            (dt[0] * dt[0] + dt[1] * dt[1] + dt[2] * dt[2]).sqrt(),
        )
    }
}

pub fn pose_inverse(pose: &Pose) -> Pose {
    pose.inverse()
}

/// `R·p + T`.
pub fn transform_point(pose: &Pose, p: ModelPoint) -> CamPoint {
    let [x, y, d] = pose.apply(p.to_array());
    CamPoint { x, y, d }
}

pub fn project(k: &CameraIntrinsics, cp: CamPoint) -> Result<PixelSample> {
    if !(cp.d > 0.0) {
        return Err(Error::DepthNonPositive(cp.d));
    }
    Ok(PixelSample {
        u: k.fx * cp.x / cp.d + k.cx,
        v: k.fy * cp.y / cp.d + k.cy,
        d: cp.d,
    })
}

pub fn backproject(k: &CameraIntrinsics, s: PixelSample) -> Result<CamPoint> {
    if !(s.d > 0.0) {
        return Err(Error::DepthNonPositive(s.d));
    }
    Ok(CamPoint {
        x: (s.u - k.cx) * s.d / k.fx,
        y: (s.v - k.cy) * s.d / k.fy,
        d: s.d,
    })
}
