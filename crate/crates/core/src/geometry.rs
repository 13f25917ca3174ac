//! Rigid transforms, pinhole cameras, rectified stereo and known-radius circle
//! constructions.
//!
//! Everything here works in meters and radians; pixels only appear at the
//! camera boundary.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Number of compositions after which a rotation is re-orthonormalized.
const REPAIR_CHAIN: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth:.3e} m in camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("disparity {disparity:.4} px is too small to triangulate")]
    ZeroDisparity { disparity: f64 },
    #[error("pixels lie on different scanlines ({left:.2} vs {right:.2})")]
    ScanlineMismatch { left: f64, right: f64 },
    #[error("points are degenerate (collinear or coincident)")]
    DegeneratePoints,
    #[error("chord {chord:.6} m is longer than the diameter of a radius {radius:.6} m circle")]
    ChordTooLong { chord: f64, radius: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
    #[error("matrix is not a proper rotation")]
    InvalidRotation,
    #[error("invalid circle: {0}")]
    InvalidCircle(String),
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vec3,
    chain: u32,
}

impl PartialEq for RigidTransform {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation, chain: 0 }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// Builds a transform from a raw matrix, rejecting anything that is not
    /// orthonormal with determinant +1 (within 1e-9).
    pub fn from_matrix(m: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self::new(Rotation3::from_matrix_unchecked(m), translation))
    }

    /// Rotation whose columns are the given frame axes expressed in the parent
    /// frame. The axes must be orthonormal and right-handed.
    pub fn from_axes(x: Vec3, y: Vec3, z: Vec3, translation: Vec3) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_columns(&[x, y, z]), translation)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn with_translation(&self, translation: Vec3) -> Self {
        Self { translation, ..*self }
    }

    pub fn with_rotation(&self, rotation: Rotation3<f64>) -> Self {
        Self { rotation, ..*self }
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.rotation.matrix().column(i).into_owned()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        let mut chain = self.chain.max(other.chain) + 1;
        if chain > REPAIR_CHAIN {
            rotation.renormalize();
            chain = 0;
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
            chain,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rinv = self.rotation.inverse();
        RigidTransform { rotation: rinv, translation: -(rinv * self.translation), chain: self.chain }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Geodesic angle between the two rotations (radians, in [0, π]).
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Left-multiplies a world-frame rotation about `pivot`.
    pub fn rotated_about(&self, rotation: &Rotation3<f64>, pivot: &Vec3) -> RigidTransform {
        let about = RigidTransform::from_translation(*pivot)
            .compose(&RigidTransform::from_rotation(*rotation))
            .compose(&RigidTransform::from_translation(-pivot));
        about.compose(self)
    }

    pub fn translated(&self, delta: &Vec3) -> RigidTransform {
        RigidTransform { translation: self.translation + delta, ..*self }
    }

    /// Mirror image across the world `x = 0` plane, kept proper by also
    /// flipping the frame's x-axis.
    pub fn mirrored_x(&self) -> RigidTransform {
        let s = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        let m = s * self.rotation.matrix() * s;
        RigidTransform::new(
            Rotation3::from_matrix_unchecked(m),
            Vec3::new(-self.translation.x, self.translation.y, self.translation.z),
        )
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Pinhole camera; `pose` maps camera coordinates (x right, y down, z forward)
/// to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: RigidTransform,
    pub width: usize,
    pub height: usize,
}

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        pose: RigidTransform,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, pose, width, height })
    }

    /// Camera whose optical axis points from `eye` toward `target`, with the
    /// image x-axis aligned to `right` (projected perpendicular to the axis).
    #[allow(clippy::too_many_arguments)]
    pub fn looking_at(
        eye: Vec3,
        target: Vec3,
        right: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let pose = look_at_pose(eye, target, right)?;
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, pose, width, height)
    }

    pub fn position(&self) -> Vec3 {
        self.pose.translation()
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.pose.axis(2)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.pose.inverse().transform_point(p)
    }

    pub fn project(&self, p: &Vec3) -> Result<Vec2, GeometryError> {
        let pc = self.to_camera(p);
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth { depth: pc.z });
        }
        Ok(Vec2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }

    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Frame at `eye` with z toward `target` and x as close to `right` as possible.
pub fn look_at_pose(eye: Vec3, target: Vec3, right: Vec3) -> Result<RigidTransform, GeometryError> {
    let z = target - eye;
    if z.norm() < 1e-12 {
        return Err(GeometryError::DegeneratePoints);
    }
    let z = z.normalize();
    let x = right - z * right.dot(&z);
    if x.norm() < 1e-9 {
        return Err(GeometryError::DegeneratePoints);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    RigidTransform::from_axes(x, y, z, eye)
}

/// Row-aligned camera pair: identical intrinsics and rotation, the right
/// camera displaced by `baseline` along the left camera's x-axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(left: CameraModel, baseline: f64) -> Result<Self, GeometryError> {
        if !(baseline > 0.0) {
            return Err(GeometryError::InvalidRig(format!("baseline must be positive, got {baseline}")));
        }
        let right = CameraModel {
            pose: left.pose.compose(&RigidTransform::from_translation(Vec3::new(baseline, 0.0, 0.0))),
            ..left
        };
        Ok(Self { left, right, baseline })
    }

    /// Checks the rectification invariants for a rig assembled by hand.
    pub fn from_cameras(left: CameraModel, right: CameraModel) -> Result<Self, GeometryError> {
        let same_intrinsics = left.fx == right.fx
            && left.fy == right.fy
            && left.cx == right.cx
            && left.cy == right.cy
            && left.width == right.width
            && left.height == right.height;
        if !same_intrinsics {
            return Err(GeometryError::InvalidRig("intrinsics differ".into()));
        }
        if left.pose.rotation_angle_to(&right.pose) > 1e-9 {
            return Err(GeometryError::InvalidRig("camera rotations differ".into()));
        }
        let offset = left.pose.inverse().transform_point(&right.pose.translation());
        if offset.y.abs() > 1e-9 || offset.z.abs() > 1e-9 || offset.x <= 0.0 {
            return Err(GeometryError::InvalidRig("right camera is not offset along +x".into()));
        }
        Ok(Self { left, right, baseline: offset.x })
    }
}

/// Closed-form rectified triangulation, `depth = f·b / disparity`.
pub fn triangulate(rig: &StereoRig, px_left: &Vec2, px_right: &Vec2) -> Result<Vec3, GeometryError> {
    if (px_left.y - px_right.y).abs() > 1.0 {
        return Err(GeometryError::ScanlineMismatch { left: px_left.y, right: px_right.y });
    }
    let disparity = px_left.x - px_right.x;
    if disparity <= 0.01 {
        return Err(GeometryError::ZeroDisparity { disparity });
    }
    let cam = &rig.left;
    let z = cam.fx * rig.baseline / disparity;
    let v = 0.5 * (px_left.y + px_right.y);
    let local = Vec3::new((px_left.x - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z);
    Ok(cam.pose.transform_point(&local))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle3 {
    pub center: Vec3,
    pub normal: Vec3,
    pub radius: f64,
}

impl Circle3 {
    pub fn new(center: Vec3, normal: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::InvalidCircle(format!("radius must be positive, got {radius}")));
        }
        let n = normal.norm();
        if n < 1e-12 {
            return Err(GeometryError::InvalidCircle("zero normal".into()));
        }
        Ok(Self { center, normal: normal / n, radius })
    }

    pub fn flipped(&self) -> Self {
        Self { normal: -self.normal, ..*self }
    }
}

/// Plane `normal · x = offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

pub fn plane_from_points(p1: &Vec3, p2: &Vec3, p3: &Vec3) -> Result<Plane, GeometryError> {
    let n = (p2 - p1).cross(&(p3 - p1));
    let twice_area = n.norm();
    if twice_area <= 2e-12 {
        return Err(GeometryError::DegeneratePoints);
    }
    let normal = n / twice_area;
    // Averaging keeps all three residuals at rounding level.
    let offset = (normal.dot(p1) + normal.dot(p2) + normal.dot(p3)) / 3.0;
    Ok(Plane { normal, offset })
}

/// The one or two radius-`r` circles in the plane with normal `plane_normal`
/// that pass through both points. Centers sit on the chord's perpendicular
/// bisector at `h = sqrt(r² − (|p1−p2|/2)²)` on either side.
pub fn circles_from_pair(
    p1: &Vec3,
    p2: &Vec3,
    plane_normal: &Vec3,
    r: f64,
) -> Result<Vec<Circle3>, GeometryError> {
    let chord = p2 - p1;
    let len = chord.norm();
    if len < 1e-12 {
        return Err(GeometryError::DegeneratePoints);
    }
    if len > 2.0 * r + 1e-12 {
        return Err(GeometryError::ChordTooLong { chord: len, radius: r });
    }
    let normal = Unit::new_normalize(*plane_normal).into_inner();
    let mid = 0.5 * (p1 + p2);
    let h2 = r * r - 0.25 * len * len;
    if h2 <= 0.0 {
        return Ok(vec![Circle3::new(mid, normal, r)?]);
    }
    let toward = normal.cross(&chord).normalize() * h2.sqrt();
    Ok(vec![Circle3::new(mid + toward, normal, r)?, Circle3::new(mid - toward, normal, r)?])
}

/// Distance from `p` to the nearest point of the circle curve.
pub fn point_circle_distance(c: &Circle3, p: &Vec3) -> f64 {
    let v = p - c.center;
    let axial = v.dot(&c.normal);
    let radial = (v - c.normal * axial).norm();
    ((radial - c.radius).powi(2) + axial * axial).sqrt()
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Rotation3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let cross = a.cross(&b);
    let sin = cross.norm();
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    if sin < 1e-15 {
        if cos > 0.0 {
            return Rotation3::identity();
        }
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let axis = Unit::new_normalize(a.cross(&helper));
        return Rotation3::from_axis_angle(&axis, std::f64::consts::PI);
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(cross), sin.atan2(cos))
}

/// Angle between two vectors in [0, π].
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let cross = a.cross(b).norm();
    cross.atan2(a.dot(b))
}

/// Caps a rotation to at most `max_angle` along its own geodesic.
pub fn cap_rotation(r: &Rotation3<f64>, max_angle: f64) -> Rotation3<f64> {
    let angle = r.angle();
    if angle <= max_angle {
        return *r;
    }
    match r.axis() {
        Some(axis) => Rotation3::from_axis_angle(&axis, max_angle),
        None => *r,
    }
}
