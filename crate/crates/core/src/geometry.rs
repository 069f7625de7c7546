//! Rigid-body transforms and the marker → camera → robot-base chain.
//!
//! Naming follows a `target_from_source` reading: a transform called
//! `marker_in_camera` maps coordinates expressed in the marker frame into the
//! camera frame. Composition `a.compose(&b)` maps a point through `b` first,
//! then `a`.

use nalgebra::{Matrix3, Matrix4, Point3 as NPoint3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A point in meters.
pub type Point3 = NPoint3<f64>;

/// Per-entry tolerance for orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Largest accepted marker-to-hand offset, in meters.
pub const MAX_HAND_OFFSET: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation determinant is {det:.9}, expected +1")]
    NotProperRotation { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("hand offset magnitude {0:.3} m exceeds {MAX_HAND_OFFSET} m")]
    HandOffsetTooLarge(f64),
    #[error("matrix columns are linearly dependent, cannot orthonormalize")]
    RankDeficient,
    #[error("expected {expected} numbers in `{field}`, got {got}")]
    WrongLength {
        field: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Proper rigid transform: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting anything that is not a proper rotation.
    ///
    /// No silent re-orthonormalization happens here; use [`orthonormalize`]
    /// explicitly when a drifting matrix has to be repaired.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let deviation = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if deviation > ROTATION_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotProperRotation { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() > 0.0 {
            Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        } else {
            Rotation3::identity()
        };
        Self::from_rotation(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// Unit quaternion `[w, x, y, z]` view of the rotation, for export only.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        [q.w, q.i, q.j, q.k]
    }

    /// Row-major rotation entries as used by the JSON form.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(r: &[f64], t: &[f64]) -> Result<Self, GeometryError> {
        if r.len() != 9 {
            return Err(GeometryError::WrongLength {
                field: "r",
                expected: 9,
                got: r.len(),
            });
        }
        if t.len() != 3 {
            return Err(GeometryError::WrongLength {
                field: "t",
                expected: 3,
                got: t.len(),
            });
        }
        Self::new(
            Matrix3::from_row_slice(r),
            Vector3::new(t[0], t[1], t[2]),
        )
    }
}

/// Gram-Schmidt re-orthonormalization of the columns of `m`.
///
/// The third column is rebuilt as the cross product of the first two so the
/// result is always a proper rotation.
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let c0 = m.column(0).into_owned();
    let c1 = m.column(1).into_owned();
    let n0 = c0.norm();
    if n0 < 1e-12 {
        return Err(GeometryError::RankDeficient);
    }
    let e0 = c0 / n0;
    let u1 = c1 - e0 * e0.dot(&c1);
    let n1 = u1.norm();
    if n1 < 1e-12 {
        return Err(GeometryError::RankDeficient);
    }
    let e1 = u1 / n1;
    let e2 = e0.cross(&e1);
    Ok(Matrix3::from_columns(&[e0, e1, e2]))
}

/// Marker origin → hand center, expressed in the marker frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandOffset(Vector3<f64>);

impl Default for HandOffset {
    /// The marker rides 10 cm above the hand.
    fn default() -> Self {
        HandOffset(Vector3::new(0.0, 0.0, -0.10))
    }
}

impl HandOffset {
    pub fn new(offset: Vector3<f64>) -> Result<Self, GeometryError> {
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("hand offset"));
        }
        let n = offset.norm();
        if n >= MAX_HAND_OFFSET {
            return Err(GeometryError::HandOffsetTooLarge(n));
        }
        Ok(HandOffset(offset))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Checked point constructor.
pub fn finite_point(x: f64, y: f64, z: f64) -> Result<Point3, GeometryError> {
    if x.is_finite() && y.is_finite() && z.is_finite() {
        Ok(Point3::new(x, y, z))
    } else {
        Err(GeometryError::NonFinite("point"))
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Pose of the tracked marker in the robot-base frame:
/// `base_from_marker = (camera_from_base)⁻¹ · camera_from_marker`.
pub fn hand_in_robot_base(
    marker_in_camera: &RigidTransform,
    base_in_camera: &RigidTransform,
) -> RigidTransform {
    base_in_camera.inverse().compose(marker_in_camera)
}

/// Hand center: the hand pose applied to the marker-frame offset.
pub fn hand_center(hand_pose: &RigidTransform, offset: &HandOffset) -> Point3 {
    hand_pose.transform_point(&Point3::from(offset.0))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    r: Vec<f64>,
    t: Vec<f64>,
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TransformRepr {
            r: self.rotation_row_major().to_vec(),
            t: self.translation.iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(deserializer)?;
        RigidTransform::from_row_major(&repr.r, &repr.t).map_err(serde::de::Error::custom)
    }
}

impl Serialize for HandOffset {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.0.x, self.0.y, self.0.z].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HandOffset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(deserializer)?;
        HandOffset::new(Vector3::new(x, y, z)).map_err(serde::de::Error::custom)
    }
}
