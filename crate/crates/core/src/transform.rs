//! Rigid transforms stored as a rotation matrix plus translation.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Tolerance of the internal invariant check.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Tolerance applied to poses read from files.
pub const POSE_FILE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Serialized as the 16 row-major entries of the homogeneous matrix.
impl serde::Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 16]>::deserialize(d)?;
        Self::from_row_major(&v, POSE_FILE_TOL).map_err(serde::de::Error::custom)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation of `|v|` radians about `v`, then translation.
    pub fn from_rotation_vector(v: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_rotation(Rotation3::new(v), translation)
    }

    /// Validates orthonormality and det = +1 within `tol`.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(Error::InvalidPose(format!("rotation determinant {det} is not positive")));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidPose(format!("rotation not orthonormal (error {err:e})")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_matrix4(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidPose(format!("bottom row {bottom:?} is not (0,0,0,1)")));
        }
        Self::from_parts(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned(), tol)
    }

    /// 16 values, row-major.
    pub fn from_row_major(values: &[f64], tol: f64) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::InvalidPose(format!("expected 16 values, got {}", values.len())));
        }
        Self::from_matrix4(&Matrix4::from_row_slice(values), tol)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.quaternion().scaled_axis()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of `self⁻¹ ∘ other`, radians.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Rotation angle (radians) and translation norm of this transform.
    pub fn magnitude(&self) -> (f64, f64) {
        (rotation_angle(&self.rotation), self.translation.norm())
    }

    /// Largest deviation of RᵀR from I.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// Angle of a rotation matrix in [0, π], robust near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * skew.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Nearest rotation (polar decomposition) of an arbitrary 3×3 matrix with positive determinant.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        // singular values come sorted descending, so the last column is the weakest
        r = u * d * vt;
    }
    r
}
