//! Rotation, pose and rigid-transform primitives.
//!
//! Conventions used everywhere in this crate:
//!
//! - Quaternions are Hamilton-convention, scalar-first, and act as *active*
//!   rotations. An attitude quaternion stored in a [`Pose`] rotates body-frame
//!   coordinates into world-frame coordinates: `v_w = attitude * v_b`.
//! - Stored quaternions are kept in the `w >= 0` half-space; [`canonicalize`]
//!   maps the two representations of a rotation onto one.
//! - A [`RigidTransform`] maps coordinates of the "child" frame into the
//!   "parent" frame: `v_parent = R * v_child + t`. `compose(a, b)` therefore
//!   chains parent<-mid with mid<-child to give parent<-child.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::Real;

/// Violations of rigid-transform structure when importing raw matrices.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(String),
}

/// Map a unit quaternion onto the `w >= 0` representative of its rotation.
pub fn canonicalize<T: Real>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    if q.w < T::zero() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Compose two rotations, renormalizing to suppress drift.
///
/// `quat_compose(a, b)` applies `b` first: rotating with the result equals
/// rotating with `b`, then with `a`.
pub fn quat_compose<T: Real>(a: UnitQuaternion<T>, b: UnitQuaternion<T>) -> UnitQuaternion<T> {
    UnitQuaternion::new_normalize(a.into_inner() * b.into_inner())
}

/// Rotation about +z by `yaw` radians.
pub fn yaw_quat<T: Real>(yaw: T) -> UnitQuaternion<T> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// Yaw (z-y-x convention) of a rotation.
pub fn yaw_of<T: Real>(q: &UnitQuaternion<T>) -> T {
    let two = T::from_f64c(2.0);
    let one = T::one();
    let siny = two * (q.w * q.k + q.i * q.j);
    let cosy = one - two * (q.j * q.j + q.k * q.k);
    siny.atan2(cosy)
}

/// Yaw-only component of a rotation, as a pure rotation about +z.
pub fn yaw_component<T: Real>(q: &UnitQuaternion<T>) -> UnitQuaternion<T> {
    yaw_quat(yaw_of(q))
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::pi();
    let two_pi = T::from_f64c(2.0) * pi;
    let mut x = a;
    while x <= -pi {
        x += two_pi;
    }
    while x > pi {
        x -= two_pi;
    }
    x
}

/// Position plus attitude of a body in a reference frame.
///
/// `attitude` rotates body coordinates into the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub position: Vector3<T>,
    pub attitude: UnitQuaternion<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vector3<T>, attitude: UnitQuaternion<T>) -> Self {
        Self {
            position,
            attitude: canonicalize(attitude),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    /// The transform taking body-frame coordinates to the reference frame.
    pub fn to_transform(&self) -> RigidTransform<T> {
        RigidTransform::from_parts(self.attitude.to_rotation_matrix(), self.position)
    }
}

/// Proper rigid transform: rotation in SO(3) plus a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Rotation3<T>,
    translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Rotation3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_quat_translation(q: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self::from_parts(q.to_rotation_matrix(), translation)
    }

    pub fn from_pose(pose: &Pose<T>) -> Self {
        pose.to_transform()
    }

    pub fn to_pose(&self) -> Pose<T> {
        Pose::new(
            self.translation,
            canonicalize(UnitQuaternion::from_rotation_matrix(&self.rotation)),
        )
    }

    pub fn rotation(&self) -> &Rotation3<T> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<T> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// `self` maps mid->parent, `child` maps child->mid; the result maps
    /// child->parent.
    pub fn compose(&self, child: &Self) -> Self {
        Self {
            rotation: self.rotation * child.rotation,
            translation: self.rotation * child.translation + self.translation,
        }
    }

    /// Exact inverse using the rigid structure (`R^T`, `-R^T t`).
    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Apply to a point expressed in the child frame.
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction (no translation).
    pub fn rotate_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// The equivalent 4x4 homogeneous matrix.
    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Import a homogeneous matrix, validating rigid structure to 1e-9.
    pub fn from_homogeneous(m: &Matrix4<T>) -> Result<Self, GeomError> {
        let tol = T::from_f64c(1e-9);
        for c in 0..3 {
            if m[(3, c)].abs() > tol {
                return Err(GeomError::NotRigid(format!(
                    "bottom row entry {c} is not zero"
                )));
            }
        }
        if (m[(3, 3)] - T::one()).abs() > tol {
            return Err(GeomError::NotRigid("bottom-right entry is not one".into()));
        }
        let r: Matrix3<T> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = r.transpose() * r - Matrix3::identity();
        if ortho.norm() > tol {
            return Err(GeomError::NotRigid(
                "rotation block is not orthonormal".into(),
            ));
        }
        if (r.determinant() - T::one()).abs() > tol {
            return Err(GeomError::NotRigid(
                "rotation block determinant is not +1".into(),
            ));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(r),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }
}

/// Serde adapter representing a 3-vector as a plain `[x, y, z]` array, for
/// config-file fields. Use with `#[serde(with = "crate::geom::serde_vec3")]`.
pub mod serde_vec3 {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(a[0], a[1], a[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Quaternion;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    type Q = UnitQuaternion<f64>;
    type V = Vector3<f64>;

    fn random_quat(rng: &mut StdRng) -> Q {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        Q::from_quaternion(q)
    }

    fn random_vec(rng: &mut StdRng) -> V {
        V::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        )
    }

    #[test]
    fn compose_matches_rotation_matrix_product() {
        // Oracle: the rotation-matrix product, built independently of the
        // quaternion product path.
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            let q = quat_compose(a, b);
            let m_oracle = a.to_rotation_matrix().matrix() * b.to_rotation_matrix().matrix();
            assert!((q.to_rotation_matrix().matrix() - m_oracle).norm() < 1e-12);
        }
    }

    #[test]
    fn compose_associative() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..500 {
            let (a, b, c) = (
                random_quat(&mut rng),
                random_quat(&mut rng),
                random_quat(&mut rng),
            );
            let left = quat_compose(quat_compose(a, b), c);
            let right = quat_compose(a, quat_compose(b, c));
            let v = random_vec(&mut rng);
            assert!((left * v - right * v).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..500 {
            let q = random_quat(&mut rng);
            let v = random_vec(&mut rng);
            assert_relative_eq!((q * v).norm(), v.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn canonicalize_fixes_hemisphere_and_rotation() {
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let neg = Q::new_unchecked(-q.into_inner());
            let (cq, cn) = (canonicalize(q), canonicalize(neg));
            assert!(cq.w >= 0.0 && cn.w >= 0.0);
            assert!((cq.into_inner() - cn.into_inner()).norm() < 1e-15);
            let v = random_vec(&mut rng);
            assert!((cq * v - q * v).norm() < 1e-12);
        }
    }

    #[test]
    fn ninety_degree_yaw_example() {
        let q = yaw_quat(std::f64::consts::FRAC_PI_2);
        let v = q * V::new(1.0, 0.0, 0.0);
        assert!((v - V::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert_relative_eq!(yaw_of(&q), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn transform_compose_matches_homogeneous_product() {
        // Oracle: 4x4 homogeneous matrix multiplication.
        let mut rng = StdRng::seed_from_u64(15);
        for _ in 0..500 {
            let a = RigidTransform::from_quat_translation(random_quat(&mut rng), random_vec(&mut rng));
            let b = RigidTransform::from_quat_translation(random_quat(&mut rng), random_vec(&mut rng));
            let c = a.compose(&b);
            let oracle = a.to_homogeneous() * b.to_homogeneous();
            assert!((c.to_homogeneous() - oracle).norm() < 1e-12);

            let p = random_vec(&mut rng);
            let hp = oracle * p.push(1.0);
            assert!((c.transform_point(&p) - hp.xyz()).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_inverse_matches_general_matrix_inverse() {
        // Oracle: generic 4x4 LU inverse of the homogeneous form, which never
        // touches the rigid-specific inverse path.
        let mut rng = StdRng::seed_from_u64(16);
        for _ in 0..500 {
            let a = RigidTransform::from_quat_translation(random_quat(&mut rng), random_vec(&mut rng));
            let inv = a.inverse();
            let oracle = a.to_homogeneous().try_inverse().expect("invertible");
            assert!((inv.to_homogeneous() - oracle).norm() < 1e-9);
            let round = a.compose(&inv).to_homogeneous();
            assert!((round - Matrix4::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_round_trip_and_validation() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let a = RigidTransform::from_quat_translation(random_quat(&mut rng), random_vec(&mut rng));
            let back = RigidTransform::from_homogeneous(&a.to_homogeneous()).unwrap();
            assert!((a.to_homogeneous() - back.to_homogeneous()).norm() < 1e-12);
        }

        // Scaled rotation block must be rejected.
        let mut bad = RigidTransform::<f64>::identity().to_homogeneous();
        bad[(0, 0)] = 1.5;
        assert!(RigidTransform::from_homogeneous(&bad).is_err());

        // Reflections (det = -1) must be rejected.
        let mut refl = Matrix4::<f64>::identity();
        refl[(0, 0)] = -1.0;
        assert!(RigidTransform::from_homogeneous(&refl).is_err());

        // Non-trivial bottom row must be rejected.
        let mut proj = RigidTransform::<f64>::identity().to_homogeneous();
        proj[(3, 1)] = 1e-6;
        assert!(RigidTransform::from_homogeneous(&proj).is_err());
    }

    #[test]
    fn pose_round_trip() {
        let mut rng = StdRng::seed_from_u64(18);
        for _ in 0..200 {
            let pose = Pose::new(random_vec(&mut rng), random_quat(&mut rng));
            let t = pose.to_transform();
            let back = t.to_pose();
            assert!((back.position - pose.position).norm() < 1e-12);
            assert!(
                (canonicalize(pose.attitude).into_inner() - back.attitude.into_inner()).norm()
                    < 1e-9
            );
        }
    }

    #[test]
    fn translation_only_transform_shifts_points() {
        let t = RigidTransform::from_quat_translation(Q::identity(), V::new(1.0, 2.0, 3.0));
        let p = t.transform_point(&V::new(0.5, 0.0, -0.5));
        assert!((p - V::new(1.5, 2.0, 2.5)).norm() < 1e-15);
    }

    #[test]
    fn works_for_f32_scalars() {
        let q = yaw_quat(0.5f32);
        let t = RigidTransform::from_quat_translation(q, Vector3::new(1.0f32, 0.0, 0.0));
        let p = t.transform_point(&Vector3::new(1.0f32, 0.0, 0.0));
        assert!((p.x - (1.0 + 0.5f32.cos())).abs() < 1e-6);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert!(wrap_angle(-std::f64::consts::PI) > 0.0);
        assert_relative_eq!(wrap_angle(0.1), 0.1);
    }
}
