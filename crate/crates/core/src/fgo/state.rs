use crate::frames::RigidTransform;
use crate::imu::{Vector15, BA, BG, P, TH, V};
use crate::so3;
use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Per-keyframe navigation state in ENU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub id: usize,
    pub t: f64,
    pub p: Vector3<f64>,
    /// Body to ENU.
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
}

impl NavState {
    pub fn at_rest(id: usize, t: f64, pose: &RigidTransform) -> Self {
        Self {
            id,
            t,
            p: pose.translation,
            q: pose.rotation,
            v: Vector3::zeros(),
            ba: Vector3::zeros(),
            bg: Vector3::zeros(),
        }
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.q, self.p)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// `x ⊞ δ`: additive on vectors, right-multiplicative on the rotation.
    pub fn retract(&self, d: &Vector15) -> NavState {
        let mut q = self.q * so3::exp(&d.fixed_rows::<3>(TH).into_owned());
        q.renormalize();
        NavState {
            id: self.id,
            t: self.t,
            p: self.p + d.fixed_rows::<3>(P),
            q,
            v: self.v + d.fixed_rows::<3>(V),
            ba: self.ba + d.fixed_rows::<3>(BA),
            bg: self.bg + d.fixed_rows::<3>(BG),
        }
    }

    /// `other ⊟ self`, the tangent vector carrying `self` to `other`.
    pub fn local(&self, other: &NavState) -> Vector15 {
        let mut d = Vector15::zeros();
        d.fixed_rows_mut::<3>(P).copy_from(&(other.p - self.p));
        d.fixed_rows_mut::<3>(TH).copy_from(&so3::log(&(self.q.inverse() * other.q)));
        d.fixed_rows_mut::<3>(V).copy_from(&(other.v - self.v));
        d.fixed_rows_mut::<3>(BA).copy_from(&(other.ba - self.ba));
        d.fixed_rows_mut::<3>(BG).copy_from(&(other.bg - self.bg));
        d
    }

    /// Derivative of `self.local(other)` with respect to a right perturbation of `other`.
    pub fn local_jacobian(&self, other: &NavState) -> DMatrix<f64> {
        let mut j = DMatrix::identity(15, 15);
        let th = so3::log(&(self.q.inverse() * other.q));
        j.fixed_view_mut::<3, 3>(TH, TH).copy_from(&so3::right_jacobian_inverse(&th));
        j
    }
}
