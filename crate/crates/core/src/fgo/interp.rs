use super::graph::FgoError;
use super::state::NavState;
use crate::frames::{EcefPoint, GeodeticOrigin};
use crate::imu::{P, TH, V};
use crate::so3;
use nalgebra::{Matrix3, SMatrix, Vector3};

/// Weight of the earlier keyframe at time `t`: `(t₁ − t)/(t₁ − t₀)`.
pub fn interpolation_weight(t0: f64, t1: f64, t: f64) -> Result<f64, FgoError> {
    // epochs may sit a hair outside the interval after float time arithmetic
    const SLACK: f64 = 1e-9;
    if !(t1 > t0) || t < t0 - SLACK || t > t1 + SLACK {
        return Err(FgoError::OutOfInterval { t, t0, t1 });
    }
    Ok(((t1 - t) / (t1 - t0)).clamp(0.0, 1.0))
}

/// Linearly interpolated body position and velocity between two keyframes.
pub fn interpolate_state(xk: &NavState, xk1: &NavState, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), FgoError> {
    let a = interpolation_weight(xk.t, xk1.t, t)?;
    Ok((a * xk.p + (1.0 - a) * xk1.p, a * xk.v + (1.0 - a) * xk1.v))
}

pub type Jac3x15 = SMatrix<f64, 3, 15>;

/// Where a GNSS epoch sits between two keyframes, and the antenna geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLink {
    pub k0: usize,
    pub k1: usize,
    /// Weight of keyframe `k0`.
    pub alpha: f64,
    /// Antenna offset in the body frame.
    pub lever_arm: Vector3<f64>,
    pub origin: GeodeticOrigin,
    pub base_pos: EcefPoint,
}

/// Antenna position and velocity in ECEF with their Jacobians w.r.t. both keyframe tangents.
#[derive(Debug, Clone)]
pub struct ReceiverKinematics {
    pub p_ec: EcefPoint,
    /// Antenna minus base position in ECEF, formed without going through absolute coordinates.
    pub baseline: Vector3<f64>,
    pub v_ec: Vector3<f64>,
    pub dp_dx0: Jac3x15,
    pub dp_dx1: Jac3x15,
    pub dv_dx0: Jac3x15,
    pub dv_dx1: Jac3x15,
}

impl EpochLink {
    pub fn receiver_enu(&self, x0: &NavState, x1: &NavState) -> Vector3<f64> {
        let near = if self.alpha >= 0.5 { x0 } else { x1 };
        self.alpha * x0.p + (1.0 - self.alpha) * x1.p + near.q * self.lever_arm
    }

    pub fn baseline(&self, x0: &NavState, x1: &NavState) -> Vector3<f64> {
        (self.origin.enu_to_ecef(&Vector3::zeros()) - self.base_pos)
            + self.origin.enu_to_ecef_rotation() * self.receiver_enu(x0, x1)
    }

    pub fn kinematics(&self, x0: &NavState, x1: &NavState) -> ReceiverKinematics {
        let r_ec = self.origin.enu_to_ecef_rotation();
        let p_enu = self.receiver_enu(x0, x1);
        let v_enu = self.alpha * x0.v + (1.0 - self.alpha) * x1.v;
        let mut dp0 = Jac3x15::zeros();
        let mut dp1 = Jac3x15::zeros();
        let mut dv0 = Jac3x15::zeros();
        let mut dv1 = Jac3x15::zeros();
        dp0.fixed_view_mut::<3, 3>(0, P).copy_from(&(r_ec * self.alpha));
        dp1.fixed_view_mut::<3, 3>(0, P).copy_from(&(r_ec * (1.0 - self.alpha)));
        let near_first = self.alpha >= 0.5;
        let near = if near_first { x0 } else { x1 };
        let d_th: Matrix3<f64> = -r_ec * near.rotation() * so3::skew(&self.lever_arm);
        if near_first {
            dp0.fixed_view_mut::<3, 3>(0, TH).copy_from(&d_th);
        } else {
            dp1.fixed_view_mut::<3, 3>(0, TH).copy_from(&d_th);
        }
        dv0.fixed_view_mut::<3, 3>(0, V).copy_from(&(r_ec * self.alpha));
        dv1.fixed_view_mut::<3, 3>(0, V).copy_from(&(r_ec * (1.0 - self.alpha)));
        ReceiverKinematics {
            p_ec: self.origin.enu_to_ecef(&p_enu),
            baseline: self.baseline(x0, x1),
            v_ec: r_ec * v_enu,
            dp_dx0: dp0,
            dp_dx1: dp1,
            dv_dx0: dv0,
            dv_dx1: dv1,
        }
    }
}
