//! SO(3) helpers: hat operator, exponential/logarithm and their right Jacobians.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*phi)
}

pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

/// Right Jacobian `Jr(φ)`: `Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * k * k
}

pub fn right_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity()
        + 0.5 * k
        + (1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())) * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn right_jacobian_first_order() {
        let phi = Vector3::new(0.3, -0.5, 0.8);
        let d = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = exp(&(phi + d));
        let rhs = exp(&phi) * exp(&(right_jacobian(&phi) * d));
        assert!(lhs.angle_to(&rhs) < 1e-11);
    }

    #[test]
    fn inverse_is_inverse() {
        for phi in [Vector3::new(0.3, -0.5, 0.8), Vector3::new(1e-7, 0.0, 2e-7)] {
            let p = right_jacobian(&phi) * right_jacobian_inverse(&phi);
            assert_relative_eq!(p, Matrix3::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn log_exp_round_trip() {
        let phi = Vector3::new(-1.0, 0.4, 2.0);
        assert_relative_eq!(log(&exp(&phi)), phi, epsilon = 1e-12);
    }
}
