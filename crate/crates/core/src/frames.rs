//! Coordinate frames: WGS-84 ECEF, local East-North-Up tangent frame, and
//! rigid body transforms between sensor frames.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point in the local ENU frame (m).
pub type EnuPoint = Vector3<f64>;
/// A point in the ECEF frame (m).
pub type EcefPoint = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("points coincide (separation {0:.3e} m)")]
    CoincidentPoints(f64),
    #[error("invalid geodetic origin: {0}")]
    InvalidOrigin(String),
}

/// Anchor of the local ENU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticOrigin {
    pub latitude_rad: f64,
    pub longitude_rad: f64,
    pub origin_ecef: EcefPoint,
}

impl GeodeticOrigin {
    /// Builds the origin from geodetic coordinates, computing its WGS-84 ECEF image.
    pub fn from_geodetic(
        latitude_rad: f64,
        longitude_rad: f64,
        height_m: f64,
    ) -> Result<Self, FrameError> {
        if !(latitude_rad.abs() <= FRAC_PI_2) || !(longitude_rad.abs() <= PI) || !height_m.is_finite()
        {
            return Err(FrameError::InvalidOrigin(format!(
                "lat {latitude_rad} rad, lon {longitude_rad} rad, h {height_m} m"
            )));
        }
        Ok(Self {
            latitude_rad,
            longitude_rad,
            origin_ecef: geodetic_to_ecef(latitude_rad, longitude_rad, height_m),
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height_m: f64) -> Result<Self, FrameError> {
        Self::from_geodetic(lat_deg.to_radians(), lon_deg.to_radians(), height_m)
    }

    /// Rotation taking ENU components to ECEF components.
    pub fn enu_to_ecef_rotation(&self) -> Matrix3<f64> {
        let (sp, cp) = self.latitude_rad.sin_cos();
        let (sl, cl) = self.longitude_rad.sin_cos();
        Matrix3::new(
            -sl, -sp * cl, cp * cl, //
            cl, -sp * sl, cp * sl, //
            0.0, cp, sp,
        )
    }

    pub fn enu_to_ecef(&self, p_enu: &EnuPoint) -> EcefPoint {
        enu_to_ecef(p_enu, self)
    }

    pub fn ecef_to_enu(&self, p_ec: &EcefPoint) -> EnuPoint {
        ecef_to_enu(p_ec, self)
    }
}

pub fn geodetic_to_ecef(lat: f64, lon: f64, h: f64) -> EcefPoint {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let (sp, cp) = lat.sin_cos();
    let (sl, cl) = lon.sin_cos();
    let n = WGS84_A / (1.0 - e2 * sp * sp).sqrt();
    Vector3::new((n + h) * cp * cl, (n + h) * cp * sl, (n * (1.0 - e2) + h) * sp)
}

pub fn enu_to_ecef(p_enu: &EnuPoint, origin: &GeodeticOrigin) -> EcefPoint {
    origin.enu_to_ecef_rotation() * p_enu + origin.origin_ecef
}

pub fn ecef_to_enu(p_ec: &EcefPoint, origin: &GeodeticOrigin) -> EnuPoint {
    origin.enu_to_ecef_rotation().transpose() * (p_ec - origin.origin_ecef)
}

const MIN_SEPARATION: f64 = 1e-6;

/// Unit vector pointing from the receiver to the satellite.
pub fn los_unit_vector(
    p_receiver_ec: &EcefPoint,
    p_sat_ec: &EcefPoint,
) -> Result<Vector3<f64>, FrameError> {
    let d = p_sat_ec - p_receiver_ec;
    let n = d.norm();
    if n < MIN_SEPARATION {
        return Err(FrameError::CoincidentPoints(n));
    }
    Ok(d / n)
}

/// Elevation and azimuth (clockwise from north, in `[0, 2π)`) of `p_sat_enu` seen from
/// `p_receiver_enu`.
pub fn elevation_azimuth(
    p_receiver_enu: &EnuPoint,
    p_sat_enu: &EnuPoint,
) -> Result<(f64, f64), FrameError> {
    let u = los_unit_vector(p_receiver_enu, p_sat_enu)?;
    Ok(direction_elevation_azimuth(&u))
}

/// Elevation/azimuth of an ENU unit direction.
pub fn direction_elevation_azimuth(u: &Vector3<f64>) -> (f64, f64) {
    let el = u.z.clamp(-1.0, 1.0).asin();
    let mut az = u.x.atan2(u.y);
    if az < 0.0 {
        az += TAU;
    }
    if az >= TAU {
        az -= TAU;
    }
    (el, az)
}

/// ENU unit direction for an elevation/azimuth pair.
pub fn direction_from_elevation_azimuth(el: f64, az: f64) -> Vector3<f64> {
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    Vector3::new(ce * sa, ce * ca, se)
}

/// Rigid transform `x ↦ R x + t`, e.g. LiDAR→body or body→ENU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform::new(r_inv, -(r_inv * self.translation))
    }

    pub fn is_normalized(&self) -> bool {
        (self.rotation.quaternion().norm() - 1.0).abs() <= 1e-9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn equator() -> GeodeticOrigin {
        GeodeticOrigin::from_geodetic(0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn equator_origin_has_expected_ecef() {
        let o = equator();
        assert_relative_eq!(o.origin_ecef, Vector3::new(WGS84_A, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn enu_to_ecef_at_equator() {
        let o = equator();
        assert_relative_eq!(
            enu_to_ecef(&Vector3::zeros(), &o),
            Vector3::new(6378137.0, 0.0, 0.0),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            enu_to_ecef(&Vector3::new(0.0, 0.0, 100.0), &o),
            Vector3::new(6378237.0, 0.0, 0.0),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            enu_to_ecef(&Vector3::new(100.0, 0.0, 0.0), &o),
            Vector3::new(6378137.0, 100.0, 0.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn ecef_to_enu_at_equator() {
        let o = equator();
        assert_relative_eq!(
            ecef_to_enu(&Vector3::new(6378237.0, 0.0, 0.0), &o),
            Vector3::new(0.0, 0.0, 100.0),
            epsilon = 1e-9
        );
        assert_relative_eq!(ecef_to_enu(&o.origin_ecef, &o), Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn origin_rejects_out_of_range() {
        assert!(GeodeticOrigin::from_geodetic(2.0, 0.0, 0.0).is_err());
        assert!(GeodeticOrigin::from_geodetic(0.0, 3.5, 0.0).is_err());
        assert!(GeodeticOrigin::from_geodetic(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn los_examples() {
        let u = los_unit_vector(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.02e7)).unwrap();
        assert_relative_eq!(u, Vector3::z(), epsilon = 1e-15);
        let u = los_unit_vector(&Vector3::new(1e7, 0.0, 0.0), &Vector3::new(2e7, 0.0, 0.0)).unwrap();
        assert_relative_eq!(u, Vector3::x(), epsilon = 1e-15);
        assert!(matches!(
            los_unit_vector(&Vector3::new(1.0, 2.0, 3.0), &Vector3::new(1.0, 2.0, 3.0 + 1e-7)),
            Err(FrameError::CoincidentPoints(_))
        ));
    }

    #[test]
    fn elevation_azimuth_examples() {
        let (el, _) = elevation_azimuth(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_relative_eq!(el, FRAC_PI_2, epsilon = 1e-12);
        let (el, az) = elevation_azimuth(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(el, 0.0, epsilon = 1e-12);
        assert_relative_eq!(az, FRAC_PI_2, epsilon = 1e-12);
        let (el, az) = elevation_azimuth(&Vector3::zeros(), &Vector3::new(0.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(el, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(az, 0.0, epsilon = 1e-12);
        let (_, az) = elevation_azimuth(&Vector3::zeros(), &Vector3::new(-1.0, -1e-3, 0.2)).unwrap();
        assert!(az > PI && az < TAU);
    }

    #[test]
    fn rigid_transform_inverse_composes_to_identity() {
        let t = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
            Vector3::new(1.0, -2.0, 3.0),
        );
        let p = Vector3::new(0.3, 0.4, -5.0);
        assert_relative_eq!(t.inverse().transform_point(&t.transform_point(&p)), p, epsilon = 1e-12);
        assert!(t.compose(&t.inverse()).translation.norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(lat in -FRAC_PI_2..FRAC_PI_2, lon in -PI..PI) {
            let o = GeodeticOrigin::from_geodetic(lat, lon, 0.0).unwrap();
            let r = o.enu_to_ecef_rotation();
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn enu_ecef_round_trip(
            lat in -1.5f64..1.5, lon in -3.1f64..3.1, h in -100.0f64..3000.0,
            e in -1e5f64..1e5, n in -1e5f64..1e5, u in -1e3f64..1e3,
        ) {
            let o = GeodeticOrigin::from_geodetic(lat, lon, h).unwrap();
            let p = Vector3::new(e, n, u);
            let back = ecef_to_enu(&enu_to_ecef(&p, &o), &o);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn los_has_unit_norm(
            a in prop::array::uniform3(-3e7f64..3e7), b in prop::array::uniform3(-3e7f64..3e7),
        ) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            prop_assume!((a - b).norm() > 1.0);
            let u = los_unit_vector(&a, &b).unwrap();
            prop_assert!((u.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn elevation_azimuth_scale_invariant(
            d in prop::array::uniform3(-100.0f64..100.0), s in 0.01f64..1e4,
        ) {
            let d = Vector3::from(d);
            prop_assume!(d.norm() > 1e-2);
            let a = elevation_azimuth(&Vector3::zeros(), &d).unwrap();
            let b = elevation_azimuth(&Vector3::zeros(), &(d * s)).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-9);
            let daz = (a.1 - b.1).abs();
            prop_assert!(daz < 1e-9 || (TAU - daz) < 1e-9);
        }
    }
}
