//! GNSS observations, stochastic model, double differencing and the
//! pseudorange / carrier-phase / Doppler residuals.

mod io;

pub use io::{read_epoch_file, write_epoch_file, EpochRecord, ReceiverId};

use crate::frames::{self, EcefPoint, GeodeticOrigin, SPEED_OF_LIGHT};
use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnssError {
    #[error("{0}: fewer than two matched satellites")]
    InsufficientSatellites(Constellation),
    #[error("invalid elevation {0} rad")]
    InvalidElevation(f64),
    #[error(transparent)]
    Frame(#[from] frames::FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constellation {
    #[serde(rename = "GPS")]
    Gps,
    #[serde(rename = "BDS")]
    BeiDou,
}

impl Constellation {
    pub fn code(&self) -> char {
        match self {
            Constellation::Gps => 'G',
            Constellation::BeiDou => 'C',
        }
    }

    /// Single-frequency carrier wavelength (GPS L1, BeiDou B1I).
    pub fn wavelength(&self) -> f64 {
        match self {
            Constellation::Gps => SPEED_OF_LIGHT / 1_575.42e6,
            Constellation::BeiDou => SPEED_OF_LIGHT / 1_561.098e6,
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constellation::Gps => "GPS",
            Constellation::BeiDou => "BDS",
        })
    }
}

impl std::str::FromStr for Constellation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GPS" | "G" => Ok(Constellation::Gps),
            "BDS" | "C" | "BeiDou" => Ok(Constellation::BeiDou),
            other => Err(format!("unknown constellation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatId {
    pub constellation: Constellation,
    pub prn: u16,
}

impl SatId {
    pub fn new(constellation: Constellation, prn: u16) -> Self {
        Self { constellation, prn }
    }
    pub fn gps(prn: u16) -> Self {
        Self::new(Constellation::Gps, prn)
    }
    pub fn beidou(prn: u16) -> Self {
        Self::new(Constellation::BeiDou, prn)
    }
}

impl fmt::Display for SatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.constellation.code(), self.prn)
    }
}

/// One satellite's raw measurements at one receiver and epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatObs {
    pub sat: SatId,
    pub time: f64,
    /// Pseudorange (m).
    pub pseudorange: f64,
    /// Carrier phase (cycles).
    pub carrier: f64,
    /// Doppler (Hz).
    pub doppler: f64,
    pub snr: f64,
    pub wavelength: f64,
    pub sat_pos: EcefPoint,
    pub sat_vel: Vector3<f64>,
    pub sat_clock_bias: f64,
    pub sat_clock_drift: f64,
    /// Receiver loss-of-lock indicator for the carrier.
    pub lock_lost: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochObs {
    pub time: f64,
    pub rover: Vec<SatObs>,
    pub base: Vec<SatObs>,
    pub base_pos: EcefPoint,
}

impl EpochObs {
    /// Rover/base pairs observed at both receivers, ordered by satellite.
    pub fn matched(&self) -> Vec<(&SatObs, &SatObs)> {
        let base: BTreeMap<SatId, &SatObs> = self.base.iter().map(|o| (o.sat, o)).collect();
        let mut out: Vec<_> = self
            .rover
            .iter()
            .filter_map(|r| base.get(&r.sat).map(|b| (r, *b)))
            .collect();
        out.sort_by_key(|(r, _)| r.sat);
        out
    }

    pub fn rover_obs(&self, sat: SatId) -> Option<&SatObs> {
        self.rover.iter().find(|o| o.sat == sat)
    }
}

/// Elevation/SNR dependent pseudorange noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Zenith, reference-SNR pseudorange sigma (m).
    pub sigma_base: f64,
    /// Reference SNR (dB-Hz).
    pub snr_reference: f64,
    /// Exponent applied to `1/sin(el)`.
    pub elevation_exponent: f64,
    /// Upper clip as a multiple of `sigma_base`.
    pub max_factor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_base: 0.3,
            snr_reference: 50.0,
            elevation_exponent: 1.0,
            max_factor: 100.0,
        }
    }
}

/// Carrier sigma as a fraction of the pseudorange sigma.
pub const CARRIER_SIGMA_RATIO: f64 = 100.0;

/// Pseudorange sigma (m) for one undifferenced measurement.
pub fn measurement_sigma(elevation_rad: f64, snr_dbhz: f64, model: &NoiseModel) -> Result<f64, GnssError> {
    if !(elevation_rad > 0.0) {
        return Err(GnssError::InvalidElevation(elevation_rad));
    }
    let el = elevation_rad.min(std::f64::consts::FRAC_PI_2);
    let elev_factor = (1.0 / el.sin()).powf(model.elevation_exponent);
    let snr_factor = 10f64.powf((model.snr_reference - snr_dbhz) / 20.0);
    let sigma = model.sigma_base * elev_factor * snr_factor;
    Ok(sigma.clamp(model.sigma_base, model.max_factor * model.sigma_base))
}

/// Elevation of a satellite as seen from an ECEF position, in the origin's ENU frame.
pub fn satellite_elevation(
    receiver_ec: &EcefPoint,
    sat_ec: &EcefPoint,
    origin: &GeodeticOrigin,
) -> Result<f64, GnssError> {
    let r = origin.enu_to_ecef_rotation().transpose();
    let u = frames::los_unit_vector(receiver_ec, sat_ec)?;
    Ok(frames::direction_elevation_azimuth(&(r * u)).0)
}

/// Highest-elevation satellite; ties go to the lower PRN.
pub fn select_master(candidates: &[(SatId, f64)]) -> Result<SatId, GnssError> {
    let constellation = candidates
        .first()
        .map(|c| c.0.constellation)
        .unwrap_or(Constellation::Gps);
    if candidates.len() < 2 {
        return Err(GnssError::InsufficientSatellites(constellation));
    }
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if c.1 > best.1 || (c.1 == best.1 && c.0.prn < best.0.prn) {
            best = c;
        }
    }
    Ok(best.0)
}

/// One master per constellation having at least two matched satellites.
pub fn select_masters(
    epoch: &EpochObs,
    receiver_ec: &EcefPoint,
    origin: &GeodeticOrigin,
) -> BTreeMap<Constellation, SatId> {
    let mut per: BTreeMap<Constellation, Vec<(SatId, f64)>> = BTreeMap::new();
    for (r, _) in epoch.matched() {
        if let Ok(el) = satellite_elevation(receiver_ec, &r.sat_pos, origin) {
            per.entry(r.sat.constellation).or_default().push((r.sat, el));
        }
    }
    per.into_iter()
        .filter_map(|(c, cands)| select_master(&cands).ok().map(|m| (c, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdObservation {
    pub sat: SatId,
    pub master: SatId,
    /// Double-differenced pseudorange (m).
    pub pseudorange: f64,
    /// Double-differenced carrier phase (cycles).
    pub carrier: f64,
    pub wavelength: f64,
    pub sigma_rho: f64,
    pub sigma_psi: f64,
    pub sat_pos: EcefPoint,
    pub master_pos: EcefPoint,
    /// Loss of lock reported on any of the four phases.
    pub lock_lost: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DdSet {
    pub observations: Vec<DdObservation>,
    /// Rover or base satellites without a partner at the other receiver.
    pub unmatched: usize,
}

/// Forms between-receiver, between-satellite differences against each constellation's master.
pub fn form_double_differences(
    epoch: &EpochObs,
    masters: &BTreeMap<Constellation, SatId>,
    origin: &GeodeticOrigin,
    noise: &NoiseModel,
) -> DdSet {
    let matched = epoch.matched();
    let unmatched = epoch.rover.len() + epoch.base.len() - 2 * matched.len();
    let sigma = |o: &SatObs| -> f64 {
        let el = satellite_elevation(&epoch.base_pos, &o.sat_pos, origin).unwrap_or(0.0);
        measurement_sigma(el.max(1e-3), o.snr, noise).unwrap_or(noise.sigma_base * noise.max_factor)
    };
    let mut observations = Vec::new();
    for (&constellation, &master) in masters {
        let Some(&(mr, mb)) = matched.iter().find(|(r, _)| r.sat == master) else {
            continue;
        };
        let var_master = sigma(mr).powi(2) + sigma(mb).powi(2);
        for &(r, b) in matched.iter().filter(|(r, _)| r.sat.constellation == constellation) {
            if r.sat == master {
                continue;
            }
            let sigma_rho = (var_master + sigma(r).powi(2) + sigma(b).powi(2)).sqrt();
            observations.push(DdObservation {
                sat: r.sat,
                master,
                pseudorange: (r.pseudorange - b.pseudorange) - (mr.pseudorange - mb.pseudorange),
                carrier: (r.carrier - b.carrier) - (mr.carrier - mb.carrier),
                wavelength: r.wavelength,
                sigma_rho,
                sigma_psi: sigma_rho / CARRIER_SIGMA_RATIO,
                sat_pos: r.sat_pos,
                master_pos: mr.sat_pos,
                lock_lost: r.lock_lost || b.lock_lost || mr.lock_lost || mb.lock_lost,
            });
        }
    }
    DdSet {
        observations,
        unmatched,
    }
}

/// Geometric double difference `(r_r^s − r_e^s) − (r_r^w − r_e^w)`.
pub fn geometric_dd(dd: &DdObservation, p_r: &EcefPoint, p_e: &EcefPoint) -> f64 {
    geometric_dd_baseline(dd, p_e, &(p_r - p_e))
}

/// Geometric double difference from the rover-base baseline `p_r − p_e`.
///
/// Each single difference is formed as `(|b|² − 2 b·(s − p_e)) / (r_r + r_e)` so
/// no two 20,000 km ranges are subtracted.
pub fn geometric_dd_baseline(dd: &DdObservation, p_e: &EcefPoint, baseline: &Vector3<f64>) -> f64 {
    let sd = |sat: &EcefPoint| {
        let to_base = sat - p_e;
        let to_rover = to_base - baseline;
        (baseline.norm_squared() - 2.0 * baseline.dot(&to_base)) / (to_rover.norm() + to_base.norm())
    };
    sd(&dd.sat_pos) - sd(&dd.master_pos)
}

/// Gradient of the geometric double difference with respect to the rover position.
pub fn geometric_dd_gradient(dd: &DdObservation, p_r: &EcefPoint) -> RowVector3<f64> {
    let us = (p_r - dd.sat_pos).normalize();
    let uw = (p_r - dd.master_pos).normalize();
    (us - uw).transpose()
}

pub fn dd_pseudorange_residual(dd: &DdObservation, p_r: &EcefPoint, p_e: &EcefPoint) -> f64 {
    dd.pseudorange - geometric_dd(dd, p_r, p_e)
}

/// Carrier residual in metres; the ambiguity is in cycles and enters scaled by the wavelength.
pub fn dd_carrierphase_residual(
    dd: &DdObservation,
    p_r: &EcefPoint,
    p_e: &EcefPoint,
    ambiguity_cycles: f64,
) -> f64 {
    dd.wavelength * dd.carrier - geometric_dd(dd, p_r, p_e) - dd.wavelength * ambiguity_cycles
}

/// Doppler predicted from receiver/satellite motion and clock drifts (Hz).
pub fn predicted_doppler(
    obs: &SatObs,
    p_r: &EcefPoint,
    v_r: &Vector3<f64>,
    receiver_clock_drift: f64,
) -> Result<f64, GnssError> {
    let e = frames::los_unit_vector(p_r, &obs.sat_pos)?;
    Ok((e.dot(&(obs.sat_vel - v_r)) + SPEED_OF_LIGHT * (receiver_clock_drift - obs.sat_clock_drift))
        / obs.wavelength)
}

pub fn doppler_residual(
    obs: &SatObs,
    p_r: &EcefPoint,
    v_r: &Vector3<f64>,
    receiver_clock_drift: f64,
) -> Result<f64, GnssError> {
    Ok(obs.doppler - predicted_doppler(obs, p_r, v_r, receiver_clock_drift)?)
}

/// Doppler residual Jacobians with respect to (receiver position, receiver velocity, clock drift).
pub fn doppler_residual_jacobians(
    obs: &SatObs,
    p_r: &EcefPoint,
    v_r: &Vector3<f64>,
) -> (RowVector3<f64>, RowVector3<f64>, f64) {
    let d = obs.sat_pos - p_r;
    let range = d.norm();
    let e = d / range;
    let proj = Matrix3::identity() - e * e.transpose();
    // ∂e/∂p_r = −(I − e eᵀ)/range
    let d_pos = (obs.sat_vel - v_r).transpose() * proj / (range * obs.wavelength);
    let d_vel = e.transpose() / obs.wavelength;
    (d_pos, d_vel, -SPEED_OF_LIGHT / obs.wavelength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn obs(sat: SatId, rho: f64, psi: f64, pos: Vector3<f64>) -> SatObs {
        SatObs {
            sat,
            time: 0.0,
            pseudorange: rho,
            carrier: psi,
            doppler: 0.0,
            snr: 45.0,
            wavelength: sat.constellation.wavelength(),
            sat_pos: pos,
            sat_vel: Vector3::zeros(),
            sat_clock_bias: 0.0,
            sat_clock_drift: 0.0,
            lock_lost: false,
        }
    }

    fn origin() -> GeodeticOrigin {
        GeodeticOrigin::from_degrees(22.3, 114.17, 0.0).unwrap()
    }

    /// Satellites at the given (el, az) in degrees, 2.02e7 m from the origin.
    fn sats_at(angles: &[(u16, f64, f64)]) -> Vec<(SatId, Vector3<f64>)> {
        let o = origin();
        angles
            .iter()
            .map(|&(prn, el, az)| {
                let d = frames::direction_from_elevation_azimuth(el.to_radians(), az.to_radians());
                (SatId::gps(prn), o.enu_to_ecef(&(d * 2.02e7)))
            })
            .collect()
    }

    /// Noise-free epoch generated from geometry, with arbitrary clocks and integer phases.
    fn truth_epoch(p_r: &Vector3<f64>, p_e: &Vector3<f64>) -> (EpochObs, BTreeMap<SatId, (f64, f64)>) {
        let sats = sats_at(&[(5, 80.0, 10.0), (12, 30.0, 120.0), (17, 45.0, 250.0), (21, 60.0, 300.0)]);
        let mut ep = EpochObs {
            base_pos: *p_e,
            ..Default::default()
        };
        let mut ints = BTreeMap::new();
        for (k, (sat, pos)) in sats.into_iter().enumerate() {
            let lam = sat.constellation.wavelength();
            let (nr, ne) = (1000.0 + 7.0 * k as f64, -300.0 + 3.0 * k as f64);
            ints.insert(sat, (nr, ne));
            let rr = (p_r - pos).norm();
            let re = (p_e - pos).norm();
            ep.rover.push(obs(sat, rr + 1234.5, rr / lam + nr + 0.25, pos));
            ep.base.push(obs(sat, re - 77.0, re / lam + ne - 0.4, pos));
        }
        (ep, ints)
    }

    #[test]
    fn master_selection() {
        let m = select_master(&[(SatId::gps(5), 80f64.to_radians()), (SatId::gps(12), 30f64.to_radians())]);
        assert_eq!(m.unwrap(), SatId::gps(5));
        assert!(matches!(
            select_master(&[(SatId::gps(5), 1.0)]),
            Err(GnssError::InsufficientSatellites(Constellation::Gps))
        ));
        let el = 60f64.to_radians();
        assert_eq!(select_master(&[(SatId::gps(9), el), (SatId::gps(7), el)]).unwrap(), SatId::gps(7));
    }

    #[test]
    fn select_masters_per_constellation() {
        let o = origin();
        let (mut ep, _) = truth_epoch(&o.origin_ecef, &o.enu_to_ecef(&Vector3::new(500.0, 300.0, 0.0)));
        let lone = obs(SatId::beidou(3), 2e7, 0.0, o.enu_to_ecef(&Vector3::new(0.0, 0.0, 2e7)));
        ep.rover.push(lone.clone());
        ep.base.push(lone);
        let m = select_masters(&ep, &o.origin_ecef, &o);
        assert_eq!(m.len(), 1);
        assert_eq!(m[&Constellation::Gps], SatId::gps(5));
    }

    #[test]
    fn dd_arithmetic() {
        let z = Vector3::zeros();
        let ep = EpochObs {
            time: 0.0,
            rover: vec![obs(SatId::gps(1), 10.0, 0.0, z), obs(SatId::gps(2), 20.0, 0.0, z)],
            base: vec![obs(SatId::gps(1), 7.0, 0.0, z), obs(SatId::gps(2), 19.0, 0.0, z)],
            base_pos: Vector3::new(1.0, 0.0, 0.0),
        };
        let masters = BTreeMap::from([(Constellation::Gps, SatId::gps(2))]);
        let set = form_double_differences(&ep, &masters, &origin(), &NoiseModel::default());
        assert_eq!(set.observations.len(), 1);
        assert_relative_eq!(set.observations[0].pseudorange, 2.0);
    }

    #[test]
    fn identical_receivers_give_zero_dd() {
        let o = origin();
        let (mut ep, _) = truth_epoch(&o.origin_ecef, &o.origin_ecef);
        ep.base = ep.rover.clone();
        let masters = select_masters(&ep, &o.origin_ecef, &o);
        let set = form_double_differences(&ep, &masters, &o, &NoiseModel::default());
        assert_eq!(set.observations.len(), 3);
        for dd in &set.observations {
            assert_eq!(dd.pseudorange, 0.0);
            assert_eq!(dd.carrier, 0.0);
            assert!((dd.sigma_psi - dd.sigma_rho / 100.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unmatched_satellites_are_counted() {
        let o = origin();
        let (mut ep, _) = truth_epoch(&o.origin_ecef, &o.origin_ecef);
        ep.base.pop();
        let masters = select_masters(&ep, &o.origin_ecef, &o);
        let set = form_double_differences(&ep, &masters, &o, &NoiseModel::default());
        assert_eq!(set.unmatched, 1);
        assert_eq!(set.observations.len(), 2);
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let o = origin();
        let p_r = o.enu_to_ecef(&Vector3::new(12.0, -40.0, 3.0));
        let p_e = o.enu_to_ecef(&Vector3::new(800.0, 600.0, 10.0));
        let (ep, ints) = truth_epoch(&p_r, &p_e);
        let masters = select_masters(&ep, &p_r, &o);
        let set = form_double_differences(&ep, &masters, &o, &NoiseModel::default());
        for dd in &set.observations {
            let (ns, ne) = ints[&dd.sat];
            let (nw, nwe) = ints[&dd.master];
            let n_dd = (ns - ne) - (nw - nwe);
            assert!(dd_pseudorange_residual(dd, &p_r, &p_e).abs() < 1e-6);
            assert!(dd_carrierphase_residual(dd, &p_r, &p_e, n_dd).abs() < 1e-6);
        }
    }

    #[test]
    fn pseudorange_residual_offset_and_perturbation() {
        let o = origin();
        let p_e = o.enu_to_ecef(&Vector3::new(800.0, 600.0, 10.0));
        let p_r = o.origin_ecef;
        // slave due east on the horizon-ish, master at zenith: orthogonal LOS directions
        let rot = o.enu_to_ecef_rotation();
        let sat_pos = p_r + rot * Vector3::new(2.02e7, 0.0, 0.0);
        let master_pos = p_r + rot * Vector3::new(0.0, 0.0, 2.02e7);
        let mut dd = DdObservation {
            sat: SatId::gps(3),
            master: SatId::gps(1),
            pseudorange: 0.0,
            carrier: 0.0,
            wavelength: 0.19,
            sigma_rho: 1.0,
            sigma_psi: 0.01,
            sat_pos,
            master_pos,
            lock_lost: false,
        };
        dd.pseudorange = geometric_dd(&dd, &p_r, &p_e) + 5.0;
        assert_relative_eq!(dd_pseudorange_residual(&dd, &p_r, &p_e), 5.0, epsilon = 1e-7);
        dd.pseudorange -= 5.0;
        // move the rover 1 m away from the slave satellite along its line of sight
        let e_s = frames::los_unit_vector(&p_r, &sat_pos).unwrap();
        let moved = p_r - e_s;
        assert_relative_eq!(dd_pseudorange_residual(&dd, &moved, &p_e), -1.0, epsilon = 1e-6);
    }

    #[test]
    fn carrier_residual_shifts_by_wavelength() {
        let o = origin();
        let (ep, _) = truth_epoch(&o.origin_ecef, &o.enu_to_ecef(&Vector3::new(100.0, 0.0, 0.0)));
        let masters = select_masters(&ep, &o.origin_ecef, &o);
        let dd = &form_double_differences(&ep, &masters, &o, &NoiseModel::default()).observations[0];
        let r0 = dd_carrierphase_residual(dd, &o.origin_ecef, &ep.base_pos, 3.0);
        let r1 = dd_carrierphase_residual(dd, &o.origin_ecef, &ep.base_pos, 4.0);
        assert_relative_eq!(r1 - r0, -dd.wavelength, epsilon = 1e-6);

        let zero = DdObservation {
            carrier: 0.0,
            sat_pos: Vector3::new(1.0, 0.0, 0.0),
            master_pos: Vector3::new(1.0, 0.0, 0.0),
            ..dd.clone()
        };
        let p = Vector3::new(0.0, 0.0, 0.0);
        assert_eq!(dd_carrierphase_residual(&zero, &p, &p, 0.0), 0.0);
    }

    #[test]
    fn doppler_examples() {
        let lam = 0.19029;
        let mut o = obs(SatId::gps(1), 2e7, 0.0, Vector3::new(0.0, 0.0, 2e7));
        o.wavelength = lam;
        let p = Vector3::zeros();
        assert_eq!(doppler_residual(&o, &p, &Vector3::zeros(), 0.0).unwrap(), 0.0);
        o.sat_vel = Vector3::new(0.0, 0.0, 100.0);
        let pred = predicted_doppler(&o, &p, &Vector3::zeros(), 0.0).unwrap();
        assert!((pred - 525.5).abs() < 0.1, "{pred}");
        o.sat_vel = Vector3::zeros();
        let drift = predicted_doppler(&o, &p, &Vector3::zeros(), 1e-9).unwrap();
        assert!((drift - 1.575).abs() < 1e-3, "{drift}");
    }

    #[test]
    fn sigma_examples() {
        let m = NoiseModel {
            sigma_base: 0.5,
            ..Default::default()
        };
        assert_relative_eq!(measurement_sigma(FRAC_PI_2, 50.0, &m).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            measurement_sigma(30f64.to_radians(), 50.0, &m).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(measurement_sigma(FRAC_PI_2, 30.0, &m).unwrap(), 5.0, epsilon = 1e-12);
        assert!(matches!(measurement_sigma(0.0, 50.0, &m), Err(GnssError::InvalidElevation(_))));
        assert_relative_eq!(measurement_sigma(1e-4, 0.0, &m).unwrap(), 50.0);
    }

    #[test]
    fn doppler_jacobians_match_finite_differences() {
        let mut o = obs(SatId::gps(1), 2e7, 0.0, Vector3::new(1.2e7, -3e6, 2.1e7));
        o.sat_vel = Vector3::new(1200.0, -3000.0, 400.0);
        o.doppler = 123.0;
        let p = Vector3::new(-2.4e6, 5.4e6, 2.4e6);
        let v = Vector3::new(3.0, -4.0, 0.5);
        let (jp, jv, jc) = doppler_residual_jacobians(&o, &p, &v);
        let f = |p: &Vector3<f64>, v: &Vector3<f64>, c: f64| doppler_residual(&o, p, v, c).unwrap();
        for i in 0..3 {
            let mut d = Vector3::zeros();
            d[i] = 1.0;
            let nump = (f(&(p + d), &v, 0.0) - f(&(p - d), &v, 0.0)) / 2.0;
            assert!((nump - jp[i]).abs() < 1e-6 * jp.norm().max(1e-9) + 1e-12);
            let numv = (f(&p, &(v + d * 1e-3), 0.0) - f(&p, &(v - d * 1e-3), 0.0)) / 2e-3;
            assert_relative_eq!(numv, jv[i], max_relative = 1e-6);
        }
        let numc = (f(&p, &v, 1e-9) - f(&p, &v, -1e-9)) / 2e-9;
        assert_relative_eq!(numc, jc, max_relative = 1e-6);
    }

    proptest! {
        #[test]
        fn dd_cancels_receiver_and_satellite_offsets(
            clk_r in -1e5f64..1e5, clk_e in -1e5f64..1e5,
            sat_off in prop::collection::vec(-50.0f64..50.0, 4),
        ) {
            let o = origin();
            let p_r = o.enu_to_ecef(&Vector3::new(5.0, 5.0, 0.0));
            let p_e = o.enu_to_ecef(&Vector3::new(-300.0, 900.0, 0.0));
            let (ep, _) = truth_epoch(&p_r, &p_e);
            let mut shifted = ep.clone();
            for (k, ob) in shifted.rover.iter_mut().enumerate() {
                ob.pseudorange += clk_r + sat_off[k];
                ob.carrier += (clk_r + sat_off[k]) / ob.wavelength;
            }
            for (k, ob) in shifted.base.iter_mut().enumerate() {
                ob.pseudorange += clk_e + sat_off[k];
                ob.carrier += (clk_e + sat_off[k]) / ob.wavelength;
            }
            let masters = select_masters(&ep, &p_r, &o);
            let a = form_double_differences(&ep, &masters, &o, &NoiseModel::default());
            let b = form_double_differences(&shifted, &masters, &o, &NoiseModel::default());
            for (x, y) in a.observations.iter().zip(&b.observations) {
                prop_assert!((x.pseudorange - y.pseudorange).abs() < 1e-6);
                prop_assert!((x.carrier - y.carrier).abs() < 1e-5);
            }
        }

        #[test]
        fn carrier_residual_affine_in_ambiguity(n in -1e4f64..1e4, dn in -50.0f64..50.0) {
            let o = origin();
            let (ep, _) = truth_epoch(&o.origin_ecef, &o.enu_to_ecef(&Vector3::new(100.0, 0.0, 0.0)));
            let masters = select_masters(&ep, &o.origin_ecef, &o);
            let dd = &form_double_differences(&ep, &masters, &o, &NoiseModel::default()).observations[0];
            let a = dd_carrierphase_residual(dd, &o.origin_ecef, &ep.base_pos, n);
            let b = dd_carrierphase_residual(dd, &o.origin_ecef, &ep.base_pos, n + dn);
            prop_assert!(((b - a) + dd.wavelength * dn).abs() < 1e-5);
        }

        #[test]
        fn sigma_monotone(el1 in 0.01f64..1.57, el2 in 0.01f64..1.57, s1 in 0.0f64..60.0, s2 in 0.0f64..60.0) {
            let m = NoiseModel::default();
            let (lo, hi) = if el1 <= el2 { (el1, el2) } else { (el2, el1) };
            prop_assert!(measurement_sigma(hi, s1, &m).unwrap() <= measurement_sigma(lo, s1, &m).unwrap() + 1e-12);
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(measurement_sigma(el1, hi, &m).unwrap() <= measurement_sigma(el1, lo, &m).unwrap() + 1e-12);
        }
    }
}
