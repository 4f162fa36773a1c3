//! Measurement synthesis from the truth trajectory: GNSS (rover and base), IMU and LiDAR.

use crate::scenario::{MountSpec, SatelliteSpec, Scenario};
use crate::trajectory::Trajectory;
use crate::world::World;
use crate::SimError;
use canyon_rtk::frames::{direction_from_elevation_azimuth, GeodeticOrigin, RigidTransform, SPEED_OF_LIGHT};
use canyon_rtk::gnss::{measurement_sigma, Constellation, EpochObs, SatId, SatObs, CARRIER_SIGMA_RATIO};
use canyon_rtk::imu::ImuSample;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Satellites sit this far from the origin.
pub const SATELLITE_RANGE: f64 = 2.02e7;

/// Independent random stream per measurement type, so one stream's length never shifts another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

pub fn origin(s: &Scenario) -> Result<GeodeticOrigin, SimError> {
    GeodeticOrigin::from_degrees(s.origin.lat_deg, s.origin.lon_deg, s.origin.height_m)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))
}

pub fn mount(m: &MountSpec) -> RigidTransform {
    let [r, p, y] = m.rpy_deg.map(f64::to_radians);
    RigidTransform::new(UnitQuaternion::from_euler_angles(r, p, y), Vector3::from(m.translation))
}

/// ECEF position and velocity of a satellite on its (linear in az/el) sky track.
pub fn satellite_state(spec: &SatelliteSpec, origin: &GeodeticOrigin, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let pos = |t: f64| {
        let el = (spec.elevation_deg + spec.elevation_rate_deg_s * t).to_radians();
        let az = (spec.azimuth_deg + spec.azimuth_rate_deg_s * t).to_radians();
        origin.enu_to_ecef(&(direction_from_elevation_azimuth(el, az) * SATELLITE_RANGE))
    };
    let h = 0.5;
    (pos(t), (pos(t + h) - pos(t - h)) / (2.0 * h))
}

pub fn gnss_epoch_times(s: &Scenario) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let t = s.gnss_offset + k as f64 * s.gnss_interval;
        if t > s.duration + 1e-9 {
            return out;
        }
        out.push(t);
        k += 1;
    }
}

pub fn keyframe_times(s: &Scenario) -> Vec<f64> {
    let n = (s.duration / s.keyframe_interval + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * s.keyframe_interval).collect()
}

/// Truth visibility of one satellite at one epoch, as seen from the rover antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub t: f64,
    pub constellation: Constellation,
    pub prn: u16,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub visible: bool,
    pub nlos_bias_m: f64,
}

/// Integer phase ambiguities per receiver (cycles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityRow {
    pub t: f64,
    pub constellation: Constellation,
    pub prn: u16,
    pub n_rover: i64,
    pub n_base: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipRow {
    pub epoch: usize,
    pub t: f64,
    pub constellation: Constellation,
    pub prn: u16,
    pub cycles: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GnssEvents {
    pub labels: Vec<LabelRow>,
    pub ambiguities: Vec<AmbiguityRow>,
    pub slips: Vec<SlipRow>,
}

/// Receiver-independent per-satellite constants.
struct SatConstants {
    clock_bias: f64,
    clock_drift: f64,
    n_rover: i64,
    n_base: i64,
}

pub fn synthesize_gnss(s: &Scenario, traj: &Trajectory, world: &World) -> Result<(Vec<EpochObs>, GnssEvents), SimError> {
    let origin = origin(s)?;
    let mut rng = stream_rng(s.seed, 1);
    let base_enu = Vector3::from(s.base_enu);
    let base_ec = origin.enu_to_ecef(&base_enu);
    let lever = Vector3::from(s.lever_arm);
    let n = &s.noise;
    let consts: BTreeMap<SatId, SatConstants> = s
        .satellites
        .iter()
        .map(|sp| {
            (
                sp.id(),
                SatConstants {
                    clock_bias: rng.random_range(-1.0..=1.0) * n.sat_clock_bias_s,
                    clock_drift: rng.random_range(-1e-11..=1e-11),
                    n_rover: rng.random_range(-100_000..=100_000),
                    n_base: rng.random_range(-100_000..=100_000),
                },
            )
        })
        .collect();
    let mut nlos_bias: BTreeMap<SatId, f64> = BTreeMap::new();
    let mut was_blocked: BTreeMap<SatId, bool> = BTreeMap::new();
    let mut epochs = Vec::new();
    let mut events = GnssEvents::default();
    for slip in &s.events.slips {
        if let Some(&t) = gnss_epoch_times(s).get(slip.epoch) {
            events.slips.push(SlipRow {
                epoch: slip.epoch,
                t,
                constellation: slip.constellation,
                prn: slip.prn,
                cycles: slip.cycles,
            });
        }
    }
    let r_ec = origin.enu_to_ecef_rotation();
    for (k, t) in gnss_epoch_times(s).into_iter().enumerate() {
        let truth = traj.at(t);
        let rot = truth.rotation();
        let arm = rot * lever;
        let antenna = truth.position + arm;
        let rover_ec = origin.enu_to_ecef(&antenna);
        let rover_vel_ec = r_ec * (truth.velocity + Vector3::new(0.0, 0.0, truth.yaw_rate).cross(&arm));
        let rover_clk = n.rover_clock_bias_s + n.rover_clock_drift * t;
        let base_clk = n.base_clock_bias_s + n.base_clock_drift * t;
        let mut ep = EpochObs {
            time: t,
            base_pos: base_ec,
            ..Default::default()
        };
        for sp in &s.satellites {
            let id = sp.id();
            let c = &consts[&id];
            let lam = id.constellation.wavelength();
            let (sat_pos, sat_vel) = satellite_state(sp, &origin, t);
            let sat_enu = origin.ecef_to_enu(&sat_pos);
            let dir = (sat_enu - antenna).normalize();
            let (el, az) = canyon_rtk::frames::direction_elevation_azimuth(&dir);
            if el <= 0.0 {
                continue;
            }
            // atmosphere from the origin's view: identical at both receivers
            let el0 = canyon_rtk::frames::direction_elevation_azimuth(&sat_enu.normalize()).0;
            let iono = n.iono_zenith_m / el0.sin();
            let tropo = n.tropo_zenith_m / el0.sin();
            let sat_clk = c.clock_bias + c.clock_drift * t;
            let slip: i64 = s
                .events
                .slips
                .iter()
                .filter(|sl| sl.constellation == id.constellation && sl.prn == id.prn && k >= sl.epoch)
                .map(|sl| sl.cycles)
                .sum();
            let visible = world.is_visible(&antenna, &dir);
            let blocked = s.events.nlos && !visible;
            let bias = if blocked {
                *nlos_bias
                    .entry(id)
                    .or_insert_with(|| rng.random_range(s.events.nlos_bias_min..=s.events.nlos_bias_max))
            } else {
                nlos_bias.remove(&id);
                0.0
            };
            let reacquired = was_blocked.insert(id, blocked) == Some(true) && !blocked;
            let n_rover = c.n_rover + slip;

            let mut receiver = |pos: &Vector3<f64>, vel: &Vector3<f64>, clk: f64, clk_drift: f64, amb: i64, snr: f64, extra: f64| {
                let los = sat_pos - pos;
                let range = los.norm();
                let e = los / range;
                let sigma = measurement_sigma(el, snr, &n.gnss).unwrap_or(n.gnss.sigma_base) * n.scale;
                let common = range + SPEED_OF_LIGHT * (clk - sat_clk);
                let rho = common + iono + tropo + gauss(&mut rng, sigma) + extra;
                let psi = (common - iono + tropo + extra + gauss(&mut rng, sigma / CARRIER_SIGMA_RATIO)) / lam + amb as f64;
                let dop = (e.dot(&(sat_vel - vel)) + SPEED_OF_LIGHT * (clk_drift - c.clock_drift)) / lam
                    + gauss(&mut rng, n.doppler_sigma_hz * n.scale);
                (rho, psi, dop)
            };
            let snr = if blocked { n.snr_nlos_dbhz } else { n.snr_los_dbhz };
            let (rho, psi, dop) = receiver(&rover_ec, &rover_vel_ec, rover_clk, n.rover_clock_drift, n_rover, snr, bias);
            let (brho, bpsi, bdop) = receiver(&base_ec, &Vector3::zeros(), base_clk, n.base_clock_drift, c.n_base, n.snr_los_dbhz, 0.0);
            let obs = |rho: f64, psi: f64, dop: f64, snr: f64, lock_lost: bool| SatObs {
                sat: id,
                time: t,
                pseudorange: rho,
                carrier: psi,
                doppler: dop,
                snr,
                wavelength: lam,
                sat_pos,
                sat_vel,
                sat_clock_bias: sat_clk,
                sat_clock_drift: c.clock_drift,
                lock_lost,
            };
            ep.rover.push(obs(rho, psi, dop, snr, blocked || reacquired));
            ep.base.push(obs(brho, bpsi, bdop, n.snr_los_dbhz, false));
            events.labels.push(LabelRow {
                t,
                constellation: id.constellation,
                prn: id.prn,
                elevation_deg: el.to_degrees(),
                azimuth_deg: az.to_degrees(),
                visible,
                nlos_bias_m: bias,
            });
            events.ambiguities.push(AmbiguityRow {
                t,
                constellation: id.constellation,
                prn: id.prn,
                n_rover,
                n_base: c.n_base,
            });
        }
        epochs.push(ep);
    }
    Ok((epochs, events))
}

/// Body-frame specific force and angular rate with constant-plus-random-walk biases.
pub fn synthesize_imu(s: &Scenario, traj: &Trajectory) -> Vec<ImuSample> {
    let mut rng = stream_rng(s.seed, 2);
    let n = &s.noise;
    let dt = 1.0 / s.imu_rate;
    let white_a = n.imu.accel_noise * s.imu_rate.sqrt() * n.scale;
    let white_g = n.imu.gyro_noise * s.imu_rate.sqrt() * n.scale;
    let walk_a = n.imu.accel_random_walk * dt.sqrt() * n.scale;
    let walk_g = n.imu.gyro_random_walk * dt.sqrt() * n.scale;
    let mut ba = Vector3::from(n.accel_bias);
    let mut bg = Vector3::from(n.gyro_bias);
    let g = Vector3::new(0.0, 0.0, s.gravity);
    let count = (s.duration * s.imu_rate + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count + 1);
    for k in 0..=count {
        let t = k as f64 * dt;
        let truth = traj.at(t);
        let rot = truth.rotation();
        let mut noise = |sigma: f64| Vector3::new(gauss(&mut rng, sigma), gauss(&mut rng, sigma), gauss(&mut rng, sigma));
        let accel = rot.inverse() * (truth.acceleration + g) + ba + noise(white_a);
        let gyro = Vector3::new(0.0, 0.0, truth.yaw_rate) + bg + noise(white_g);
        ba += noise(walk_a);
        bg += noise(walk_g);
        out.push(ImuSample { t, gyro, accel });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub id: usize,
    pub t: f64,
    /// Sensor-frame returns.
    pub points: Vec<Vector3<f64>>,
}

/// One sweep from the sensor pose `sensor_to_enu`.
pub fn scan(s: &Scenario, world: &World, sensor_to_enu: &RigidTransform, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let l = &s.lidar;
    let sigma = s.noise.lidar_range_sigma * s.noise.scale;
    let mut pts = Vec::new();
    for c in 0..l.channels {
        let frac = if l.channels > 1 { c as f64 / (l.channels - 1) as f64 } else { 0.5 };
        let el = (l.min_elevation_deg + (l.max_elevation_deg - l.min_elevation_deg) * frac).to_radians();
        for j in 0..l.azimuth_steps {
            let az = std::f64::consts::TAU * j as f64 / l.azimuth_steps as f64;
            let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dw = sensor_to_enu.rotation * d;
            if let Some(r) = world.cast(&sensor_to_enu.translation, &dw, l.max_range) {
                pts.push(d * (r + gauss(rng, sigma)));
            }
        }
    }
    pts
}

pub fn synthesize_lidar(s: &Scenario, traj: &Trajectory, world: &World) -> Vec<LidarFrame> {
    let mut rng = stream_rng(s.seed, 3);
    let m = mount(&s.lidar_mount);
    keyframe_times(s)
        .into_iter()
        .enumerate()
        .map(|(id, t)| {
            let sensor = traj.at(t).pose().compose(&m);
            LidarFrame {
                id,
                t,
                points: scan(s, world, &sensor, &mut rng),
            }
        })
        .collect()
}
