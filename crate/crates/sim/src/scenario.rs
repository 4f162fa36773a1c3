//! Scenario description: world, trajectory, sky, noise and injected events.
//!
//! A scenario file is TOML. Every field has a default; `preset = "canyon"` starts
//! from the built-in street canyon and the remaining keys override it.

use crate::trajectory::Waypoint;
use crate::world::{Aabb, World};
use crate::SimError;
use canyon_rtk::gnss::{Constellation, NoiseModel, SatId};
use canyon_rtk::imu::ImuNoise;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteSpec {
    pub constellation: Constellation,
    pub prn: u16,
    pub elevation_deg: f64,
    /// Clockwise from north.
    pub azimuth_deg: f64,
    #[serde(default)]
    pub elevation_rate_deg_s: f64,
    #[serde(default)]
    pub azimuth_rate_deg_s: f64,
}

impl SatelliteSpec {
    pub fn id(&self) -> SatId {
        SatId::new(self.constellation, self.prn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OriginSpec {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

impl Default for OriginSpec {
    fn default() -> Self {
        Self {
            lat_deg: 22.30,
            lon_deg: 114.18,
            height_m: 10.0,
        }
    }
}

/// Rigid mounting offset: translation plus roll/pitch/yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MountSpec {
    pub translation: [f64; 3],
    pub rpy_deg: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Multiplies every random measurement error (0 gives noise-free streams).
    pub scale: f64,
    pub gnss: NoiseModel,
    pub snr_los_dbhz: f64,
    pub snr_nlos_dbhz: f64,
    pub doppler_sigma_hz: f64,
    pub iono_zenith_m: f64,
    pub tropo_zenith_m: f64,
    pub rover_clock_bias_s: f64,
    pub rover_clock_drift: f64,
    pub base_clock_bias_s: f64,
    pub base_clock_drift: f64,
    /// Satellite clock biases are drawn uniformly in ± this (s).
    pub sat_clock_bias_s: f64,
    pub imu: ImuNoise,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub lidar_range_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            scale: 1.0,
            gnss: NoiseModel::default(),
            snr_los_dbhz: 45.0,
            snr_nlos_dbhz: 35.0,
            doppler_sigma_hz: 0.1,
            iono_zenith_m: 4.0,
            tropo_zenith_m: 2.3,
            rover_clock_bias_s: 1.2e-4,
            rover_clock_drift: 8e-8,
            base_clock_bias_s: -3.1e-4,
            base_clock_drift: -2e-8,
            sat_clock_bias_s: 2e-4,
            imu: ImuNoise::default(),
            accel_bias: [0.03, -0.02, 0.05],
            gyro_bias: [0.001, -0.0015, 0.0008],
            lidar_range_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipSpec {
    /// GNSS epoch index from which the rover phase is offset.
    pub epoch: usize,
    pub constellation: Constellation,
    pub prn: u16,
    pub cycles: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventSpec {
    /// Apply a positive pseudorange bias and a loss-of-lock flag to occluded satellites.
    pub nlos: bool,
    pub nlos_bias_min: f64,
    pub nlos_bias_max: f64,
    pub slips: Vec<SlipSpec>,
}

impl Default for EventSpec {
    fn default() -> Self {
        Self {
            nlos: true,
            nlos_bias_min: 5.0,
            nlos_bias_max: 50.0,
            slips: Vec::new(),
        }
    }
}

/// Spinning multi-beam scanner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub channels: usize,
    pub azimuth_steps: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub max_range: f64,
    pub ground: bool,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            channels: 32,
            azimuth_steps: 720,
            min_elevation_deg: -15.0,
            max_elevation_deg: 45.0,
            max_range: 80.0,
            ground: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub origin: OriginSpec,
    pub duration: f64,
    pub keyframe_interval: f64,
    pub gnss_interval: f64,
    /// First GNSS epoch time; later epochs follow every `gnss_interval`.
    pub gnss_offset: f64,
    pub imu_rate: f64,
    pub truth_interval: f64,
    pub face_spacing: f64,
    pub gravity: f64,
    pub base_enu: [f64; 3],
    /// Antenna phase centre in the body frame.
    pub lever_arm: [f64; 3],
    /// LiDAR to body.
    pub lidar_mount: MountSpec,
    pub buildings: Vec<BoxSpec>,
    pub waypoints: Vec<Waypoint>,
    pub satellites: Vec<SatelliteSpec>,
    pub noise: NoiseSpec,
    pub events: EventSpec,
    pub lidar: LidarSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            origin: OriginSpec::default(),
            duration: 20.0,
            keyframe_interval: 1.0,
            gnss_interval: 1.0,
            gnss_offset: 0.5,
            imu_rate: 100.0,
            truth_interval: 0.05,
            face_spacing: 0.2,
            gravity: canyon_rtk::imu::DEFAULT_GRAVITY,
            base_enu: [150.0, 250.0, 60.0],
            lever_arm: [0.0, 0.2, 0.8],
            lidar_mount: MountSpec {
                translation: [0.0, 0.0, 0.9],
                rpy_deg: [0.0, 0.0, 0.0],
            },
            buildings: Vec::new(),
            waypoints: straight_line(20.0, 0.0),
            satellites: open_sky(),
            noise: NoiseSpec::default(),
            events: EventSpec::default(),
            lidar: LidarSpec::default(),
        }
    }
}

fn sat(c: Constellation, prn: u16, el: f64, az: f64) -> SatelliteSpec {
    SatelliteSpec {
        constellation: c,
        prn,
        elevation_deg: el,
        azimuth_deg: az,
        elevation_rate_deg_s: 0.0,
        azimuth_rate_deg_s: 0.0,
    }
}

/// Eight GPS and six BeiDou satellites spread over the sky.
pub fn open_sky() -> Vec<SatelliteSpec> {
    use Constellation::{BeiDou, Gps};
    vec![
        sat(Gps, 2, 75.0, 40.0),
        sat(Gps, 5, 35.0, 80.0),
        sat(Gps, 9, 62.0, 200.0),
        sat(Gps, 13, 25.0, 260.0),
        sat(Gps, 17, 45.0, 110.0),
        sat(Gps, 20, 68.0, 340.0),
        sat(Gps, 24, 30.0, 290.0),
        sat(Gps, 28, 40.0, 60.0),
        sat(BeiDou, 3, 80.0, 120.0),
        sat(BeiDou, 7, 30.0, 100.0),
        sat(BeiDou, 11, 66.0, 15.0),
        sat(BeiDou, 14, 45.0, 240.0),
        sat(BeiDou, 22, 63.0, 170.0),
        sat(BeiDou, 27, 38.0, 280.0),
    ]
}

/// Northbound drive at `speed` with the body 1 m above ground.
pub fn straight_line(duration: f64, speed: f64) -> Vec<Waypoint> {
    let n = (duration / 5.0).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = duration * i as f64 / n as f64;
            Waypoint {
                t,
                position: [0.0, speed * t, 1.0],
                yaw_deg: 90.0,
            }
        })
        .collect()
}

impl Scenario {
    /// Built-in scenarios: `open` (no buildings), `canyon` (street canyon) and `static`.
    pub fn preset(name: &str) -> Result<Self, SimError> {
        match name {
            "open" => Ok(Self::default()),
            "canyon" => Ok(Self::canyon()),
            "static" => Ok(Self {
                waypoints: straight_line(10.0, 0.0),
                duration: 10.0,
                ..Self::default()
            }),
            other => Err(SimError::InvalidScenario(format!("unknown preset {other:?}"))),
        }
    }

    /// A 90 s drive along a north-south street lined on both sides by 30–45 m blocks.
    ///
    /// Only satellites high enough or close to the street axis remain in view; the
    /// rest are blocked by the walls and become NLOS.
    pub fn canyon() -> Self {
        let duration = 90.0;
        let speed = 5.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ca11);
        let mut buildings = Vec::new();
        for side in [-1.0, 1.0] {
            let mut y = -80.0;
            while y < speed * duration + 80.0 {
                let len = rng.random_range(25.0..45.0);
                let setback = rng.random_range(10.0..12.5);
                let height = rng.random_range(30.0..45.0);
                let (x0, x1) = if side > 0.0 { (setback, setback + 15.0) } else { (-setback - 15.0, -setback) };
                buildings.push(BoxSpec {
                    min: [x0, y, 0.0],
                    max: [x1, y + len, height],
                });
                y += len + rng.random_range(3.0..8.0);
            }
        }
        let waypoints = (0..=30)
            .map(|i| {
                let t = duration * i as f64 / 30.0;
                let w = std::f64::consts::TAU / 30.0;
                let x = 1.2 * (w * t).sin();
                let vx = 1.2 * w * (w * t).cos();
                Waypoint {
                    t,
                    position: [x, speed * t, 1.0],
                    yaw_deg: speed.atan2(vx).to_degrees(),
                }
            })
            .collect();
        use Constellation::{BeiDou, Gps};
        Self {
            seed: 7,
            duration,
            buildings,
            waypoints,
            events: EventSpec {
                slips: vec![
                    SlipSpec {
                        epoch: 20,
                        constellation: Gps,
                        prn: 9,
                        cycles: 1,
                    },
                    SlipSpec {
                        epoch: 45,
                        constellation: BeiDou,
                        prn: 11,
                        cycles: -3,
                    },
                    SlipSpec {
                        epoch: 70,
                        constellation: Gps,
                        prn: 20,
                        cycles: 7,
                    },
                ],
                ..EventSpec::default()
            },
            ..Self::default()
        }
    }

    /// Parses a scenario document, applying it on top of `preset` when one is named.
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let err = |m: String| SimError::Config {
            path: "<string>".into(),
            message: m,
        };
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?;
        let base = match doc.remove("preset") {
            Some(toml::Value::String(name)) => Self::preset(&name)?,
            Some(other) => return Err(err(format!("preset must be a string, got {other}"))),
            None => Self::default(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| err(e.to_string()))?;
        merge(&mut merged, doc);
        let s: Scenario = merged.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Config { message, .. } => SimError::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.into()));
        if self.waypoints.is_empty() {
            return bad("no waypoints");
        }
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return bad("waypoint times must be strictly increasing");
        }
        let last = self.waypoints[self.waypoints.len() - 1].t;
        if self.waypoints.len() > 1 && self.duration > last + 1e-9 {
            return bad("duration extends past the last waypoint");
        }
        for (name, v) in [
            ("duration", self.duration),
            ("keyframe_interval", self.keyframe_interval),
            ("gnss_interval", self.gnss_interval),
            ("imu_rate", self.imu_rate),
            ("truth_interval", self.truth_interval),
            ("face_spacing", self.face_spacing),
        ] {
            if !(v > 0.0) {
                return Err(SimError::InvalidScenario(format!("{name} must be positive")));
            }
        }
        if !(self.events.nlos_bias_max >= self.events.nlos_bias_min && self.events.nlos_bias_min >= 0.0) {
            return bad("nlos bias range is empty or negative");
        }
        let mut ids = BTreeSet::new();
        for s in &self.satellites {
            if !ids.insert(s.id()) {
                return Err(SimError::InvalidScenario(format!("duplicate satellite {}", s.id())));
            }
        }
        for slip in &self.events.slips {
            let id = SatId::new(slip.constellation, slip.prn);
            if !ids.contains(&id) {
                return Err(SimError::InvalidScenario(format!("slip references unknown satellite {id}")));
            }
        }
        self.world().map(|_| ())
    }

    pub fn world(&self) -> Result<World, SimError> {
        let boxes = self
            .buildings
            .iter()
            .map(|b| Aabb::new(Vector3::from(b.min), Vector3::from(b.max)))
            .collect::<Result<_, _>>()?;
        Ok(World::new(boxes, self.lidar.ground))
    }
}

/// Recursive table merge; non-table values in `over` replace those in `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for name in ["open", "canyon", "static"] {
            let s = Scenario::preset(name).unwrap();
            s.validate().unwrap();
            assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), s);
        }
    }

    #[test]
    fn preset_with_overrides() {
        let s = Scenario::from_toml_str("preset = \"canyon\"\nseed = 99\n[noise]\nscale = 0.0\n").unwrap();
        assert_eq!(s.seed, 99);
        assert_eq!(s.noise.scale, 0.0);
        assert_eq!(s.noise.snr_los_dbhz, 45.0);
        assert_eq!(s.buildings, Scenario::canyon().buildings);
    }

    #[test]
    fn invalid_documents_are_rejected() {
        assert!(Scenario::from_toml_str("preset = \"mars\"").is_err());
        assert!(Scenario::from_toml_str("duration = -1.0").is_err());
        let slip = "[[events.slips]]\nepoch = 1\nconstellation = \"GPS\"\nprn = 99\ncycles = 1\n";
        assert!(matches!(Scenario::from_toml_str(slip), Err(SimError::InvalidScenario(_))));
        let degenerate = "[[buildings]]\nmin = [0.0, 0.0, 0.0]\nmax = [0.0, 1.0, 1.0]\n";
        assert!(matches!(Scenario::from_toml_str(degenerate), Err(SimError::DegenerateBox { .. })));
        let waypoints = "duration = 1.0\n[[waypoints]]\nt = 1.0\nposition = [0.0, 0.0, 0.0]\nyaw_deg = 0.0\n[[waypoints]]\nt = 0.5\nposition = [0.0, 0.0, 0.0]\nyaw_deg = 0.0\n";
        assert!(Scenario::from_toml_str(waypoints).is_err());
    }

    #[test]
    fn canyon_blocks_low_satellites_only() {
        let s = Scenario::canyon();
        let w = s.world().unwrap();
        let antenna = Vector3::new(0.0, 100.0, 1.8);
        for sat in &s.satellites {
            let d = canyon_rtk::frames::direction_from_elevation_azimuth(
                sat.elevation_deg.to_radians(),
                sat.azimuth_deg.to_radians(),
            );
            if sat.elevation_deg >= 55.0 {
                assert!(w.is_visible(&antenna, &d), "{} should be in view", sat.id());
            }
        }
        let blocked = s
            .satellites
            .iter()
            .filter(|sat| {
                let d = canyon_rtk::frames::direction_from_elevation_azimuth(
                    sat.elevation_deg.to_radians(),
                    sat.azimuth_deg.to_radians(),
                );
                !w.is_visible(&antenna, &d)
            })
            .count();
        assert!(blocked >= 6, "{blocked}");
    }
}
