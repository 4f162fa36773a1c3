//! Dataset directory layout, writer and loader.
//!
//! ```text
//! dataset.toml          manifest: frames, mounting, noise model, initial state
//! scenario.toml         the scenario that produced the data
//! obs.csv               rover and base observations
//! imu.csv
//! lidar/index.csv       keyframe id, time, file
//! lidar/kf_000000.txt   sensor-frame points
//! truth.csv             body poses
//! events/labels.csv     truth visibility per satellite and epoch
//! events/ambiguities.csv
//! events/slips.csv
//! ```

use crate::scenario::{MountSpec, OriginSpec, Scenario};
use crate::synth::{self, AmbiguityRow, GnssEvents, LabelRow, LidarFrame, SlipRow};
use crate::trajectory::Trajectory;
use crate::SimError;
use canyon_rtk::frames::{GeodeticOrigin, RigidTransform};
use canyon_rtk::gnss::{self, EpochObs, NoiseModel};
use canyon_rtk::imu::{ImuNoise, ImuSample};
use canyon_rtk::io::{self, DatasetError, PoseStamped};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub t: f64,
    pub position: [f64; 3],
    /// Body to ENU rotation as (w, x, y, z).
    pub rotation_wxyz: [f64; 4],
    pub velocity: [f64; 3],
}

impl InitialState {
    pub fn pose(&self) -> RigidTransform {
        let [w, x, y, z] = self.rotation_wxyz;
        RigidTransform::new(
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            Vector3::from(self.position),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileNames {
    pub observations: String,
    pub imu: String,
    pub lidar_index: String,
    pub truth: String,
}

impl Default for FileNames {
    fn default() -> Self {
        Self {
            observations: "obs.csv".into(),
            imu: "imu.csv".into(),
            lidar_index: "lidar/index.csv".into(),
            truth: "truth.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub origin: OriginSpec,
    pub base_ecef: [f64; 3],
    pub lever_arm: [f64; 3],
    pub lidar_mount: MountSpec,
    pub gravity: f64,
    pub gnss_noise: NoiseModel,
    pub doppler_sigma_hz: f64,
    pub imu_noise: ImuNoise,
    pub initial: InitialState,
    #[serde(default)]
    pub files: FileNames,
}

impl Manifest {
    pub fn origin(&self) -> Result<GeodeticOrigin, String> {
        GeodeticOrigin::from_degrees(self.origin.lat_deg, self.origin.lon_deg, self.origin.height_m)
            .map_err(|e| e.to_string())
    }

    pub fn extrinsic(&self) -> RigidTransform {
        synth::mount(&self.lidar_mount)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexRow {
    id: usize,
    t: f64,
    file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub origin: GeodeticOrigin,
    pub epochs: Vec<EpochObs>,
    pub imu: Vec<ImuSample>,
    pub keyframes: Vec<LidarFrame>,
    pub truth: Vec<PoseStamped>,
}

/// Everything the simulator produces before it is written out.
#[derive(Debug, Clone)]
pub struct Generated {
    pub manifest: Manifest,
    pub epochs: Vec<EpochObs>,
    pub events: GnssEvents,
    pub imu: Vec<ImuSample>,
    pub keyframes: Vec<LidarFrame>,
    pub truth: Vec<PoseStamped>,
}

pub fn synthesize(s: &Scenario) -> Result<Generated, SimError> {
    s.validate()?;
    let traj = Trajectory::new(&s.waypoints)?;
    let world = s.world()?;
    let origin = synth::origin(s)?;
    let (epochs, events) = synth::synthesize_gnss(s, &traj, &world)?;
    let imu = synth::synthesize_imu(s, &traj);
    let keyframes = synth::synthesize_lidar(s, &traj, &world);
    let n = (s.duration / s.truth_interval + 1e-9).floor() as usize;
    let truth = (0..=n)
        .map(|k| {
            let t = k as f64 * s.truth_interval;
            PoseStamped {
                t,
                pose: traj.at(t).pose(),
            }
        })
        .collect();
    let x0 = traj.at(0.0);
    let q = x0.rotation();
    let manifest = Manifest {
        seed: s.seed,
        origin: s.origin,
        base_ecef: origin.enu_to_ecef(&Vector3::from(s.base_enu)).into(),
        lever_arm: s.lever_arm,
        lidar_mount: s.lidar_mount,
        gravity: s.gravity,
        gnss_noise: s.noise.gnss,
        doppler_sigma_hz: s.noise.doppler_sigma_hz,
        imu_noise: s.noise.imu,
        initial: InitialState {
            t: 0.0,
            position: x0.position.into(),
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            velocity: x0.velocity.into(),
        },
        files: FileNames::default(),
    };
    Ok(Generated {
        manifest,
        epochs,
        events,
        imu,
        keyframes,
        truth,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_path(path)
        .map_err(|e| DatasetError::invalid(path, e.to_string()))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| DatasetError::invalid(path, e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| DatasetError::invalid(path, e.to_string()))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DatasetError::io(path, source),
            other => DatasetError::invalid(path, format!("{other:?}")),
        })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| DatasetError::parse(path, i + 2, e.to_string())))
        .collect()
}

fn mkdir(path: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(path).map_err(|e| DatasetError::io(path, e))
}

impl Generated {
    pub fn write(&self, dir: &Path, scenario: &Scenario) -> Result<(), DatasetError> {
        mkdir(&dir.join("lidar"))?;
        mkdir(&dir.join("events"))?;
        let m = dir.join(MANIFEST);
        let text = toml::to_string(&self.manifest).map_err(|e| DatasetError::invalid(&m, e.to_string()))?;
        std::fs::write(&m, text).map_err(|e| DatasetError::io(&m, e))?;
        let sc = dir.join("scenario.toml");
        std::fs::write(&sc, scenario.to_toml_string()).map_err(|e| DatasetError::io(&sc, e))?;
        let f = &self.manifest.files;
        gnss::write_epoch_file(&dir.join(&f.observations), &self.epochs)?;
        io::write_imu_file(&dir.join(&f.imu), &self.imu)?;
        io::write_trajectory(&dir.join(&f.truth), &self.truth)?;
        let mut index = Vec::new();
        for kf in &self.keyframes {
            let file = format!("kf_{:06}.txt", kf.id);
            io::write_points(&dir.join("lidar").join(&file), &kf.points)?;
            index.push(IndexRow {
                id: kf.id,
                t: kf.t,
                file,
            });
        }
        write_csv(&dir.join(&f.lidar_index), &index, &["id", "t", "file"])?;
        let ev = dir.join("events");
        write_csv(
            &ev.join("labels.csv"),
            &self.events.labels,
            &["t", "constellation", "prn", "elevation_deg", "azimuth_deg", "visible", "nlos_bias_m"],
        )?;
        write_csv(
            &ev.join("ambiguities.csv"),
            &self.events.ambiguities,
            &["t", "constellation", "prn", "n_rover", "n_base"],
        )?;
        write_csv(&ev.join("slips.csv"), &self.events.slips, &["epoch", "t", "constellation", "prn", "cycles"])
    }
}

/// Synthesizes `scenario` and writes the dataset into `dir`.
pub fn generate(scenario: &Scenario, dir: &Path) -> Result<Generated, SimError> {
    let g = synthesize(scenario)?;
    g.write(dir, scenario)?;
    Ok(g)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let mpath = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(|e| DatasetError::io(&mpath, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| DatasetError::invalid(&mpath, e.to_string()))?;
        let origin = manifest.origin().map_err(|e| DatasetError::invalid(&mpath, e))?;
        let f = &manifest.files;
        let epochs = gnss::read_epoch_file(&dir.join(&f.observations), Vector3::from(manifest.base_ecef))?;
        let imu = io::read_imu_file(&dir.join(&f.imu))?;
        let truth = io::read_trajectory(&dir.join(&f.truth))?;
        let index_path = dir.join(&f.lidar_index);
        let lidar_dir = index_path.parent().unwrap_or(dir).to_path_buf();
        let mut keyframes = Vec::new();
        for row in read_csv::<IndexRow>(&index_path)? {
            keyframes.push(LidarFrame {
                id: row.id,
                t: row.t,
                points: io::read_points(&lidar_dir.join(&row.file))?,
            });
        }
        if keyframes.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(DatasetError::invalid(&index_path, "keyframe times not strictly increasing"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            origin,
            epochs,
            imu,
            keyframes,
            truth,
        })
    }

    pub fn load_events(&self) -> Result<GnssEvents, DatasetError> {
        let ev = self.dir.join("events");
        Ok(GnssEvents {
            labels: read_csv::<LabelRow>(&ev.join("labels.csv"))?,
            ambiguities: read_csv::<AmbiguityRow>(&ev.join("ambiguities.csv"))?,
            slips: read_csv::<SlipRow>(&ev.join("slips.csv"))?,
        })
    }
}
