//! Plain-text dataset files: IMU rows, per-keyframe point clouds and trajectories.

use crate::frames::RigidTransform;
use crate::imu::ImuSample;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl DatasetError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        DatasetError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize);
        match (e.into_kind(), line) {
            (csv::ErrorKind::Io(source), _) => DatasetError::io(path, source),
            (kind, Some(line)) => DatasetError::parse(path, line, format!("{kind:?}")),
            (kind, None) => DatasetError::invalid(path, format!("{kind:?}")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

pub fn write_imu_file(path: &Path, samples: &[ImuSample]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    for s in samples {
        w.serialize(ImuRow {
            t: s.t,
            wx: s.gyro.x,
            wy: s.gyro.y,
            wz: s.gyro.z,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
        })
        .map_err(|e| DatasetError::csv(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn read_imu_file(path: &Path) -> Result<Vec<ImuSample>, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::csv(path, e))?;
    let mut out: Vec<ImuSample> = Vec::new();
    for (i, row) in r.deserialize::<ImuRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DatasetError::parse(path, line, e.to_string()))?;
        if let Some(prev) = out.last() {
            if row.t <= prev.t {
                return Err(DatasetError::parse(path, line, "timestamps not strictly increasing"));
            }
        }
        out.push(ImuSample {
            t: row.t,
            gyro: Vector3::new(row.wx, row.wy, row.wz),
            accel: Vector3::new(row.ax, row.ay, row.az),
        });
    }
    Ok(out)
}

/// Point cloud as "x y z" lines.
pub fn write_points(path: &Path, points: &[Vector3<f64>]) -> Result<(), DatasetError> {
    let mut s = String::with_capacity(points.len() * 32);
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    std::fs::write(path, s).map_err(|e| DatasetError::io(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::parse(path, i + 1, format!("{e}")))?;
        if vals.len() != 3 {
            return Err(DatasetError::parse(path, i + 1, format!("expected 3 values, got {}", vals.len())));
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Timestamped body pose in ENU.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStamped {
    pub t: f64,
    pub pose: RigidTransform,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
}

pub fn write_trajectory(path: &Path, poses: &[PoseStamped]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    for p in poses {
        let q = p.pose.rotation.quaternion();
        let t = p.pose.translation;
        w.serialize(TrajectoryRow {
            t: p.t,
            x: t.x,
            y: t.y,
            z: t.z,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            qw: q.w,
        })
        .map_err(|e| DatasetError::csv(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<PoseStamped>, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::csv(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| DatasetError::parse(path, i + 2, e.to_string()))?;
        let q = Quaternion::new(row.qw, row.qx, row.qy, row.qz);
        if !(q.norm() > 0.5) {
            return Err(DatasetError::parse(path, i + 2, "degenerate quaternion"));
        }
        out.push(PoseStamped {
            t: row.t,
            pose: RigidTransform::new(UnitQuaternion::from_quaternion(q), Vector3::new(row.x, row.y, row.z)),
        });
    }
    Ok(out)
}
