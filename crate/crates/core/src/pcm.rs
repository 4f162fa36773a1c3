//! Sliding-window point cloud map and satellite visibility by fixed-step search along the line of sight.

use crate::frames::{self, RigidTransform};
use crate::gnss::{Constellation, EpochObs, SatId};
use crate::spatial::VoxelIndex;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcmError {
    #[error("no corrected pose for keyframe {0}")]
    MissingPose(usize),
    #[error("fewer than two satellites survive NLOS exclusion in every constellation")]
    AllExcluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlosSearchParams {
    /// Step along the line of sight (m).
    pub step: f64,
    /// Neighbour search radius (m).
    pub radius: f64,
    pub neighbor_threshold: usize,
    pub max_search_range: f64,
    pub elevation_mask: f64,
}

impl Default for NlosSearchParams {
    fn default() -> Self {
        Self {
            step: 2.0,
            radius: 1.0,
            neighbor_threshold: 5,
            max_search_range: 250.0,
            elevation_mask: 10f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Visibility {
    Los,
    Nlos { blocking_distance: f64 },
}

impl Visibility {
    pub fn is_nlos(&self) -> bool {
        matches!(self, Visibility::Nlos { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityLabel {
    pub sat: SatId,
    pub azimuth: f64,
    pub elevation: f64,
    pub visibility: Visibility,
}

#[derive(Debug, Clone)]
struct KeyframeCloud {
    sensor_points: Vec<Vector3<f64>>,
    extrinsic: RigidTransform,
    pose: RigidTransform,
}

/// Keyframe point clouds in ENU, limited to the most recent `window` keyframes.
#[derive(Debug, Clone)]
pub struct PointCloudMap {
    window: usize,
    voxel: f64,
    keyframes: BTreeMap<usize, KeyframeCloud>,
    index: VoxelIndex,
}

impl PointCloudMap {
    pub fn new(window: usize, voxel: f64) -> Self {
        Self {
            window: window.max(1),
            voxel,
            keyframes: BTreeMap::new(),
            index: VoxelIndex::new(voxel),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Changes the window length, evicting the oldest keyframes if needed.
    pub fn set_window(&mut self, window: usize) {
        self.window = window.max(1);
        if self.evict() {
            self.rebuild();
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn keyframe_ids(&self) -> Vec<usize> {
        self.keyframes.keys().copied().collect()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        self.index.points()
    }

    pub fn index(&self) -> &VoxelIndex {
        &self.index
    }

    fn evict(&mut self) -> bool {
        let mut changed = false;
        while self.keyframes.len() > self.window {
            let oldest = *self.keyframes.keys().next().unwrap();
            self.keyframes.remove(&oldest);
            changed = true;
        }
        changed
    }

    fn rebuild(&mut self) {
        let mut idx = VoxelIndex::new(self.voxel);
        for kf in self.keyframes.values() {
            let t = kf.pose.compose(&kf.extrinsic);
            for p in &kf.sensor_points {
                idx.insert(t.transform_point(p));
            }
        }
        self.index = idx;
    }

    /// Adds one keyframe's sensor-frame points under `pose` (body→ENU) and `extrinsic` (sensor→body).
    pub fn accumulate(&mut self, id: usize, sensor_points: Vec<Vector3<f64>>, pose: RigidTransform, extrinsic: RigidTransform) {
        let t = pose.compose(&extrinsic);
        let replaced = self.keyframes.contains_key(&id);
        let kf = KeyframeCloud {
            sensor_points,
            extrinsic,
            pose,
        };
        if !replaced {
            for p in &kf.sensor_points {
                self.index.insert(t.transform_point(p));
            }
        }
        self.keyframes.insert(id, kf);
        if self.evict() || replaced {
            self.rebuild();
        }
    }

    /// Re-transforms every keyframe with its corrected pose and rebuilds the index.
    pub fn repose(&mut self, corrected: &BTreeMap<usize, RigidTransform>) -> Result<(), PcmError> {
        for id in self.keyframes.keys() {
            if !corrected.contains_key(id) {
                return Err(PcmError::MissingPose(*id));
            }
        }
        let mut changed = false;
        for (id, kf) in self.keyframes.iter_mut() {
            let new = corrected[id];
            if new != kf.pose {
                kf.pose = new;
                changed = true;
            }
        }
        if changed {
            self.rebuild();
        }
        Ok(())
    }
}

/// Smallest number of trailing keyframes whose chord exceeds `span`, capped at `cap`.
pub fn adaptive_window(positions: &[Vector3<f64>], span: f64, cap: usize) -> usize {
    let Some(last) = positions.last() else {
        return cap;
    };
    for (n, p) in positions.iter().rev().enumerate() {
        if n + 1 > cap {
            break;
        }
        if (last - p).norm() > span {
            return n + 1;
        }
    }
    cap
}

/// Steps along the unit direction `dir` from the receiver, reporting the first occupied step.
pub fn classify_visibility(
    map: &PointCloudMap,
    receiver_enu: &Vector3<f64>,
    dir: &Vector3<f64>,
    params: &NlosSearchParams,
) -> Visibility {
    classify_in_index(map.index(), receiver_enu, dir, params)
}

pub fn classify_in_index(
    index: &VoxelIndex,
    receiver_enu: &Vector3<f64>,
    dir: &Vector3<f64>,
    params: &NlosSearchParams,
) -> Visibility {
    if index.is_empty() {
        return Visibility::Los;
    }
    let u = dir.normalize();
    let steps = (params.max_search_range / params.step).floor() as usize;
    for k in 1..=steps {
        let d = k as f64 * params.step;
        let probe = receiver_enu + u * d;
        if index.count_within(&probe, params.radius) >= params.neighbor_threshold {
            return Visibility::Nlos { blocking_distance: d };
        }
    }
    Visibility::Los
}

/// Labels every rover satellite above the elevation mask. Satellite positions are ECEF.
pub fn classify_epoch(
    map: &PointCloudMap,
    receiver_enu: &Vector3<f64>,
    epoch: &EpochObs,
    origin: &frames::GeodeticOrigin,
    params: &NlosSearchParams,
) -> Vec<VisibilityLabel> {
    let rx_ec = origin.enu_to_ecef(receiver_enu);
    let to_enu = origin.enu_to_ecef_rotation().transpose();
    let mut out = Vec::new();
    for o in &epoch.rover {
        let Ok(u_ec) = frames::los_unit_vector(&rx_ec, &o.sat_pos) else {
            continue;
        };
        let u = to_enu * u_ec;
        let (el, az) = frames::direction_elevation_azimuth(&u);
        if el < params.elevation_mask {
            continue;
        }
        out.push(VisibilityLabel {
            sat: o.sat,
            azimuth: az,
            elevation: el,
            visibility: classify_visibility(map, receiver_enu, &u, params),
        });
    }
    out.sort_by_key(|l| l.sat);
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionReport {
    /// Excluded satellites with their blocking distance.
    pub excluded: Vec<(SatId, f64)>,
}

/// Drops NLOS-labelled satellites from both receivers.
pub fn exclude_nlos(epoch: &EpochObs, labels: &[VisibilityLabel]) -> Result<(EpochObs, ExclusionReport), PcmError> {
    let mut report = ExclusionReport::default();
    let mut blocked = BTreeSet::new();
    for l in labels {
        if let Visibility::Nlos { blocking_distance } = l.visibility {
            blocked.insert(l.sat);
            report.excluded.push((l.sat, blocking_distance));
        }
    }
    let mut out = epoch.clone();
    out.rover.retain(|o| !blocked.contains(&o.sat));
    out.base.retain(|o| !blocked.contains(&o.sat));
    let mut per: BTreeMap<Constellation, usize> = BTreeMap::new();
    for (r, _) in out.matched() {
        *per.entry(r.sat.constellation).or_insert(0) += 1;
    }
    if !blocked.is_empty() && per.values().all(|&n| n < 2) {
        return Err(PcmError::AllExcluded);
    }
    Ok((out, report))
}
