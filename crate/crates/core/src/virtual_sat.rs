//! Planar features, plane association and point-to-plane "virtual satellite" constraints.

use crate::frames::RigidTransform;
use crate::spatial::VoxelIndex;
use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VsError {
    #[error("plane anchors are collinear (area {0} m²)")]
    DegeneratePlane(f64),
    #[error("no real satellites to weigh virtual satellites against")]
    NoRealSatellites,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarityParams {
    pub k_neighbors: usize,
    /// Association gate and neighbourhood radius (m).
    pub gate_radius: f64,
    /// Maximum `λ_min / λ_mid` for a neighbourhood to count as planar.
    pub planarity_threshold: f64,
    /// Largest distance (m) of any neighbour from the fitted plane; rejects patches straddling an edge.
    pub max_plane_distance: f64,
    /// Largest distance (m) of the query point itself from the patch; rejects matches to a parallel surface.
    pub max_point_distance: f64,
}

impl Default for PlanarityParams {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            gate_radius: 1.0,
            planarity_threshold: 0.1,
            max_plane_distance: 0.1,
            max_point_distance: 0.1,
        }
    }
}

pub const MIN_ANCHOR_AREA: f64 = 1e-6;

/// Plane patch spanned by three map points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarLandmark {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub c: Vector3<f64>,
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (a - b).cross(&(a - c)).norm()
}

impl PlanarLandmark {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Result<Self, VsError> {
        let area = triangle_area(&a, &b, &c);
        if !(area > MIN_ANCHOR_AREA) {
            return Err(VsError::DegeneratePlane(area));
        }
        Ok(Self { a, b, c })
    }

    /// Unit normal `((a − b) × (a − c)) / ‖·‖`.
    pub fn normal(&self) -> Result<Vector3<f64>, VsError> {
        let n = (self.a - self.b).cross(&(self.a - self.c));
        let area = 0.5 * n.norm();
        if !(area > MIN_ANCHOR_AREA) {
            return Err(VsError::DegeneratePlane(area));
        }
        Ok(n / n.norm())
    }

    /// Signed distance of an ENU point from the plane.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> Result<f64, VsError> {
        Ok((p - self.a).dot(&self.normal()?))
    }
}

/// Sensor point mapped into ENU: `R (R_l^b p + p_l^b) + p`.
pub fn lidar_point_to_enu(point_l: &Vector3<f64>, pose: &RigidTransform, extrinsic: &RigidTransform) -> Vector3<f64> {
    pose.transform_point(&extrinsic.transform_point(point_l))
}

/// Unsigned point-to-plane distance of a sensor point under a body pose.
pub fn point_to_plane_residual(
    point_l: &Vector3<f64>,
    landmark: &PlanarLandmark,
    pose: &RigidTransform,
    extrinsic: &RigidTransform,
) -> Result<f64, VsError> {
    Ok(landmark
        .signed_distance(&lidar_point_to_enu(point_l, pose, extrinsic))?
        .abs())
}

/// Mean and eigen-decomposition (ascending) of a neighbourhood's scatter matrix.
fn neighbourhood_shape(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = Vector3::new(eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    let vecs = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    (mean, vals, vecs)
}

fn is_planar(vals: &Vector3<f64>, threshold: f64) -> bool {
    vals[1] > 0.0 && vals[0] / vals[1] < threshold
}

/// Indices of points whose `k` nearest neighbours (within the gate) form a planar patch.
pub fn extract_planar_features(points: &[Vector3<f64>], params: &PlanarityParams) -> Vec<usize> {
    if points.len() < params.k_neighbors {
        return Vec::new();
    }
    let index = VoxelIndex::from_points(params.gate_radius, points.to_vec());
    extract_with_index(&index, params)
}

pub fn extract_with_index(index: &VoxelIndex, params: &PlanarityParams) -> Vec<usize> {
    let mut out = Vec::new();
    let mut nb = Vec::with_capacity(params.k_neighbors);
    for (i, p) in index.points().iter().enumerate() {
        let nn = index.nearest_k(p, params.k_neighbors, params.gate_radius);
        if nn.len() < params.k_neighbors {
            continue;
        }
        nb.clear();
        nb.extend(nn.iter().map(|(j, _)| index.point(*j)));
        let (mean, vals, vecs) = neighbourhood_shape(&nb);
        let n = vecs.column(0);
        if is_planar(&vals, params.planarity_threshold)
            && nb.iter().all(|q| (q - mean).dot(&n).abs() <= params.max_plane_distance)
        {
            out.push(i);
        }
    }
    out
}

/// Feature points in ENU used for scan-to-map association.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    index: VoxelIndex,
}

impl FeatureMap {
    pub fn new(points: Vec<Vector3<f64>>, gate_radius: f64) -> Self {
        Self {
            index: VoxelIndex::from_points(gate_radius, points),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Finds the planar map patch around `p_enu` and returns three non-collinear anchors on its fitted plane.
pub fn associate_planes(p_enu: &Vector3<f64>, map: &FeatureMap, params: &PlanarityParams) -> Option<PlanarLandmark> {
    let nn = map.index.nearest_k(p_enu, params.k_neighbors, params.gate_radius);
    if nn.len() < params.k_neighbors.min(5).max(3) {
        return None;
    }
    let pts: Vec<Vector3<f64>> = nn.iter().map(|(j, _)| map.index.point(*j)).collect();
    let (mean, vals, vecs) = neighbourhood_shape(&pts);
    if !is_planar(&vals, params.planarity_threshold) {
        return None;
    }
    let n = vecs.column(0).into_owned();
    if (p_enu - mean).dot(&n).abs() > params.max_point_distance
        || pts.iter().any(|q| (q - mean).dot(&n).abs() > params.max_plane_distance)
    {
        return None;
    }
    let project = |q: &Vector3<f64>| q - n * (q - mean).dot(&n);
    let proj: Vec<Vector3<f64>> = pts.iter().map(project).collect();
    for i in 0..proj.len() {
        for j in i + 1..proj.len() {
            for k in j + 1..proj.len() {
                if let Ok(l) = PlanarLandmark::new(proj[i], proj[j], proj[k]) {
                    // reject slivers; their normals are ill-conditioned
                    let edge = (proj[i] - proj[j]).norm().max((proj[i] - proj[k]).norm());
                    if triangle_area(&l.a, &l.b, &l.c) > 0.05 * edge * edge {
                        return Some(l);
                    }
                }
            }
        }
    }
    None
}

/// Uniformly random subset of at most `max_count` items, in original order.
pub fn select_vs<T: Clone>(candidates: &[T], max_count: usize, seed: u64) -> Vec<T> {
    if candidates.len() <= max_count {
        return candidates.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, candidates.len(), max_count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Ratio of virtual to real satellites; each VS variance is inflated by it.
pub fn vs_weight(n_virtual: usize, n_real: usize) -> Result<f64, VsError> {
    if n_real == 0 {
        return Err(VsError::NoRealSatellites);
    }
    Ok(n_virtual.max(1) as f64 / n_real as f64)
}
