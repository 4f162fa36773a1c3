//! Uniform voxel hash over a point set with exact radius and k-nearest queries.

use nalgebra::Vector3;
use std::collections::HashMap;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct VoxelIndex {
    cell: f64,
    points: Vec<Vector3<f64>>,
    cells: HashMap<Cell, Vec<u32>>,
}

impl VoxelIndex {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "voxel size must be positive");
        Self {
            cell,
            points: Vec::new(),
            cells: HashMap::new(),
        }
    }

    pub fn from_points(cell: f64, points: Vec<Vector3<f64>>) -> Self {
        let mut idx = Self::new(cell);
        idx.points.reserve(points.len());
        for p in points {
            idx.insert(p);
        }
        idx
    }

    fn key(&self, p: &Vector3<f64>) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: Vector3<f64>) -> usize {
        let i = self.points.len();
        let k = self.key(&p);
        self.cells.entry(k).or_default().push(i as u32);
        self.points.push(p);
        i
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    fn visit_cells(&self, center: &Vector3<f64>, radius: f64, mut f: impl FnMut(u32)) {
        let (cx, cy, cz) = self.key(center);
        let reach = (radius / self.cell).ceil() as i64;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        ids.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// Number of points with `‖p − center‖ ≤ radius`.
    pub fn count_within(&self, center: &Vector3<f64>, radius: f64) -> usize {
        let r2 = radius * radius;
        let mut n = 0;
        self.visit_cells(center, radius, |i| {
            if (self.points[i as usize] - center).norm_squared() <= r2 {
                n += 1;
            }
        });
        n
    }

    /// Indices within `radius`, ascending.
    pub fn within(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.visit_cells(center, radius, |i| {
            if (self.points[i as usize] - center).norm_squared() <= r2 {
                out.push(i as usize);
            }
        });
        out.sort_unstable();
        out
    }

    /// Up to `k` nearest points within `max_radius`, ordered by distance then index.
    pub fn nearest_k(&self, center: &Vector3<f64>, k: usize, max_radius: f64) -> Vec<(usize, f64)> {
        let r2 = max_radius * max_radius;
        let mut cand: Vec<(usize, f64)> = Vec::new();
        self.visit_cells(center, max_radius, |i| {
            let d2 = (self.points[i as usize] - center).norm_squared();
            if d2 <= r2 {
                cand.push((i as usize, d2));
            }
        });
        cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        cand.truncate(k);
        cand.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }
}
