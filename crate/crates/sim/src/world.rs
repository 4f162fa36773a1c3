//! Axis-aligned box buildings: sampled face clouds and exact ray occlusion.

use crate::SimError;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in ENU (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self, SimError> {
        let ok = (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && max[i] > min[i]);
        if !ok {
            return Err(SimError::DegenerateBox {
                min: min.into(),
                max: max.into(),
            });
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Entry distance of the ray `o + t·d`, `t ≥ 0`, by the slab method.
    pub fn ray_entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let (mut a, mut b) = ((self.min[i] - o[i]) * inv, (self.max[i] - o[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    /// Grid points on all six faces with at most `spacing` between neighbours.
    pub fn sample_faces(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let ext = self.max - self.min;
        let n = |len: f64| (len / spacing).ceil().max(1.0) as usize;
        let mut out = Vec::new();
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let (nu, nv) = (n(ext[u]), n(ext[v]));
            for side in [self.min[axis], self.max[axis]] {
                for i in 0..=nu {
                    for j in 0..=nv {
                        let mut p = Vector3::zeros();
                        p[axis] = side;
                        p[u] = self.min[u] + ext[u] * i as f64 / nu as f64;
                        p[v] = self.min[v] + ext[v] * j as f64 / nv as f64;
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Buildings plus an optional ground plane at z = 0 (seen by the LiDAR, never by the sky).
#[derive(Debug, Clone, Default)]
pub struct World {
    pub boxes: Vec<Aabb>,
    pub ground: bool,
}

impl World {
    pub fn new(boxes: Vec<Aabb>, ground: bool) -> Self {
        Self { boxes, ground }
    }

    /// Distance to the first building along `dir` (need not be unit), if any.
    pub fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let d = dir.normalize();
        self.boxes
            .iter()
            .filter_map(|b| b.ray_entry(origin, &d))
            .min_by(f64::total_cmp)
    }

    /// Analytic occlusion oracle for a direction towards the sky.
    pub fn is_visible(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> bool {
        self.first_hit(origin, dir).is_none()
    }

    /// Range to the first surface, buildings or ground, within `max_range`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
        let d = dir.normalize();
        let mut best = self.first_hit(origin, &d);
        if self.ground && d.z < -1e-9 && origin.z > 0.0 {
            let t = -origin.z / d.z;
            best = Some(best.map_or(t, |b| b.min(t)));
        }
        best.filter(|&t| t <= max_range)
    }

    /// Building faces sampled at `spacing`.
    pub fn point_cloud(&self, spacing: f64) -> Vec<Vector3<f64>> {
        self.boxes.iter().flat_map(|b| b.sample_faces(spacing)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tower() -> Aabb {
        Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(10.0, 10.0, 30.0)).unwrap()
    }

    #[test]
    fn degenerate_boxes_rejected() {
        let z = Vector3::zeros();
        assert!(matches!(Aabb::new(z, Vector3::new(1.0, 0.0, 1.0)), Err(SimError::DegenerateBox { .. })));
        assert!(Aabb::new(z, Vector3::new(1.0, f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn face_count_matches_area() {
        let b = tower();
        let pts = b.sample_faces(0.2);
        // per face (a/s + 1)(b/s + 1); compare against area/s² allowing one row per face edge
        let faces = [(10.0, 10.0), (10.0, 30.0), (10.0, 30.0)];
        let area: f64 = faces.iter().map(|(a, b)| 2.0 * a * b / 0.04).sum();
        let rows: f64 = faces.iter().map(|(a, b)| 2.0 * ((a + b) / 0.2 + 1.0)).sum();
        assert!((pts.len() as f64 - area).abs() <= rows, "{} vs {area}", pts.len());
        assert!(pts.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn missing_ray_is_visible() {
        let w = World::new(vec![tower()], true);
        assert!(w.is_visible(&Vector3::new(-5.0, 5.0, 1.0), &Vector3::new(-1.0, 0.0, 1.0)));
    }

    #[test]
    fn ray_into_face_blocked_at_plane_distance() {
        let w = World::new(vec![tower()], false);
        let o = Vector3::new(-20.0, 5.0, 1.0);
        // 30° elevation towards +x hits the x = 0 face after 20 / cos 30° metres
        let el = 30f64.to_radians();
        let d = Vector3::new(el.cos(), 0.0, el.sin());
        assert_relative_eq!(w.first_hit(&o, &d).unwrap(), 20.0 / el.cos(), epsilon = 1e-12);
        assert!(!w.is_visible(&o, &d));
    }

    #[test]
    fn ground_returns_only_downwards() {
        let w = World::new(vec![], true);
        let o = Vector3::new(0.0, 0.0, 2.0);
        assert_relative_eq!(w.cast(&o, &Vector3::new(1.0, 0.0, -1.0), 80.0).unwrap(), 8f64.sqrt(), epsilon = 1e-12);
        assert!(w.cast(&o, &Vector3::new(1.0, 0.0, 1.0), 80.0).is_none());
        assert!(w.cast(&o, &Vector3::new(1.0, 0.0, -0.001), 80.0).is_none());
    }

    proptest! {
        #[test]
        fn hit_point_lies_on_the_box(x in -40.0..-1.0f64, y in -5.0..15.0f64, z in 0.0..20.0f64,
                                     el in 0.0..1.2f64, az in -0.8..0.8f64) {
            let w = World::new(vec![tower()], false);
            let o = Vector3::new(x, y, z);
            let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if let Some(t) = w.first_hit(&o, &d) {
                let p = o + d * t;
                let b = tower();
                let on_face = (0..3).any(|i| (p[i] - b.min[i]).abs() < 1e-9 || (p[i] - b.max[i]).abs() < 1e-9);
                prop_assert!(on_face && (0..3).all(|i| p[i] > b.min[i] - 1e-9 && p[i] < b.max[i] + 1e-9));
            }
        }
    }
}
