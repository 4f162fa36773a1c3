//! Twice-differentiable ground-truth trajectory through timed waypoints.

use crate::SimError;
use canyon_rtk::frames::RigidTransform;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
    /// Heading about the up axis, counter-clockwise from east (deg).
    pub yaw_deg: f64,
}

/// Natural cubic spline in one variable.
#[derive(Debug, Clone)]
struct Spline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl Spline {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior second derivatives (Thomas algorithm)
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                let a = h0;
                let b = 2.0 * (h0 + h1);
                let r = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let denom = b - a * c[i - 1];
                c[i] = h1 / denom;
                d[i] = (r - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    /// Value and first two derivatives; `t` is clamped to the knot range.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.t.len();
        if n == 1 {
            return (self.y[0], 0.0, 0.0);
        }
        let t = t.clamp(self.t[0], self.t[n - 1]);
        let i = self.t.partition_point(|&k| k <= t).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        let (m0, m1, y0, y1) = (self.m[i], self.m[i + 1], self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }
}

/// Kinematic truth at one instant (ENU, body = level frame rotated by yaw).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl TruthSample {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw)
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.rotation(), self.position)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    axes: [Spline; 4],
    t0: f64,
    t1: f64,
}

impl Trajectory {
    pub fn new(waypoints: &[Waypoint]) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::InvalidScenario("trajectory needs at least one waypoint".into()));
        }
        if waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(SimError::InvalidScenario("waypoint times must be strictly increasing".into()));
        }
        let t: Vec<f64> = waypoints.iter().map(|w| w.t).collect();
        let mut yaw: Vec<f64> = waypoints.iter().map(|w| w.yaw_deg.to_radians()).collect();
        for i in 1..yaw.len() {
            let d = (yaw[i] - yaw[i - 1] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            yaw[i] = yaw[i - 1] + d;
        }
        let axis = |k: usize| Spline::new(&t, &waypoints.iter().map(|w| w.position[k]).collect::<Vec<_>>());
        Ok(Self {
            axes: [axis(0), axis(1), axis(2), Spline::new(&t, &yaw)],
            t0: t[0],
            t1: t[t.len() - 1],
        })
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t1
    }

    pub fn at(&self, t: f64) -> TruthSample {
        let e: Vec<(f64, f64, f64)> = self.axes.iter().map(|s| s.eval(t)).collect();
        TruthSample {
            t,
            position: Vector3::new(e[0].0, e[1].0, e[2].0),
            velocity: Vector3::new(e[0].1, e[1].1, e[2].1),
            acceleration: Vector3::new(e[0].2, e[1].2, e[2].2),
            yaw: e[3].0,
            yaw_rate: e[3].1,
        }
    }
}
