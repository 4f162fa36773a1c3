//! On-manifold IMU preintegration between keyframes.
//!
//! Tangent ordering throughout is `[p, θ, v, b_a, b_g]`, rotations perturbed on the right.

use crate::fgo::NavState;
use crate::so3;
use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;

pub const P: usize = 0;
pub const TH: usize = 3;
pub const V: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

pub const DEFAULT_GRAVITY: f64 = 9.81;

pub fn gravity_enu(magnitude: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -magnitude)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImuError {
    #[error("no IMU samples in batch")]
    EmptyBatch,
    #[error("preintegration interval has zero duration")]
    ZeroDuration,
    #[error("IMU timestamps not increasing at t = {0}")]
    NonMonotonic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate in the body frame (rad/s).
    pub gyro: Vector3<f64>,
    /// Specific force in the body frame (m/s²).
    pub accel: Vector3<f64>,
}

impl ImuSample {
    fn lerp(&self, other: &ImuSample, t: f64) -> ImuSample {
        let a = if other.t > self.t {
            (t - self.t) / (other.t - self.t)
        } else {
            0.0
        };
        ImuSample {
            t,
            gyro: self.gyro + (other.gyro - self.gyro) * a,
            accel: self.accel + (other.accel - self.accel) * a,
        }
    }
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    /// m/s²/√Hz
    pub accel_noise: f64,
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s³/√Hz
    pub accel_random_walk: f64,
    /// rad/s²/√Hz
    pub gyro_random_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_noise: 0.02,
            gyro_noise: 0.002,
            accel_random_walk: 5e-4,
            gyro_random_walk: 2e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedDelta {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dq: UnitQuaternion<f64>,
    pub covariance: Matrix15,
    /// Accumulated error-state transition; its bias columns are the bias Jacobians.
    pub jacobian: Matrix15,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub duration: f64,
}

impl PreintegratedDelta {
    fn empty(accel_bias: Vector3<f64>, gyro_bias: Vector3<f64>) -> Self {
        Self {
            dp: Vector3::zeros(),
            dv: Vector3::zeros(),
            dq: UnitQuaternion::identity(),
            covariance: Matrix15::zeros(),
            jacobian: Matrix15::identity(),
            accel_bias,
            gyro_bias,
            duration: 0.0,
        }
    }

    fn block(&self, row: usize, col: usize) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(row, col).into_owned()
    }

    /// Deltas corrected to first order for new bias estimates.
    pub fn corrected(&self, ba: &Vector3<f64>, bg: &Vector3<f64>) -> (Vector3<f64>, UnitQuaternion<f64>, Vector3<f64>) {
        let dba = ba - self.accel_bias;
        let dbg = bg - self.gyro_bias;
        let dp = self.dp + self.block(P, BA) * dba + self.block(P, BG) * dbg;
        let dv = self.dv + self.block(V, BA) * dba + self.block(V, BG) * dbg;
        let dq = self.dq * so3::exp(&(self.block(TH, BG) * dbg));
        (dp, dq, dv)
    }

    fn step(&mut self, s0: &ImuSample, s1: &ImuSample, noise: &ImuNoise) {
        let dt = s1.t - s0.t;
        if dt <= 0.0 {
            return;
        }
        let w = 0.5 * (s0.gyro + s1.gyro) - self.gyro_bias;
        let a0 = s0.accel - self.accel_bias;
        let a1 = s1.accel - self.accel_bias;
        let r0 = self.dq.to_rotation_matrix().into_inner();
        let e = so3::exp(&(w * dt));
        let dq1 = self.dq * e;
        let r1 = dq1.to_rotation_matrix().into_inner();
        let acc = 0.5 * (r0 * a0 + r1 * a1);

        let et = e.to_rotation_matrix().into_inner().transpose();
        let jr = so3::right_jacobian(&(w * dt));
        let da_dth = -0.5 * (r0 * so3::skew(&a0) + r1 * so3::skew(&a1) * et);
        let da_dbg = 0.5 * r1 * so3::skew(&a1) * jr * dt;
        let da_dba = -0.5 * (r0 + r1);

        let i3 = Matrix3::identity();
        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(P, TH).copy_from(&(0.5 * dt * dt * da_dth));
        f.fixed_view_mut::<3, 3>(P, V).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(P, BA).copy_from(&(0.5 * dt * dt * da_dba));
        f.fixed_view_mut::<3, 3>(P, BG).copy_from(&(0.5 * dt * dt * da_dbg));
        f.fixed_view_mut::<3, 3>(TH, TH).copy_from(&et);
        f.fixed_view_mut::<3, 3>(TH, BG).copy_from(&(-jr * dt));
        f.fixed_view_mut::<3, 3>(V, TH).copy_from(&(dt * da_dth));
        f.fixed_view_mut::<3, 3>(V, BA).copy_from(&(dt * da_dba));
        f.fixed_view_mut::<3, 3>(V, BG).copy_from(&(dt * da_dbg));

        // white measurement noise enters exactly where the biases do
        let mut g = SMatrix::<f64, 15, 6>::zeros();
        g.fixed_view_mut::<3, 3>(P, 0).copy_from(&(-0.5 * dt * dt * da_dba));
        g.fixed_view_mut::<3, 3>(P, 3).copy_from(&(-0.5 * dt * dt * da_dbg));
        g.fixed_view_mut::<3, 3>(TH, 3).copy_from(&(jr * dt));
        g.fixed_view_mut::<3, 3>(V, 0).copy_from(&(-dt * da_dba));
        g.fixed_view_mut::<3, 3>(V, 3).copy_from(&(-dt * da_dbg));
        let mut qd = SMatrix::<f64, 6, 6>::zeros();
        for k in 0..3 {
            qd[(k, k)] = noise.accel_noise.powi(2) / dt;
            qd[(k + 3, k + 3)] = noise.gyro_noise.powi(2) / dt;
        }
        let mut cov = f * self.covariance * f.transpose() + g * qd * g.transpose();
        for k in 0..3 {
            cov[(BA + k, BA + k)] += noise.accel_random_walk.powi(2) * dt;
            cov[(BG + k, BG + k)] += noise.gyro_random_walk.powi(2) * dt;
        }
        self.covariance = 0.5 * (cov + cov.transpose());
        self.jacobian = f * self.jacobian;

        self.dp += self.dv * dt + 0.5 * acc * dt * dt;
        self.dv += acc * dt;
        self.dq = dq1;
        self.duration += dt;
    }
}

/// Midpoint preintegration over consecutive samples, from the first sample's time to the last.
pub fn integrate(
    samples: &[ImuSample],
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    noise: &ImuNoise,
) -> Result<PreintegratedDelta, ImuError> {
    if samples.is_empty() {
        return Err(ImuError::EmptyBatch);
    }
    let mut d = PreintegratedDelta::empty(*accel_bias, *gyro_bias);
    for w in samples.windows(2) {
        if w[1].t <= w[0].t {
            return Err(ImuError::NonMonotonic(w[1].t));
        }
        d.step(&w[0], &w[1], noise);
    }
    if d.duration <= 0.0 {
        return Err(ImuError::ZeroDuration);
    }
    Ok(d)
}

/// Samples of a time-sorted stream restricted to `[t0, t1]`, with the endpoints interpolated.
pub fn samples_between(stream: &[ImuSample], t0: f64, t1: f64) -> Vec<ImuSample> {
    if stream.is_empty() || t1 <= t0 {
        return Vec::new();
    }
    let at = |t: f64| -> ImuSample {
        let k = stream.partition_point(|s| s.t <= t);
        match k {
            0 => ImuSample { t, ..stream[0] },
            k if k == stream.len() => ImuSample {
                t,
                ..stream[k - 1]
            },
            k => stream[k - 1].lerp(&stream[k], t),
        }
    };
    let mut out = vec![at(t0)];
    out.extend(stream.iter().filter(|s| s.t > t0 && s.t < t1).copied());
    out.push(at(t1));
    out
}

/// Predicts the state at the end of the interval.
pub fn propagate(x: &NavState, d: &PreintegratedDelta, gravity: &Vector3<f64>) -> NavState {
    let (dp, dq, dv) = d.corrected(&x.ba, &x.bg);
    let t = d.duration;
    let r = x.q.to_rotation_matrix();
    NavState {
        id: x.id + 1,
        t: x.t + t,
        p: x.p + x.v * t + 0.5 * gravity * t * t + r * dp,
        q: x.q * dq,
        v: x.v + gravity * t + r * dv,
        ba: x.ba,
        bg: x.bg,
    }
}

/// 15-vector residual between consecutive states.
pub fn residual(d: &PreintegratedDelta, xi: &NavState, xj: &NavState, gravity: &Vector3<f64>) -> Vector15 {
    let (dp, dq, dv) = d.corrected(&xi.ba, &xi.bg);
    let t = d.duration;
    let rit = xi.q.to_rotation_matrix().transpose();
    let mut r = Vector15::zeros();
    r.fixed_rows_mut::<3>(P)
        .copy_from(&(rit * (xj.p - xi.p - xi.v * t - 0.5 * gravity * t * t) - dp));
    r.fixed_rows_mut::<3>(TH)
        .copy_from(&so3::log(&(dq.inverse() * xi.q.inverse() * xj.q)));
    r.fixed_rows_mut::<3>(V).copy_from(&(rit * (xj.v - xi.v - gravity * t) - dv));
    r.fixed_rows_mut::<3>(BA).copy_from(&(xj.ba - xi.ba));
    r.fixed_rows_mut::<3>(BG).copy_from(&(xj.bg - xi.bg));
    r
}

/// Jacobians of [`residual`] with respect to the tangent spaces of `xi` and `xj`.
pub fn residual_jacobians(
    d: &PreintegratedDelta,
    xi: &NavState,
    xj: &NavState,
    gravity: &Vector3<f64>,
) -> (Matrix15, Matrix15) {
    let (_, dq, _) = d.corrected(&xi.ba, &xi.bg);
    let t = d.duration;
    let ri = xi.q.to_rotation_matrix().into_inner();
    let rj = xj.q.to_rotation_matrix().into_inner();
    let rit = ri.transpose();
    let rth = so3::log(&(dq.inverse() * xi.q.inverse() * xj.q));
    let jr_inv = so3::right_jacobian_inverse(&rth);
    let jq_bg = d.block(TH, BG);
    let dbg = xi.bg - d.gyro_bias;

    let mut ji = Matrix15::zeros();
    let mut jj = Matrix15::zeros();
    let pos = rit * (xj.p - xi.p - xi.v * t - 0.5 * gravity * t * t);
    let vel = rit * (xj.v - xi.v - gravity * t);

    ji.fixed_view_mut::<3, 3>(P, P).copy_from(&-rit);
    ji.fixed_view_mut::<3, 3>(P, TH).copy_from(&so3::skew(&pos));
    ji.fixed_view_mut::<3, 3>(P, V).copy_from(&(-rit * t));
    ji.fixed_view_mut::<3, 3>(P, BA).copy_from(&-d.block(P, BA));
    ji.fixed_view_mut::<3, 3>(P, BG).copy_from(&-d.block(P, BG));
    jj.fixed_view_mut::<3, 3>(P, P).copy_from(&rit);

    ji.fixed_view_mut::<3, 3>(TH, TH).copy_from(&(-jr_inv * rj.transpose() * ri));
    let e_t = so3::exp(&rth).to_rotation_matrix().into_inner().transpose();
    ji.fixed_view_mut::<3, 3>(TH, BG)
        .copy_from(&(-jr_inv * e_t * so3::right_jacobian(&(jq_bg * dbg)) * jq_bg));
    jj.fixed_view_mut::<3, 3>(TH, TH).copy_from(&jr_inv);

    ji.fixed_view_mut::<3, 3>(V, TH).copy_from(&so3::skew(&vel));
    ji.fixed_view_mut::<3, 3>(V, V).copy_from(&-rit);
    ji.fixed_view_mut::<3, 3>(V, BA).copy_from(&-d.block(V, BA));
    ji.fixed_view_mut::<3, 3>(V, BG).copy_from(&-d.block(V, BG));
    jj.fixed_view_mut::<3, 3>(V, V).copy_from(&rit);

    for k in 0..6 {
        ji[(BA + k, BA + k)] = -1.0;
        jj[(BA + k, BA + k)] = 1.0;
    }
    (ji, jj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn constant(t1: f64, n: usize, gyro: Vector3<f64>, accel: Vector3<f64>) -> Vec<ImuSample> {
        (0..=n)
            .map(|k| ImuSample {
                t: t1 * k as f64 / n as f64,
                gyro,
                accel,
            })
            .collect()
    }

    /// Smooth body motion: world-frame accel and body rate as closed forms.
    struct Motion;
    impl Motion {
        fn rate(t: f64) -> Vector3<f64> {
            Vector3::new(0.1 * (1.3 * t).sin(), -0.05 * t.cos(), 0.3 + 0.2 * (0.7 * t).sin())
        }
        fn accel_world(t: f64) -> Vector3<f64> {
            Vector3::new(0.5 * (0.9 * t).cos(), 0.3 * (1.7 * t).sin(), 0.1 * (0.4 * t).cos())
        }
    }

    /// Fine-step world-frame integration of the motion; yields the sample stream and the end state.
    fn simulate(t1: f64, rate_hz: f64, sub: usize, x0: &NavState, g: &Vector3<f64>) -> (Vec<ImuSample>, NavState) {
        let n = (t1 * rate_hz).round() as usize;
        let h = 1.0 / (rate_hz * sub as f64);
        let (mut p, mut v, mut q) = (x0.p, x0.v, x0.q);
        let mut samples = Vec::new();
        let mut t = 0.0;
        for k in 0..=n * sub {
            if k % sub == 0 {
                samples.push(ImuSample {
                    t,
                    gyro: Motion::rate(t) + x0.bg,
                    accel: q.inverse() * (Motion::accel_world(t) - g) + x0.ba,
                });
            }
            if k == n * sub {
                break;
            }
            // RK-style midpoint in world frame
            let am = Motion::accel_world(t + 0.5 * h);
            p += v * h + 0.5 * am * h * h;
            v += am * h;
            q = q * so3::exp(&(Motion::rate(t + 0.5 * h) * h));
            t = (k + 1) as f64 * h;
        }
        (
            samples,
            NavState {
                p,
                v,
                q,
                t,
                id: 1,
                ..*x0
            },
        )
    }

    fn x0() -> NavState {
        NavState {
            id: 0,
            t: 0.0,
            p: Vector3::new(1.0, 2.0, 3.0),
            q: UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
            v: Vector3::new(5.0, 1.0, 0.0),
            ba: Vector3::new(0.02, -0.01, 0.03),
            bg: Vector3::new(0.001, 0.002, -0.003),
        }
    }

    #[test]
    fn constant_acceleration() {
        let s = constant(1.0, 10, Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let d = integrate(&s, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default()).unwrap();
        assert_relative_eq!(d.dv, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(d.dp, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
        assert!(d.dq.angle() < 1e-12);
    }

    #[test]
    fn pure_yaw() {
        let s = constant(1.0, 7, Vector3::new(0.0, 0.0, FRAC_PI_2), Vector3::zeros());
        let d = integrate(&s, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default()).unwrap();
        let expect = UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2);
        assert!(d.dq.angle_to(&expect) < 1e-12);
    }

    #[test]
    fn empty_and_degenerate_batches() {
        let z = Vector3::zeros();
        assert_eq!(integrate(&[], &z, &z, &ImuNoise::default()), Err(ImuError::EmptyBatch));
        let one = constant(0.0, 1, z, z);
        assert_eq!(integrate(&one[..1], &z, &z, &ImuNoise::default()), Err(ImuError::ZeroDuration));
    }

    #[test]
    fn matches_fine_step_reintegration() {
        let g = gravity_enu(DEFAULT_GRAVITY);
        let x = x0();
        // ground truth from 1 kHz world-frame integration, IMU at 100 Hz
        let (samples, xj) = simulate(1.0, 1000.0, 20, &x, &g);
        let d = integrate(&samples, &x.ba, &x.bg, &ImuNoise::default()).unwrap();
        let r = residual(&d, &x, &xj, &g);
        assert!(r.norm() < 1e-6, "{}", r.norm());
        let sparse: Vec<_> = samples.iter().step_by(10).copied().collect();
        let coarse = integrate(&sparse, &x.ba, &x.bg, &ImuNoise::default()).unwrap();
        assert!(residual(&coarse, &x, &xj, &g).norm() < 1e-4);
    }

    #[test]
    fn residual_zero_at_propagated_state() {
        let g = gravity_enu(DEFAULT_GRAVITY);
        let x = x0();
        let (samples, _) = simulate(1.0, 100.0, 1, &x, &g);
        let d = integrate(&samples, &x.ba, &x.bg, &ImuNoise::default()).unwrap();
        let xj = propagate(&x, &d, &g);
        assert!(residual(&d, &x, &xj, &g).norm() < 1e-12);
    }

    #[test]
    fn position_perturbation_maps_through_rotation() {
        let g = gravity_enu(DEFAULT_GRAVITY);
        let x = x0();
        let (samples, _) = simulate(1.0, 100.0, 1, &x, &g);
        let d = integrate(&samples, &x.ba, &x.bg, &ImuNoise::default()).unwrap();
        let xj = propagate(&x, &d, &g);
        let mut moved = xj.clone();
        moved.p.x += 1.0;
        let dr = residual(&d, &x, &moved, &g) - residual(&d, &x, &xj, &g);
        let expect = x.q.inverse() * Vector3::x();
        assert_relative_eq!(dr.fixed_rows::<3>(P).into_owned(), expect, epsilon = 1e-12);
    }

    #[test]
    fn bias_correction_is_second_order() {
        let g = gravity_enu(DEFAULT_GRAVITY);
        let x = x0();
        let (samples, _) = simulate(1.0, 100.0, 1, &x, &g);
        let d = integrate(&samples, &x.ba, &x.bg, &ImuNoise::default()).unwrap();
        let dir_a = Vector3::new(0.3, -0.5, 0.8);
        let dir_g = Vector3::new(-0.6, 0.2, 0.4);
        let err = |eps: f64| {
            let ba = x.ba + dir_a * eps;
            let bg = x.bg + dir_g * eps;
            let re = integrate(&samples, &ba, &bg, &ImuNoise::default()).unwrap();
            let (dp, dq, dv) = d.corrected(&ba, &bg);
            (re.dp - dp).norm() + (re.dv - dv).norm() + re.dq.angle_to(&dq)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        assert!(e1 < 1e-5, "{e1}");
        // halving the perturbation quarters the error
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let g = gravity_enu(DEFAULT_GRAVITY);
        let x = x0();
        let (samples, _) = simulate(0.5, 100.0, 1, &x, &g);
        let d = integrate(&samples, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default()).unwrap();
        let mut xj = propagate(&x, &d, &g);
        xj.p += Vector3::new(0.3, -0.2, 0.1);
        xj.q = xj.q * so3::exp(&Vector3::new(0.05, 0.02, -0.04));
        xj.bg += Vector3::new(1e-3, 0.0, 2e-3);
        let (ji, jj) = residual_jacobians(&d, &x, &xj, &g);
        let h = 1e-6;
        for k in 0..15 {
            let mut e = Vector15::zeros();
            e[k] = h;
            let num_i = (residual(&d, &x.retract(&e), &xj, &g) - residual(&d, &x.retract(&-e), &xj, &g)) / (2.0 * h);
            let num_j = (residual(&d, &x, &xj.retract(&e), &g) - residual(&d, &x, &xj.retract(&-e), &g)) / (2.0 * h);
            assert_relative_eq!(num_i, ji.column(k).into_owned(), epsilon = 1e-6, max_relative = 1e-5);
            assert_relative_eq!(num_j, jj.column(k).into_owned(), epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn samples_between_interpolates_endpoints() {
        let s = constant(1.0, 10, Vector3::zeros(), Vector3::zeros());
        let s: Vec<_> = s
            .into_iter()
            .map(|x| ImuSample {
                accel: Vector3::new(x.t, 0.0, 0.0),
                ..x
            })
            .collect();
        let w = samples_between(&s, 0.25, 0.55);
        assert_eq!(w.first().unwrap().t, 0.25);
        assert_relative_eq!(w.first().unwrap().accel.x, 0.25, epsilon = 1e-12);
        assert_eq!(w.last().unwrap().t, 0.55);
        assert_eq!(w.len(), 5);
    }

    proptest! {
        #[test]
        fn covariance_trace_grows(n in 2usize..60) {
            let s = constant(n as f64 * 0.01, n, Vector3::new(0.1, 0.0, 0.2), Vector3::new(0.0, 0.5, 9.81));
            let z = Vector3::zeros();
            let mut prev = 0.0;
            for k in 2..=s.len() {
                let d = integrate(&s[..k], &z, &z, &ImuNoise::default()).unwrap();
                let tr = d.covariance.trace();
                prop_assert!(tr > prev);
                prev = tr;
                let eig = d.covariance.symmetric_eigenvalues();
                prop_assert!(eig.min() > -1e-15 * eig.max());
            }
        }
    }
}
