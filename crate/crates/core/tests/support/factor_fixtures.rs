//! Random, well-conditioned configurations for every factor family.

use canyon_rtk::fgo::factors::{
    AbsolutePositionFactor, BetweenFactor, ConstantAmbiguityFactor, DdCarrierFactor, DdPseudorangeFactor,
    DopplerFactor, ImuFactor, LinearFactor, PriorFactor, VsFactor,
};
use canyon_rtk::fgo::graph::{Factor, FactorGraph, Values, Var, VarKey};
use canyon_rtk::fgo::interp::EpochLink;
use canyon_rtk::fgo::marginal::marginalize;
use canyon_rtk::fgo::NavState;
use canyon_rtk::frames::{direction_from_elevation_azimuth, GeodeticOrigin, RigidTransform};
use canyon_rtk::gnss::{geometric_dd, Constellation, DdObservation, SatId, SatObs};
use canyon_rtk::imu::{self, gravity_enu, ImuNoise, ImuSample};
use canyon_rtk::virtual_sat::PlanarLandmark;
use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

pub fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

pub fn rot(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(-3.1..3.1),
    )
}

pub fn nav(rng: &mut ChaCha8Rng, id: usize, t: f64) -> NavState {
    NavState {
        id,
        t,
        p: v3(rng, 100.0),
        q: rot(rng),
        v: v3(rng, 10.0),
        ba: v3(rng, 0.05),
        bg: v3(rng, 0.005),
    }
}

fn sat(rng: &mut ChaCha8Rng, origin: &GeodeticOrigin) -> Vector3<f64> {
    let d = direction_from_elevation_azimuth(rng.random_range(0.2..1.5), rng.random_range(0.0..6.28));
    origin.enu_to_ecef(&(d * 2.02e7))
}

fn link(rng: &mut ChaCha8Rng, origin: GeodeticOrigin) -> EpochLink {
    EpochLink {
        k0: 0,
        k1: 1,
        alpha: rng.random_range(0.0..1.0),
        lever_arm: v3(rng, 1.0),
        origin,
        base_pos: origin.enu_to_ecef(&v3(rng, 500.0)),
    }
}

fn dd(rng: &mut ChaCha8Rng, origin: &GeodeticOrigin, l: &EpochLink) -> DdObservation {
    let mut d = DdObservation {
        sat: SatId::gps(3),
        master: SatId::gps(9),
        pseudorange: 0.0,
        carrier: 0.0,
        wavelength: Constellation::Gps.wavelength(),
        sigma_rho: rng.random_range(0.3..3.0),
        sigma_psi: 0.0,
        sat_pos: sat(rng, origin),
        master_pos: sat(rng, origin),
        lock_lost: false,
    };
    d.sigma_psi = d.sigma_rho / 100.0;
    let g = geometric_dd(&d, &origin.enu_to_ecef(&v3(rng, 100.0)), &l.base_pos);
    d.pseudorange = g + rng.random_range(-2.0..2.0);
    d.carrier = g / d.wavelength + rng.random_range(-30.0..30.0);
    d
}

fn two_navs(rng: &mut ChaCha8Rng) -> Values {
    let mut v = Values::new();
    v.insert(VarKey::Nav(0), Var::Nav(nav(rng, 0, 0.0)));
    v.insert(VarKey::Nav(1), Var::Nav(nav(rng, 1, 1.0)));
    v
}

fn imu_delta(rng: &mut ChaCha8Rng) -> imu::PreintegratedDelta {
    let w = v3(rng, 0.3);
    let a = v3(rng, 2.0) + Vector3::new(0.0, 0.0, 9.81);
    let samples: Vec<ImuSample> = (0..=50)
        .map(|i| ImuSample {
            t: i as f64 * 0.02,
            gyro: w + v3(rng, 0.01),
            accel: a + v3(rng, 0.1),
        })
        .collect();
    imu::integrate(&samples, &v3(rng, 0.02), &v3(rng, 0.002), &ImuNoise::default()).unwrap()
}

/// One random instance of every factor family with values at which to test it.
pub fn all_families(rng: &mut ChaCha8Rng) -> Vec<(Box<dyn Factor>, Values)> {
    let origin = GeodeticOrigin::from_degrees(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0), 0.0).unwrap();
    let mut out: Vec<(Box<dyn Factor>, Values)> = Vec::new();

    let v = two_navs(rng);
    let mean = Var::Nav(nav(rng, 0, 0.0));
    let sig: Vec<f64> = (0..15).map(|_| rng.random_range(0.01..1.0)).collect();
    out.push((Box::new(PriorFactor::new(VarKey::Nav(0), mean, &sig)), v));

    let mut v = two_navs(rng);
    let lm = PlanarLandmark::new(v3(rng, 50.0), v3(rng, 50.0), v3(rng, 50.0)).unwrap();
    let ext = RigidTransform::new(rot(rng), v3(rng, 1.0));
    out.push((Box::new(VsFactor::new(1, v3(rng, 30.0), ext, lm, 0.1).unwrap()), v.clone()));

    let d = imu_delta(rng);
    let x0 = nav(rng, 0, 0.0);
    let g = gravity_enu(9.81);
    let mut x1 = imu::propagate(&x0, &d, &g).retract(&nalgebra::SVector::<f64, 15>::from_fn(|_, _| rng.random_range(-0.05..0.05)));
    x1.id = 1;
    v.insert(VarKey::Nav(0), Var::Nav(x0));
    v.insert(VarKey::Nav(1), Var::Nav(x1));
    out.push((Box::new(ImuFactor::new(0, 1, d, g)), v));

    let v = two_navs(rng);
    let l = link(rng, origin);
    let ddo = dd(rng, &origin, &l);
    out.push((Box::new(DdPseudorangeFactor { link: l.clone(), dd: ddo.clone() }), v.clone()));

    let amb = VarKey::Ambiguity { epoch: 0, sat: ddo.sat };
    let mut va = v.clone();
    va.insert(amb, Var::Scalar(rng.random_range(-40.0..40.0)));
    out.push((
        Box::new(DdCarrierFactor {
            link: l.clone(),
            dd: ddo.clone(),
            ambiguity: amb,
        }),
        va,
    ));

    let prev = VarKey::Ambiguity { epoch: 1, sat: ddo.sat };
    let cur = VarKey::Ambiguity { epoch: 2, sat: ddo.sat };
    let mut vc = Values::new();
    vc.insert(prev, Var::Scalar(rng.random_range(-40.0..40.0)));
    vc.insert(cur, Var::Scalar(rng.random_range(-40.0..40.0)));
    out.push((
        Box::new(ConstantAmbiguityFactor {
            previous: prev,
            current: cur,
            sigma_cycles: 0.03,
        }),
        vc,
    ));

    let obs = SatObs {
        sat: SatId::beidou(7),
        time: 0.5,
        pseudorange: 2.2e7,
        carrier: 0.0,
        doppler: rng.random_range(-3000.0..3000.0),
        snr: 40.0,
        wavelength: Constellation::BeiDou.wavelength(),
        sat_pos: sat(rng, &origin),
        sat_vel: v3(rng, 3000.0),
        sat_clock_bias: 1e-5,
        sat_clock_drift: rng.random_range(-1e-10..1e-10),
        lock_lost: false,
    };
    let mut vd = v.clone();
    vd.insert(VarKey::ClockDrift(0), Var::Scalar(rng.random_range(-30.0..30.0)));
    out.push((
        Box::new(DopplerFactor {
            link: l,
            obs,
            clock_drift: VarKey::ClockDrift(0),
            sigma: 0.5,
        }),
        vd,
    ));

    // a marginal prior left by folding an IMU factor and a prior into the second state
    let mut g2 = FactorGraph::new();
    let d = imu_delta(rng);
    let x0 = nav(rng, 0, 0.0);
    let mut x1 = imu::propagate(&x0, &d, &g);
    x1.id = 1;
    let mut vm = Values::new();
    vm.insert(VarKey::Nav(0), Var::Nav(x0.clone()));
    vm.insert(VarKey::Nav(1), Var::Nav(x1.clone()));
    g2.add(PriorFactor::new(VarKey::Nav(0), Var::Nav(x0), &[0.1; 15]));
    g2.add(ImuFactor::new(0, 1, d, g));
    let prior = marginalize(&mut g2, &vm, &BTreeSet::from([VarKey::Nav(0)])).unwrap().unwrap();
    let mut vp = Values::new();
    let x1p = x1.retract(&nalgebra::SVector::<f64, 15>::from_fn(|_, _| rng.random_range(-0.1..0.1)));
    vp.insert(VarKey::Nav(1), Var::Nav(x1p));
    out.push((Box::new(prior), vp));

    let mut vb = Values::new();
    vb.insert(VarKey::Pose(0), Var::Pose(RigidTransform::new(rot(rng), v3(rng, 100.0))));
    vb.insert(VarKey::Pose(1), Var::Pose(RigidTransform::new(rot(rng), v3(rng, 100.0))));
    let meas = RigidTransform::new(rot(rng), v3(rng, 10.0));
    out.push((Box::new(BetweenFactor::new(0, 1, meas, 0.02, 0.002)), vb.clone()));

    let s = Matrix3::from_fn(|i, j| if i <= j { rng.random_range(0.5..2.0) } else { 0.0 });
    out.push((
        Box::new(AbsolutePositionFactor {
            i: 0,
            j: 1,
            alpha: rng.random_range(0.0..1.0),
            measured: v3(rng, 100.0),
            sqrt_info: s,
        }),
        vb,
    ));

    let mut vl = Values::new();
    vl.insert(VarKey::Vector(0), Var::Vector(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))));
    vl.insert(VarKey::Vector(1), Var::Vector(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))));
    out.push((
        Box::new(LinearFactor::new(
            vec![VarKey::Vector(0), VarKey::Vector(1)],
            vec![
                DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)),
                DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)),
            ],
            DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)),
        )),
        vl,
    ));
    out
}
