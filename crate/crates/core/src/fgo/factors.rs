use super::graph::{Factor, FactorFamily, FgoError, Linearization, Values, Var, VarKey};
use super::interp::{EpochLink, Jac3x15};
use crate::frames::{RigidTransform, SPEED_OF_LIGHT};
use crate::gnss::{self, DdObservation, SatObs};
use crate::imu::{self, Matrix15, PreintegratedDelta, P, TH};
use crate::so3;
use crate::virtual_sat::PlanarLandmark;
use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, SMatrix, Vector3};

fn dvec1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn row15(r: &RowVector3<f64>, j: &Jac3x15) -> DMatrix<f64> {
    let m = r * j;
    DMatrix::from_row_slice(1, 15, m.as_slice())
}

/// Upper-triangular `L⁻¹` with `Σ = L Lᵀ`, so that `L⁻¹ r` is whitened.
pub fn sqrt_information(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = cov.diagonal().amax().max(1e-300);
    let reg = cov + DMatrix::identity(n, n) * (1e-12 * scale);
    let l = reg.cholesky()?.l();
    l.try_inverse()
}

/// Gaussian prior on any variable: `S (μ ⊟ x)`.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub key: VarKey,
    pub mean: Var,
    pub sqrt_info: DMatrix<f64>,
}

impl PriorFactor {
    pub fn new(key: VarKey, mean: Var, sigmas: &[f64]) -> Self {
        let s = DMatrix::from_diagonal(&DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| 1.0 / s)));
        Self {
            key,
            mean,
            sqrt_info: s,
        }
    }
}

impl Factor for PriorFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::Prior
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![self.key]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        Ok(&self.sqrt_info * self.mean.local(values.var(self.key)?))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let x = values.var(self.key)?;
        Ok(Linearization {
            residual: &self.sqrt_info * self.mean.local(x),
            jacobians: vec![&self.sqrt_info * self.mean.local_jacobian(x)],
        })
    }
}

#[derive(Debug, Clone)]
pub struct ImuFactor {
    pub i: usize,
    pub j: usize,
    pub delta: PreintegratedDelta,
    pub gravity: Vector3<f64>,
    sqrt_info: Matrix15,
}

impl ImuFactor {
    pub fn new(i: usize, j: usize, delta: PreintegratedDelta, gravity: Vector3<f64>) -> Self {
        let cov = DMatrix::from_column_slice(15, 15, delta.covariance.as_slice());
        let s = sqrt_information(&cov).expect("preintegration covariance is positive definite");
        Self {
            i,
            j,
            delta,
            gravity,
            sqrt_info: Matrix15::from_column_slice(s.as_slice()),
        }
    }
}

impl Factor for ImuFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::Imu
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Nav(self.i), VarKey::Nav(self.j)]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let xi = values.nav(VarKey::Nav(self.i))?;
        let xj = values.nav(VarKey::Nav(self.j))?;
        let r = self.sqrt_info * imu::residual(&self.delta, xi, xj, &self.gravity);
        Ok(DVector::from_column_slice(r.as_slice()))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let xi = values.nav(VarKey::Nav(self.i))?;
        let xj = values.nav(VarKey::Nav(self.j))?;
        let r = self.sqrt_info * imu::residual(&self.delta, xi, xj, &self.gravity);
        let (ji, jj) = imu::residual_jacobians(&self.delta, xi, xj, &self.gravity);
        let f = |m: Matrix15| DMatrix::from_column_slice(15, 15, (self.sqrt_info * m).as_slice());
        Ok(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![f(ji), f(jj)],
        })
    }
}

/// Signed point-to-plane distance of one LiDAR point, on a single keyframe.
#[derive(Debug, Clone)]
pub struct VsFactor {
    pub key: usize,
    pub point_lidar: Vector3<f64>,
    pub extrinsic: RigidTransform,
    pub landmark: PlanarLandmark,
    normal: Vector3<f64>,
    /// Effective standard deviation after weighting (m).
    pub sigma: f64,
}

impl VsFactor {
    pub fn new(
        key: usize,
        point_lidar: Vector3<f64>,
        extrinsic: RigidTransform,
        landmark: PlanarLandmark,
        sigma: f64,
    ) -> Result<Self, crate::virtual_sat::VsError> {
        let normal = landmark.normal()?;
        Ok(Self {
            key,
            point_lidar,
            extrinsic,
            landmark,
            normal,
            sigma,
        })
    }

    fn body_point(&self) -> Vector3<f64> {
        self.extrinsic.transform_point(&self.point_lidar)
    }
}

impl Factor for VsFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::VirtualSatellite
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Nav(self.key)]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let x = values.nav(VarKey::Nav(self.key))?;
        let p = x.q * self.body_point() + x.p;
        Ok(dvec1((p - self.landmark.a).dot(&self.normal) / self.sigma))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let x = values.nav(VarKey::Nav(self.key))?;
        let q = self.body_point();
        let p = x.q * q + x.p;
        let mut j = DMatrix::zeros(1, 15);
        let nt = self.normal.transpose() / self.sigma;
        j.view_mut((0, P), (1, 3)).copy_from(&nt);
        j.view_mut((0, TH), (1, 3)).copy_from(&(-nt * x.rotation() * so3::skew(&q)));
        Ok(Linearization {
            residual: dvec1((p - self.landmark.a).dot(&self.normal) / self.sigma),
            jacobians: vec![j],
        })
    }
}

#[derive(Debug, Clone)]
pub struct DdPseudorangeFactor {
    pub link: EpochLink,
    pub dd: DdObservation,
}

impl DdPseudorangeFactor {
    fn range_residual(&self, baseline: &Vector3<f64>) -> f64 {
        self.dd.pseudorange - gnss::geometric_dd_baseline(&self.dd, &self.link.base_pos, baseline)
    }
}

impl Factor for DdPseudorangeFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::DdPseudorange
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Nav(self.link.k0), VarKey::Nav(self.link.k1)]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        Ok(dvec1(self.range_residual(&self.link.baseline(x0, x1)) / self.dd.sigma_rho))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        let k = self.link.kinematics(x0, x1);
        let s = self.dd.sigma_rho;
        let g = -gnss::geometric_dd_gradient(&self.dd, &k.p_ec) / s;
        Ok(Linearization {
            residual: dvec1(self.range_residual(&k.baseline) / s),
            jacobians: vec![row15(&g, &k.dp_dx0), row15(&g, &k.dp_dx1)],
        })
    }
}

#[derive(Debug, Clone)]
pub struct DdCarrierFactor {
    pub link: EpochLink,
    pub dd: DdObservation,
    pub ambiguity: VarKey,
}

impl DdCarrierFactor {
    /// Metres.
    fn phase_residual(&self, baseline: &Vector3<f64>, n: f64) -> f64 {
        self.dd.wavelength * (self.dd.carrier - n)
            - gnss::geometric_dd_baseline(&self.dd, &self.link.base_pos, baseline)
    }
}

impl Factor for DdCarrierFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::DdCarrier
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Nav(self.link.k0), VarKey::Nav(self.link.k1), self.ambiguity]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        let n = values.scalar(self.ambiguity)?;
        Ok(dvec1(self.phase_residual(&self.link.baseline(x0, x1), n) / self.dd.sigma_psi))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        let n = values.scalar(self.ambiguity)?;
        let k = self.link.kinematics(x0, x1);
        let s = self.dd.sigma_psi;
        let g = -gnss::geometric_dd_gradient(&self.dd, &k.p_ec) / s;
        Ok(Linearization {
            residual: dvec1(self.phase_residual(&k.baseline, n) / s),
            jacobians: vec![
                row15(&g, &k.dp_dx0),
                row15(&g, &k.dp_dx1),
                DMatrix::from_element(1, 1, -self.dd.wavelength / s),
            ],
        })
    }
}

/// Links one satellite's ambiguity across consecutive epochs (cycles).
#[derive(Debug, Clone)]
pub struct ConstantAmbiguityFactor {
    pub previous: VarKey,
    pub current: VarKey,
    pub sigma_cycles: f64,
}

impl Factor for ConstantAmbiguityFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::ConstantAmbiguity
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![self.previous, self.current]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let r = crate::cycle_slip::constant_ambiguity_residual(values.scalar(self.current)?, values.scalar(self.previous)?);
        Ok(dvec1(r / self.sigma_cycles))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let s = self.sigma_cycles;
        Ok(Linearization {
            residual: self.residual(values)?,
            jacobians: vec![DMatrix::from_element(1, 1, -1.0 / s), DMatrix::from_element(1, 1, 1.0 / s)],
        })
    }
}

/// Undifferenced Doppler against the interpolated antenna velocity and the epoch clock drift.
///
/// The drift variable is carried as a range rate `c·δ̇_r` (m/s) to keep the normal equations well scaled.
#[derive(Debug, Clone)]
pub struct DopplerFactor {
    pub link: EpochLink,
    pub obs: SatObs,
    pub clock_drift: VarKey,
    /// Hz.
    pub sigma: f64,
}

impl Factor for DopplerFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::Doppler
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Nav(self.link.k0), VarKey::Nav(self.link.k1), self.clock_drift]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        let k = self.link.kinematics(x0, x1);
        let c = values.scalar(self.clock_drift)? / SPEED_OF_LIGHT;
        let r = gnss::doppler_residual(&self.obs, &k.p_ec, &k.v_ec, c).map_err(|_| FgoError::SingularInformation)?;
        Ok(dvec1(r / self.sigma))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let x0 = values.nav(VarKey::Nav(self.link.k0))?;
        let x1 = values.nav(VarKey::Nav(self.link.k1))?;
        let k = self.link.kinematics(x0, x1);
        let c = values.scalar(self.clock_drift)? / SPEED_OF_LIGHT;
        let r = gnss::doppler_residual(&self.obs, &k.p_ec, &k.v_ec, c).map_err(|_| FgoError::SingularInformation)?;
        let (dp, dv, dc) = gnss::doppler_residual_jacobians(&self.obs, &k.p_ec, &k.v_ec);
        let s = self.sigma;
        let j0 = row15(&(dp / s), &k.dp_dx0) + row15(&(dv / s), &k.dv_dx0);
        let j1 = row15(&(dp / s), &k.dp_dx1) + row15(&(dv / s), &k.dv_dx1);
        Ok(Linearization {
            residual: dvec1(r / s),
            jacobians: vec![j0, j1, DMatrix::from_element(1, 1, dc / (s * SPEED_OF_LIGHT))],
        })
    }
}

/// `r = Σ Aᵢ xᵢ − b` over vector variables.
#[derive(Debug, Clone)]
pub struct LinearFactor {
    pub keys: Vec<VarKey>,
    pub blocks: Vec<DMatrix<f64>>,
    pub rhs: DVector<f64>,
}

impl LinearFactor {
    pub fn new(keys: Vec<VarKey>, blocks: Vec<DMatrix<f64>>, rhs: DVector<f64>) -> Self {
        assert_eq!(keys.len(), blocks.len());
        Self { keys, blocks, rhs }
    }
}

impl Factor for LinearFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::Linear
    }
    fn keys(&self) -> Vec<VarKey> {
        self.keys.clone()
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let mut r = -self.rhs.clone();
        for (k, a) in self.keys.iter().zip(&self.blocks) {
            r += a * values.vector(*k)?;
        }
        Ok(r)
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        Ok(Linearization {
            residual: self.residual(values)?,
            jacobians: self.blocks.clone(),
        })
    }
}

/// Relative pose constraint between two 6-DOF poses: `[Rᵢᵀ(pⱼ − pᵢ) − z_p, Log(z_qᵀ Rᵢᵀ Rⱼ)]`.
#[derive(Debug, Clone)]
pub struct BetweenFactor {
    pub i: usize,
    pub j: usize,
    pub measured: RigidTransform,
    pub sqrt_info: SMatrix<f64, 6, 6>,
}

impl BetweenFactor {
    pub fn new(i: usize, j: usize, measured: RigidTransform, sigma_pos: f64, sigma_rot: f64) -> Self {
        let mut s = SMatrix::<f64, 6, 6>::zeros();
        for k in 0..3 {
            s[(k, k)] = 1.0 / sigma_pos;
            s[(k + 3, k + 3)] = 1.0 / sigma_rot;
        }
        Self {
            i,
            j,
            measured,
            sqrt_info: s,
        }
    }

    fn raw(&self, ti: &RigidTransform, tj: &RigidTransform) -> (Vector3<f64>, Vector3<f64>) {
        let rp = ti.rotation.inverse() * (tj.translation - ti.translation) - self.measured.translation;
        let rth = so3::log(&(self.measured.rotation.inverse() * ti.rotation.inverse() * tj.rotation));
        (rp, rth)
    }
}

impl Factor for BetweenFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::Between
    }
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::Pose(self.i), VarKey::Pose(self.j)]
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let (rp, rth) = self.raw(values.pose(VarKey::Pose(self.i))?, values.pose(VarKey::Pose(self.j))?);
        let r = self.sqrt_info * nalgebra::Vector6::new(rp.x, rp.y, rp.z, rth.x, rth.y, rth.z);
        Ok(DVector::from_column_slice(r.as_slice()))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let ti = values.pose(VarKey::Pose(self.i))?;
        let tj = values.pose(VarKey::Pose(self.j))?;
        let (rp, rth) = self.raw(ti, tj);
        let ri = ti.rotation.to_rotation_matrix().into_inner();
        let rj = tj.rotation.to_rotation_matrix().into_inner();
        let jr_inv = so3::right_jacobian_inverse(&rth);
        let mut ji = SMatrix::<f64, 6, 6>::zeros();
        let mut jj = SMatrix::<f64, 6, 6>::zeros();
        ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&-ri.transpose());
        ji.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&so3::skew(&(ri.transpose() * (tj.translation - ti.translation))));
        ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rj.transpose() * ri));
        jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&ri.transpose());
        jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
        let r = self.sqrt_info * nalgebra::Vector6::new(rp.x, rp.y, rp.z, rth.x, rth.y, rth.z);
        let f = |m: SMatrix<f64, 6, 6>| DMatrix::from_column_slice(6, 6, (self.sqrt_info * m).as_slice());
        Ok(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![f(ji), f(jj)],
        })
    }
}

/// Absolute body position at an epoch between two poses: `α pᵢ + (1 − α) pⱼ − z`.
#[derive(Debug, Clone)]
pub struct AbsolutePositionFactor {
    pub i: usize,
    pub j: usize,
    pub alpha: f64,
    pub measured: Vector3<f64>,
    pub sqrt_info: Matrix3<f64>,
}

impl Factor for AbsolutePositionFactor {
    fn family(&self) -> FactorFamily {
        FactorFamily::AbsolutePosition
    }
    fn keys(&self) -> Vec<VarKey> {
        if self.i == self.j {
            vec![VarKey::Pose(self.i)]
        } else {
            vec![VarKey::Pose(self.i), VarKey::Pose(self.j)]
        }
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let pi = values.pose(VarKey::Pose(self.i))?.translation;
        let pj = values.pose(VarKey::Pose(self.j))?.translation;
        let r = self.sqrt_info * (self.alpha * pi + (1.0 - self.alpha) * pj - self.measured);
        Ok(DVector::from_column_slice(r.as_slice()))
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let block = |w: f64| {
            let mut m = DMatrix::zeros(3, 6);
            m.view_mut((0, 0), (3, 3)).copy_from(&(self.sqrt_info * w));
            m
        };
        let jacobians = if self.i == self.j {
            vec![block(1.0)]
        } else {
            vec![block(self.alpha), block(1.0 - self.alpha)]
        };
        Ok(Linearization {
            residual: self.residual(values)?,
            jacobians,
        })
    }
}

/// Central-difference Jacobians of a factor's whitened residual on each key's tangent space,
/// refined by one Richardson extrapolation step.
pub fn numeric_jacobians(f: &dyn Factor, values: &Values, step: f64) -> Result<Vec<DMatrix<f64>>, FgoError> {
    let mut out = Vec::new();
    for key in f.keys() {
        let var = values.var(key)?.clone();
        let dim = var.dim();
        let m = f.residual(values)?.len();
        let mut j = DMatrix::zeros(m, dim);
        for c in 0..dim {
            let diff = |h: f64| -> Result<DVector<f64>, FgoError> {
                let mut d = vec![0.0; dim];
                d[c] = h;
                let mut plus = values.clone();
                plus.insert(key, var.retract(&d));
                d[c] = -h;
                let mut minus = values.clone();
                minus.insert(key, var.retract(&d));
                Ok((f.residual(&plus)? - f.residual(&minus)?) / (2.0 * h))
            };
            let d1 = diff(step)?;
            let d2 = diff(step / 2.0)?;
            j.set_column(c, &((d2 * 4.0 - d1) / 3.0));
        }
        out.push(j);
    }
    Ok(out)
}

/// Largest elementwise mismatch between analytic and numeric Jacobians, relative to the block scale.
pub fn jacobian_mismatch(f: &dyn Factor, values: &Values, step: f64) -> Result<f64, FgoError> {
    let ana = f.linearize(values)?.jacobians;
    let num = numeric_jacobians(f, values, step)?;
    let mut worst: f64 = 0.0;
    for (a, n) in ana.iter().zip(&num) {
        let scale = a.amax().max(n.amax()).max(1e-12);
        worst = worst.max((a - n).amax() / scale);
    }
    Ok(worst)
}
