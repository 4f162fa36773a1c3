use super::state::NavState;
use crate::frames::RigidTransform;
use crate::gnss::SatId;
use crate::so3;
use nalgebra::{DMatrix, DVector, Vector3};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FgoError {
    #[error("variable {0} not present in values")]
    MissingKey(VarKey),
    #[error("variable {0} has the wrong type for this factor")]
    WrongType(VarKey),
    #[error("singular normal equations at {0}")]
    SingularSystem(VarKey),
    #[error("information matrix is not invertible")]
    SingularInformation,
    #[error("epoch time {t} outside keyframe interval [{t0}, {t1}]")]
    OutOfInterval { t: f64, t0: f64, t1: f64 },
    #[error("inconsistent timestamps: {0}")]
    InconsistentTimestamps(String),
}

/// Graph variable identifiers. Ordering fixes the column layout of the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    Nav(usize),
    Pose(usize),
    ClockDrift(usize),
    Ambiguity { epoch: usize, sat: SatId },
    Vector(usize),
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::Nav(k) => write!(f, "x{k}"),
            VarKey::Pose(k) => write!(f, "T{k}"),
            VarKey::ClockDrift(e) => write!(f, "clk{e}"),
            VarKey::Ambiguity { epoch, sat } => write!(f, "N{epoch}:{sat}"),
            VarKey::Vector(k) => write!(f, "v{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Var {
    Nav(NavState),
    /// 6-DOF pose, tangent `[p, θ]`.
    Pose(RigidTransform),
    Scalar(f64),
    Vector(DVector<f64>),
}

impl Var {
    pub fn dim(&self) -> usize {
        match self {
            Var::Nav(_) => 15,
            Var::Pose(_) => 6,
            Var::Scalar(_) => 1,
            Var::Vector(v) => v.len(),
        }
    }

    pub fn retract(&self, d: &[f64]) -> Var {
        match self {
            Var::Nav(x) => Var::Nav(x.retract(&crate::imu::Vector15::from_column_slice(d))),
            Var::Pose(t) => {
                let mut q = t.rotation * so3::exp(&Vector3::new(d[3], d[4], d[5]));
                q.renormalize();
                Var::Pose(RigidTransform::new(q, t.translation + Vector3::new(d[0], d[1], d[2])))
            }
            Var::Scalar(s) => Var::Scalar(s + d[0]),
            Var::Vector(v) => Var::Vector(v + DVector::from_column_slice(d)),
        }
    }

    /// Tangent vector from `self` to `other`.
    pub fn local(&self, other: &Var) -> DVector<f64> {
        match (self, other) {
            (Var::Nav(a), Var::Nav(b)) => DVector::from_column_slice(a.local(b).as_slice()),
            (Var::Pose(a), Var::Pose(b)) => {
                let dp = b.translation - a.translation;
                let th = so3::log(&(a.rotation.inverse() * b.rotation));
                DVector::from_column_slice(&[dp.x, dp.y, dp.z, th.x, th.y, th.z])
            }
            (Var::Scalar(a), Var::Scalar(b)) => DVector::from_element(1, b - a),
            (Var::Vector(a), Var::Vector(b)) => b - a,
            _ => panic!("local between mismatched variable types"),
        }
    }

    /// Derivative of `self.local(other)` with respect to a perturbation of `other`.
    pub fn local_jacobian(&self, other: &Var) -> DMatrix<f64> {
        match (self, other) {
            (Var::Nav(a), Var::Nav(b)) => a.local_jacobian(b),
            (Var::Pose(a), Var::Pose(b)) => {
                let mut j = DMatrix::identity(6, 6);
                let th = so3::log(&(a.rotation.inverse() * b.rotation));
                j.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3::right_jacobian_inverse(&th));
                j
            }
            _ => DMatrix::identity(other.dim(), other.dim()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    vars: BTreeMap<VarKey, Var>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VarKey, var: Var) -> Option<Var> {
        self.vars.insert(key, var)
    }

    pub fn remove(&mut self, key: &VarKey) -> Option<Var> {
        self.vars.remove(key)
    }

    pub fn get(&self, key: &VarKey) -> Option<&Var> {
        self.vars.get(key)
    }

    pub fn contains(&self, key: &VarKey) -> bool {
        self.vars.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VarKey> {
        self.vars.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarKey, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, key: VarKey) -> Result<&Var, FgoError> {
        self.vars.get(&key).ok_or(FgoError::MissingKey(key))
    }

    pub fn nav(&self, key: VarKey) -> Result<&NavState, FgoError> {
        match self.var(key)? {
            Var::Nav(x) => Ok(x),
            _ => Err(FgoError::WrongType(key)),
        }
    }

    pub fn pose(&self, key: VarKey) -> Result<&RigidTransform, FgoError> {
        match self.var(key)? {
            Var::Pose(x) => Ok(x),
            _ => Err(FgoError::WrongType(key)),
        }
    }

    pub fn scalar(&self, key: VarKey) -> Result<f64, FgoError> {
        match self.var(key)? {
            Var::Scalar(x) => Ok(*x),
            _ => Err(FgoError::WrongType(key)),
        }
    }

    pub fn vector(&self, key: VarKey) -> Result<&DVector<f64>, FgoError> {
        match self.var(key)? {
            Var::Vector(x) => Ok(x),
            _ => Err(FgoError::WrongType(key)),
        }
    }

    /// Column offsets of every variable in key order, plus the total dimension.
    pub fn ordering(&self) -> (BTreeMap<VarKey, usize>, usize) {
        let mut off = BTreeMap::new();
        let mut n = 0;
        for (k, v) in &self.vars {
            off.insert(*k, n);
            n += v.dim();
        }
        (off, n)
    }

    pub fn retract_all(&self, delta: &DVector<f64>, ordering: &BTreeMap<VarKey, usize>) -> Values {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| {
                let o = ordering[k];
                (*k, v.retract(&delta.as_slice()[o..o + v.dim()]))
            })
            .collect();
        Values { vars }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactorFamily {
    Prior,
    VirtualSatellite,
    Imu,
    DdPseudorange,
    DdCarrier,
    ConstantAmbiguity,
    Doppler,
    Marginal,
    Between,
    AbsolutePosition,
    Linear,
}

/// Whitened residual with one whitened Jacobian block per key.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

pub trait Factor: fmt::Debug + Send + Sync {
    fn family(&self) -> FactorFamily;
    fn keys(&self) -> Vec<VarKey>;
    /// Whitened residual.
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError>;
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError>;
}

#[derive(Debug, Default)]
pub struct FactorGraph {
    pub factors: Vec<Box<dyn Factor>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, f: impl Factor + 'static) {
        self.factors.push(Box::new(f));
    }

    pub fn add_boxed(&mut self, f: Box<dyn Factor>) {
        self.factors.push(f);
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn count(&self, family: FactorFamily) -> usize {
        self.factors.iter().filter(|f| f.family() == family).count()
    }

    pub fn family_counts(&self) -> BTreeMap<FactorFamily, usize> {
        let mut m = BTreeMap::new();
        for f in &self.factors {
            *m.entry(f.family()).or_insert(0) += 1;
        }
        m
    }

    /// `½ Σ ‖r‖²` over whitened residuals.
    pub fn cost(&self, values: &Values) -> Result<f64, FgoError> {
        let mut c = 0.0;
        for f in &self.factors {
            c += 0.5 * f.residual(values)?.norm_squared();
        }
        Ok(c)
    }

    /// Gauss-Newton normal equations `H = JᵀJ`, `g = Jᵀr` in the ordering of `values`.
    pub fn normal_equations(
        &self,
        values: &Values,
        ordering: &BTreeMap<VarKey, usize>,
        n: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>), FgoError> {
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for f in &self.factors {
            accumulate(f.as_ref(), values, ordering, &mut h, &mut g)?;
        }
        Ok((h, g))
    }
}

pub(crate) fn accumulate(
    f: &dyn Factor,
    values: &Values,
    ordering: &BTreeMap<VarKey, usize>,
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
) -> Result<(), FgoError> {
    let keys = f.keys();
    let lin = f.linearize(values)?;
    let offs: Vec<usize> = keys
        .iter()
        .map(|k| ordering.get(k).copied().ok_or(FgoError::MissingKey(*k)))
        .collect::<Result<_, _>>()?;
    for (a, ja) in lin.jacobians.iter().enumerate() {
        let oa = offs[a];
        let ga = ja.transpose() * &lin.residual;
        g.rows_mut(oa, ga.len()).add_assign(&ga);
        for (b, jb) in lin.jacobians.iter().enumerate() {
            let ob = offs[b];
            let hab = ja.transpose() * jb;
            let mut blk = h.view_mut((oa, ob), (hab.nrows(), hab.ncols()));
            blk += &hab;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease falls below this.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_tolerance: 1e-6,
            initial_lambda: 1e-6,
            max_lambda: 1e8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub values: Values,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn singular_key(h: &DMatrix<f64>, ordering: &BTreeMap<VarKey, usize>, values: &Values) -> Option<VarKey> {
    let scale = h.diagonal().amax().max(1e-300);
    for (k, &o) in ordering {
        let d = values.get(k).map(Var::dim).unwrap_or(0);
        if (o..o + d).any(|i| h[(i, i)] <= 1e-14 * scale) {
            return Some(*k);
        }
    }
    None
}

/// Damped Gauss-Newton: plain GN steps while they reduce the cost, Levenberg damping otherwise.
pub fn optimize(graph: &FactorGraph, initial: &Values, params: &OptimizerParams) -> Result<OptimizeReport, FgoError> {
    let (ordering, n) = initial.ordering();
    let mut values = initial.clone();
    let initial_cost = graph.cost(&values)?;
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut lambda = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    if n == 0 {
        return Ok(OptimizeReport {
            values,
            initial_cost,
            final_cost: cost,
            iterations,
            converged: true,
            cost_history: history,
        });
    }
    'outer: while iterations < params.max_iterations {
        iterations += 1;
        let (h, g) = graph.normal_equations(&values, &ordering, n)?;
        if let Some(k) = singular_key(&h, &ordering, &values) {
            return Err(FgoError::SingularSystem(k));
        }
        loop {
            let mut damped = h.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda = if lambda == 0.0 { params.initial_lambda } else { lambda * 10.0 };
                if lambda > params.max_lambda {
                    return Err(FgoError::SingularSystem(*ordering.keys().next().unwrap()));
                }
                continue;
            };
            let delta = -chol.solve(&g);
            let candidate = values.retract_all(&delta, &ordering);
            let new_cost = graph.cost(&candidate)?;
            if new_cost <= cost {
                let decrease = cost - new_cost;
                values = candidate;
                let old = cost;
                cost = new_cost;
                history.push(cost);
                lambda = if lambda > 0.0 { (lambda / 10.0).max(params.initial_lambda) } else { 0.0 };
                if decrease <= params.relative_tolerance * old || cost < 1e-24 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda = if lambda == 0.0 { params.initial_lambda } else { lambda * 10.0 };
            if lambda > params.max_lambda {
                // no descent direction left: already at a minimum to working precision
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(OptimizeReport {
        values,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Full covariance `(JᵀWJ)⁻¹` at `values`, with the ordering used.
pub fn covariance(graph: &FactorGraph, values: &Values) -> Result<(DMatrix<f64>, BTreeMap<VarKey, usize>), FgoError> {
    let (ordering, n) = values.ordering();
    let (h, _) = graph.normal_equations(values, &ordering, n)?;
    let chol = h.cholesky().ok_or(FgoError::SingularInformation)?;
    Ok((chol.inverse(), ordering))
}

/// Covariance of a linear function `A δ` of the tangent, `A Σ Aᵀ`, for a selection of rows.
pub fn project_covariance(sigma: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * sigma * b.transpose()
}
