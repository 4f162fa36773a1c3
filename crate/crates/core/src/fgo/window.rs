//! Sliding-window estimator: keyframe states, GNSS epochs with their ambiguities and
//! clock drift, optimization, float-solution covariance and marginalization.

use super::factors::{
    ConstantAmbiguityFactor, DdCarrierFactor, DdPseudorangeFactor, DopplerFactor, ImuFactor, PriorFactor, VsFactor,
};
use super::graph::{covariance, optimize, Factor, FactorFamily, FactorGraph, FgoError, OptimizerParams, Values, Var, VarKey};
use super::interp::EpochLink;
use super::marginal::marginalize;
use super::state::NavState;
use crate::ambiguity::FloatSolution;
use crate::gnss::{DdObservation, SatId, SatObs};
use crate::imu::PreintegratedDelta;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowParams {
    /// Keyframes kept before the oldest is marginalized.
    pub size: usize,
    #[serde(skip)]
    pub optimizer: OptimizerParams,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            size: 10,
            optimizer: OptimizerParams::default(),
        }
    }
}

/// Carrier phase for one DD pair together with its ambiguity initial guess (cycles).
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierInput {
    pub dd: DdObservation,
    pub initial_ambiguity: f64,
}

/// Everything one GNSS epoch contributes to the window.
#[derive(Debug, Clone)]
pub struct GnssEpoch {
    pub epoch: usize,
    pub time: f64,
    pub link: EpochLink,
    pub pseudoranges: Vec<DdObservation>,
    pub carriers: Vec<CarrierInput>,
    /// Rover observations with their Doppler sigma (Hz).
    pub dopplers: Vec<(SatObs, f64)>,
    /// Satellites whose ambiguity continues unbroken from the previous epoch.
    pub continuing: BTreeSet<SatId>,
}

#[derive(Debug, Clone)]
struct EpochSlot {
    epoch: usize,
    time: f64,
    link: EpochLink,
    sats: Vec<SatId>,
}

/// Factors a GNSS epoch adds; constant-ambiguity links go to `previous` ambiguity keys.
pub fn epoch_factors(e: &GnssEpoch, previous: &BTreeMap<SatId, VarKey>) -> Vec<Box<dyn Factor>> {
    let mut out: Vec<Box<dyn Factor>> = Vec::new();
    for dd in &e.pseudoranges {
        out.push(Box::new(DdPseudorangeFactor {
            link: e.link.clone(),
            dd: dd.clone(),
        }));
    }
    for c in &e.carriers {
        let key = VarKey::Ambiguity {
            epoch: e.epoch,
            sat: c.dd.sat,
        };
        out.push(Box::new(DdCarrierFactor {
            link: e.link.clone(),
            dd: c.dd.clone(),
            ambiguity: key,
        }));
        if e.continuing.contains(&c.dd.sat) {
            if let Some(prev) = previous.get(&c.dd.sat) {
                out.push(Box::new(ConstantAmbiguityFactor {
                    previous: *prev,
                    current: key,
                    sigma_cycles: c.dd.sigma_psi / c.dd.wavelength,
                }));
            }
        }
    }
    for (obs, sigma) in &e.dopplers {
        out.push(Box::new(DopplerFactor {
            link: e.link.clone(),
            obs: obs.clone(),
            clock_drift: VarKey::ClockDrift(e.epoch),
            sigma: *sigma,
        }));
    }
    out
}

/// Window inputs for a batch build.
#[derive(Debug, Clone, Default)]
pub struct WindowInputs {
    pub keyframes: Vec<NavState>,
    pub prior_sigmas: Option<[f64; 15]>,
    /// Preintegrated motion between consecutive keyframes.
    pub deltas: Vec<PreintegratedDelta>,
    pub gravity: Vector3<f64>,
    pub vs: Vec<VsFactor>,
    pub epochs: Vec<GnssEpoch>,
}

/// Assembles the full graph and initial values for a batch of window inputs.
pub fn build_graph(inputs: &WindowInputs) -> Result<(FactorGraph, Values), FgoError> {
    let mut values = Values::new();
    let mut graph = FactorGraph::new();
    for x in &inputs.keyframes {
        values.insert(VarKey::Nav(x.id), Var::Nav(x.clone()));
    }
    if let (Some(first), Some(s)) = (inputs.keyframes.first(), inputs.prior_sigmas) {
        graph.add(PriorFactor::new(VarKey::Nav(first.id), Var::Nav(first.clone()), &s));
    }
    if inputs.deltas.len() + 1 != inputs.keyframes.len().max(1) {
        return Err(FgoError::InconsistentTimestamps(format!(
            "{} deltas for {} keyframes",
            inputs.deltas.len(),
            inputs.keyframes.len()
        )));
    }
    for (w, d) in inputs.keyframes.windows(2).zip(&inputs.deltas) {
        check_delta(&w[0], &w[1], d)?;
        graph.add(ImuFactor::new(w[0].id, w[1].id, d.clone(), inputs.gravity));
    }
    for v in &inputs.vs {
        if !values.contains(&VarKey::Nav(v.key)) {
            return Err(FgoError::MissingKey(VarKey::Nav(v.key)));
        }
        graph.add(v.clone());
    }
    let mut previous: BTreeMap<SatId, VarKey> = BTreeMap::new();
    for e in &inputs.epochs {
        check_epoch(&values, e)?;
        insert_epoch_values(&mut values, e, &previous);
        for f in epoch_factors(e, &previous) {
            graph.add_boxed(f);
        }
        previous = e
            .carriers
            .iter()
            .map(|c| {
                (
                    c.dd.sat,
                    VarKey::Ambiguity {
                        epoch: e.epoch,
                        sat: c.dd.sat,
                    },
                )
            })
            .collect();
    }
    Ok((graph, values))
}

fn check_delta(xi: &NavState, xj: &NavState, d: &PreintegratedDelta) -> Result<(), FgoError> {
    if !(xj.t > xi.t) || ((xj.t - xi.t) - d.duration).abs() > 1e-6 {
        return Err(FgoError::InconsistentTimestamps(format!(
            "keyframes {} -> {} span {:.6} s, preintegration {:.6} s",
            xi.id,
            xj.id,
            xj.t - xi.t,
            d.duration
        )));
    }
    Ok(())
}

fn check_epoch(values: &Values, e: &GnssEpoch) -> Result<(), FgoError> {
    let x0 = values.nav(VarKey::Nav(e.link.k0))?;
    let x1 = values.nav(VarKey::Nav(e.link.k1))?;
    let alpha = super::interp::interpolation_weight(x0.t, x1.t, e.time)?;
    if (alpha - e.link.alpha).abs() > 1e-6 {
        return Err(FgoError::InconsistentTimestamps(format!(
            "epoch {} at {:.3} s has weight {:.6}, link says {:.6}",
            e.epoch, e.time, alpha, e.link.alpha
        )));
    }
    Ok(())
}

fn insert_epoch_values(values: &mut Values, e: &GnssEpoch, previous: &BTreeMap<SatId, VarKey>) {
    for c in &e.carriers {
        let prior = previous
            .get(&c.dd.sat)
            .filter(|_| e.continuing.contains(&c.dd.sat))
            .and_then(|k| values.scalar(*k).ok());
        values.insert(
            VarKey::Ambiguity {
                epoch: e.epoch,
                sat: c.dd.sat,
            },
            Var::Scalar(prior.unwrap_or(c.initial_ambiguity)),
        );
    }
    if !e.dopplers.is_empty() {
        values.insert(VarKey::ClockDrift(e.epoch), Var::Scalar(0.0));
    }
}

/// Incrementally maintained window of keyframes and GNSS epochs.
#[derive(Debug)]
pub struct SlidingWindow {
    params: WindowParams,
    gravity: Vector3<f64>,
    graph: FactorGraph,
    values: Values,
    keyframes: VecDeque<usize>,
    epochs: VecDeque<EpochSlot>,
    latest_ambiguity: BTreeMap<SatId, VarKey>,
    last_cost: Option<(f64, f64)>,
}

impl SlidingWindow {
    /// Starts a window from one keyframe with a Gaussian prior of the given tangent sigmas.
    pub fn new(params: WindowParams, gravity: Vector3<f64>, first: NavState, prior_sigmas: &[f64; 15]) -> Self {
        let mut graph = FactorGraph::new();
        graph.add(PriorFactor::new(VarKey::Nav(first.id), Var::Nav(first.clone()), prior_sigmas));
        let mut values = Values::new();
        let id = first.id;
        values.insert(VarKey::Nav(id), Var::Nav(first));
        Self {
            params,
            gravity,
            graph,
            values,
            keyframes: VecDeque::from([id]),
            epochs: VecDeque::new(),
            latest_ambiguity: BTreeMap::new(),
            last_cost: None,
        }
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn keyframe_ids(&self) -> Vec<usize> {
        self.keyframes.iter().copied().collect()
    }

    pub fn nav(&self, id: usize) -> Option<&NavState> {
        self.values.nav(VarKey::Nav(id)).ok()
    }

    pub fn latest(&self) -> &NavState {
        let id = *self.keyframes.back().expect("window never empty");
        self.values.nav(VarKey::Nav(id)).expect("keyframe state present")
    }

    /// Initial and final cost of the last optimization.
    pub fn last_cost(&self) -> Option<(f64, f64)> {
        self.last_cost
    }

    pub fn factor_counts(&self) -> BTreeMap<FactorFamily, usize> {
        self.graph.family_counts()
    }

    /// Adds a keyframe initialized at `state`, linked to the previous one by `delta`.
    pub fn add_keyframe(&mut self, state: NavState, delta: PreintegratedDelta, vs: Vec<VsFactor>) -> Result<(), FgoError> {
        let prev = *self.keyframes.back().expect("window never empty");
        check_delta(self.values.nav(VarKey::Nav(prev))?, &state, &delta)?;
        let id = state.id;
        self.values.insert(VarKey::Nav(id), Var::Nav(state));
        self.graph.add(ImuFactor::new(prev, id, delta, self.gravity));
        for f in vs {
            if f.key != id {
                return Err(FgoError::MissingKey(VarKey::Nav(f.key)));
            }
            self.graph.add(f);
        }
        self.keyframes.push_back(id);
        Ok(())
    }

    pub fn add_epoch(&mut self, e: GnssEpoch) -> Result<(), FgoError> {
        check_epoch(&self.values, &e)?;
        let previous: BTreeMap<SatId, VarKey> = self
            .latest_ambiguity
            .iter()
            .filter(|(_, k)| self.values.contains(k))
            .map(|(s, k)| (*s, *k))
            .collect();
        insert_epoch_values(&mut self.values, &e, &previous);
        for f in epoch_factors(&e, &previous) {
            self.graph.add_boxed(f);
        }
        self.latest_ambiguity = e
            .carriers
            .iter()
            .map(|c| {
                (
                    c.dd.sat,
                    VarKey::Ambiguity {
                        epoch: e.epoch,
                        sat: c.dd.sat,
                    },
                )
            })
            .collect();
        self.epochs.push_back(EpochSlot {
            epoch: e.epoch,
            time: e.time,
            link: e.link,
            sats: e.carriers.iter().map(|c| c.dd.sat).collect(),
        });
        Ok(())
    }

    pub fn optimize(&mut self) -> Result<(), FgoError> {
        let rep = optimize(&self.graph, &self.values, &self.params.optimizer)?;
        self.last_cost = Some((rep.initial_cost, rep.final_cost));
        self.values = rep.values;
        Ok(())
    }

    /// Antenna position (ENU) of an epoch under the current estimate.
    pub fn epoch_position(&self, epoch: usize) -> Result<Vector3<f64>, FgoError> {
        let slot = self.slot(epoch)?;
        let x0 = self.values.nav(VarKey::Nav(slot.link.k0))?;
        let x1 = self.values.nav(VarKey::Nav(slot.link.k1))?;
        Ok(slot.link.receiver_enu(x0, x1))
    }

    pub fn epoch_link(&self, epoch: usize) -> Result<&EpochLink, FgoError> {
        Ok(&self.slot(epoch)?.link)
    }

    fn slot(&self, epoch: usize) -> Result<&EpochSlot, FgoError> {
        self.epochs
            .iter()
            .find(|s| s.epoch == epoch)
            .ok_or(FgoError::MissingKey(VarKey::ClockDrift(epoch)))
    }

    /// Float antenna position (ENU) and ambiguities of `epoch` with their joint covariance blocks.
    pub fn float_solution(&self, epoch: usize) -> Result<(FloatSolution, Vec<SatId>), FgoError> {
        let slot = self.slot(epoch)?;
        let (sigma, ordering) = covariance(&self.graph, &self.values)?;
        let n = sigma.nrows();
        let x0 = self.values.nav(VarKey::Nav(slot.link.k0))?;
        let x1 = self.values.nav(VarKey::Nav(slot.link.k1))?;
        let kin = slot.link.kinematics(x0, x1);
        let r_t = slot.link.origin.enu_to_ecef_rotation().transpose();
        let mut a_p = DMatrix::zeros(3, n);
        for (k, jac) in [(slot.link.k0, &kin.dp_dx0), (slot.link.k1, &kin.dp_dx1)] {
            let o = ordering[&VarKey::Nav(k)];
            let block = r_t * jac;
            let mut view = a_p.view_mut((0, o), (3, 15));
            view += DMatrix::from_column_slice(3, 15, block.as_slice());
        }
        let m = slot.sats.len();
        let mut a_n = DMatrix::zeros(m, n);
        let mut amb = DVector::zeros(m);
        for (i, sat) in slot.sats.iter().enumerate() {
            let key = VarKey::Ambiguity { epoch, sat: *sat };
            a_n[(i, ordering[&key])] = 1.0;
            amb[i] = self.values.scalar(key)?;
        }
        let sp = &sigma * a_p.transpose();
        let q_pp = &a_p * &sp;
        let q_np = &a_n * &sp;
        let q_nn = &a_n * &sigma * a_n.transpose();
        Ok((
            FloatSolution {
                position: slot.link.receiver_enu(x0, x1),
                ambiguities: amb,
                q_pp: 0.5 * (&q_pp + q_pp.transpose()),
                q_nn: 0.5 * (&q_nn + q_nn.transpose()),
                q_np,
            },
            slot.sats.clone(),
        ))
    }

    pub fn epoch_time(&self, epoch: usize) -> Result<f64, FgoError> {
        Ok(self.slot(epoch)?.time)
    }

    /// Marginalizes the oldest keyframe, with the epochs hanging off it, while the window is too long.
    pub fn enforce_size(&mut self) -> Result<(), FgoError> {
        while self.keyframes.len() > self.params.size.max(2) {
            self.marginalize_oldest()?;
        }
        Ok(())
    }

    pub fn marginalize_oldest(&mut self) -> Result<(), FgoError> {
        let Some(oldest) = self.keyframes.pop_front() else {
            return Ok(());
        };
        let mut keys = BTreeSet::from([VarKey::Nav(oldest)]);
        while self.epochs.front().is_some_and(|s| s.link.k0 == oldest || s.link.k1 == oldest) {
            let slot = self.epochs.pop_front().expect("checked non-empty");
            keys.insert(VarKey::ClockDrift(slot.epoch));
            for sat in &slot.sats {
                keys.insert(VarKey::Ambiguity { epoch: slot.epoch, sat: *sat });
            }
        }
        keys.retain(|k| self.values.contains(k));
        if let Some(prior) = marginalize(&mut self.graph, &self.values, &keys)? {
            self.graph.add(prior);
        }
        for k in &keys {
            self.values.remove(k);
        }
        Ok(())
    }
}
