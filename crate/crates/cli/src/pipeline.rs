//! Keyframe loop: IMU propagation, NLOS screening, slip checks, window optimization,
//! ambiguity resolution, global pose graph and map correction.

use crate::config::{Mode, RunConfig};
use crate::metrics::EpochStatus;
use crate::rtk;
use crate::EvalError;
use canyon_rtk::ambiguity::{self, FloatSolution};
use canyon_rtk::cycle_slip::{estimate_dd_ambiguity_float, AmbiguityTrack, FloatAmbiguity, SlipReport};
use canyon_rtk::fgo::factors::VsFactor;
use canyon_rtk::fgo::global::{AbsoluteFix, GlobalPoseGraph};
use canyon_rtk::fgo::interp::EpochLink;
use canyon_rtk::fgo::window::{CarrierInput, GnssEpoch, SlidingWindow, WindowParams};
use canyon_rtk::fgo::{FactorFamily, NavState};
use canyon_rtk::gnss::{self, EpochObs, SatId};
use canyon_rtk::io::PoseStamped;
use canyon_rtk::pcm::{self, PcmError, PointCloudMap, VisibilityLabel};
use canyon_rtk::virtual_sat::{self, FeatureMap};
use canyon_rtk::{imu, RigidTransform};
use canyon_sim::Dataset;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::Serialize;
use std::collections::{BTreeSet, HashSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkyRow {
    pub epoch: usize,
    pub t: f64,
    pub sat: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub nlos: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdopRow {
    pub epoch: usize,
    pub vs_weight: f64,
    pub adop: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: Mode,
    pub statuses: Vec<EpochStatus>,
    /// Body pose at every solved epoch.
    pub trajectory: Vec<PoseStamped>,
    pub skyplot: Vec<SkyRow>,
    pub slips: Vec<SlipReport>,
    /// Factor families the estimator used at any point.
    pub families: BTreeSet<FactorFamily>,
    /// Virtual satellites added per keyframe.
    pub virtual_satellites: Vec<usize>,
}

impl RunOutput {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            statuses: Vec::new(),
            trajectory: Vec::new(),
            skyplot: Vec::new(),
            slips: Vec::new(),
            families: BTreeSet::new(),
            virtual_satellites: Vec::new(),
        }
    }

    pub fn adop_rows(&self, vs_weight: f64) -> Vec<AdopRow> {
        self.statuses
            .iter()
            .map(|s| AdopRow {
                epoch: s.epoch,
                vs_weight,
                adop: s.adop,
            })
            .collect()
    }

    /// Mean ADOP over the epochs that have one.
    pub fn mean_adop(&self) -> Option<f64> {
        let v: Vec<f64> = self.statuses.iter().filter_map(|s| s.adop).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn record(&mut self, mut status: EpochStatus, body: Option<(Vector3<f64>, UnitQuaternion<f64>)>) {
        if let Some((p, q)) = body {
            status.solved = true;
            status.east = Some(p.x);
            status.north = Some(p.y);
            status.up = Some(p.z);
            self.trajectory.push(PoseStamped {
                t: status.t,
                pose: RigidTransform::new(q, p),
            });
        }
        self.statuses.push(status);
    }
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput, EvalError> {
    let data = Dataset::load(&cfg.dataset)?;
    run_on(cfg, &data)
}

/// Runs the configured estimator over an already loaded dataset.
pub fn run_on(cfg: &RunConfig, data: &Dataset) -> Result<RunOutput, EvalError> {
    log::info!("{} on {} epochs, {} keyframes", cfg.mode, data.epochs.len(), data.keyframes.len());
    match cfg.mode {
        Mode::RtkOnly => Ok(run_rtk(cfg, data)),
        Mode::FgoVs | Mode::FgoVsNlos => Fusion::new(cfg, data)?.run(),
    }
}

/// Ratio-tested integer fix; `None` when there is nothing to search or the search fails.
fn resolve(float: &FloatSolution, min_ambiguities: usize, ratio: f64) -> Option<ambiguity::FixedSolution> {
    if float.ambiguities.len() < min_ambiguities.max(1) {
        return None;
    }
    let search = ambiguity::integer_search(&float.ambiguities, &float.q_nn, 2)
        .map_err(|e| log::warn!("integer search failed: {e}"))
        .ok()?;
    ambiguity::validate_and_fix(float, &search, ratio).ok()
}

fn adop_of(float: &FloatSolution) -> Option<f64> {
    if float.ambiguities.is_empty() {
        return None;
    }
    ambiguity::adop(&float.q_nn).ok()
}

fn run_rtk(cfg: &RunConfig, data: &Dataset) -> RunOutput {
    let m = &data.manifest;
    let p = &cfg.pipeline;
    let mut out = RunOutput::new(Mode::RtkOnly);
    out.families = BTreeSet::from([FactorFamily::DdPseudorange, FactorFamily::DdCarrier]);
    // no attitude without inertial data; the lever arm is rotated by the initial attitude
    let q0 = m.initial.pose().rotation;
    let arm = q0 * Vector3::from(m.lever_arm);
    let mut guess = m.initial.pose().translation + arm;
    for (k, ep) in data.epochs.iter().enumerate() {
        let mut st = EpochStatus::unsolved(k, ep.time);
        let Some(sol) = rtk::solve_epoch(ep, &data.origin, &m.gnss_noise, &guess) else {
            out.record(st, None);
            continue;
        };
        st.n_dd = sol.n_dd;
        st.adop = adop_of(&sol.float);
        let mut antenna = sol.float.position;
        if let Some(fix) = resolve(&sol.float, p.min_ambiguities, p.ratio_threshold) {
            st.ratio = fix.ratio;
            if fix.accepted {
                st.fixed = true;
                antenna = fix.position;
            }
        }
        guess = antenna;
        out.record(st, Some((antenna - arm, q0)));
    }
    out
}

/// Keeps the first return in every `voxel`-sized cell, in scan order.
pub fn downsample(points: &[Vector3<f64>], voxel: f64) -> Vec<Vector3<f64>> {
    let mut seen = HashSet::new();
    points
        .iter()
        .filter(|p| {
            let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64);
            seen.insert(key)
        })
        .copied()
        .collect()
}

/// Scan-to-map plane associations turned into weighted point-to-plane factors on keyframe `key`.
#[allow(clippy::too_many_arguments)]
pub fn virtual_satellites(
    key: usize,
    scan: &[Vector3<f64>],
    pose: &RigidTransform,
    extrinsic: &RigidTransform,
    map: &FeatureMap,
    cfg: &RunConfig,
    n_real: usize,
) -> Vec<VsFactor> {
    let p = &cfg.pipeline;
    if p.vs_scale <= 0.0 || map.is_empty() || scan.is_empty() {
        return Vec::new();
    }
    let stride = (scan.len() / p.vs_candidates.max(1)).max(1);
    let candidates: Vec<_> = scan
        .iter()
        .step_by(stride)
        .filter_map(|pt| {
            let q = virtual_sat::lidar_point_to_enu(pt, pose, extrinsic);
            virtual_sat::associate_planes(&q, map, &cfg.planarity).map(|lm| (*pt, lm))
        })
        .collect();
    let seed = cfg.seed ^ (key as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let chosen = virtual_sat::select_vs(&candidates, p.max_virtual_satellites, seed);
    let weight = virtual_sat::vs_weight(chosen.len(), n_real.max(1)).unwrap_or(1.0);
    let sigma = p.vs_sigma * (weight / p.vs_scale).sqrt();
    chosen
        .into_iter()
        .filter_map(|(pt, lm)| VsFactor::new(key, pt, *extrinsic, lm, sigma).ok())
        .collect()
}

struct Fusion<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    gravity: Vector3<f64>,
    extrinsic: RigidTransform,
    lever: Vector3<f64>,
    window: SlidingWindow,
    map: PointCloudMap,
    global: GlobalPoseGraph,
    track: AmbiguityTrack,
    keyframe_positions: Vec<Vector3<f64>>,
    out: RunOutput,
}

impl<'a> Fusion<'a> {
    fn new(cfg: &'a RunConfig, data: &'a Dataset) -> Result<Self, EvalError> {
        let m = &data.manifest;
        let Some(kf0) = data.keyframes.first() else {
            return Err(EvalError::Solver("dataset has no keyframes".into()));
        };
        let pose = m.initial.pose();
        let first = NavState {
            id: kf0.id,
            t: kf0.t,
            p: pose.translation,
            q: pose.rotation,
            v: Vector3::from(m.initial.velocity),
            ba: Vector3::zeros(),
            bg: Vector3::zeros(),
        };
        let gravity = imu::gravity_enu(m.gravity);
        let params = WindowParams {
            size: cfg.pipeline.window_size,
            ..Default::default()
        };
        let window = SlidingWindow::new(params, gravity, first, &cfg.pipeline.prior_sigmas());
        let extrinsic = m.extrinsic();
        let mut map = PointCloudMap::new(cfg.pipeline.map_max_keyframes, cfg.nlos.radius);
        map.accumulate(kf0.id, downsample(&kf0.points, cfg.pipeline.map_voxel), pose, extrinsic);
        let mut global = GlobalPoseGraph::new(cfg.global);
        global.add_keyframe(kf0.id, pose);
        Ok(Self {
            cfg,
            data,
            gravity,
            extrinsic,
            lever: Vector3::from(m.lever_arm),
            window,
            map,
            global,
            track: AmbiguityTrack::new(),
            keyframe_positions: vec![pose.translation],
            out: RunOutput::new(cfg.mode),
        })
    }

    fn run(mut self) -> Result<RunOutput, EvalError> {
        let kfs = &self.data.keyframes;
        let epochs = &self.data.epochs;
        let mut next = 0;
        while next < epochs.len() && epochs[next].time < kfs[0].t {
            self.out.record(EpochStatus::unsolved(next, epochs[next].time), None);
            next += 1;
        }
        for k in 1..kfs.len() {
            let start = next;
            while next < epochs.len() && epochs[next].time < kfs[k].t {
                next += 1;
            }
            self.step(k, start..next)?;
        }
        for (i, ep) in epochs.iter().enumerate().skip(next) {
            self.out.record(EpochStatus::unsolved(i, ep.time), None);
        }
        Ok(self.out)
    }

    /// One keyframe interval with the GNSS epochs `range` inside it.
    fn step(&mut self, k: usize, range: std::ops::Range<usize>) -> Result<(), EvalError> {
        let cfg = self.cfg;
        let p = &cfg.pipeline;
        let data = self.data;
        let kf = &data.keyframes[k];
        let prev = self.window.latest().clone();

        let seg = imu::samples_between(&data.imu, prev.t, kf.t);
        let delta = imu::integrate(&seg, &prev.ba, &prev.bg, &data.manifest.imu_noise)
            .map_err(|e| EvalError::Solver(format!("IMU between {} and {} s: {e}", prev.t, kf.t)))?;
        let mut pred = imu::propagate(&prev, &delta, &self.gravity);
        pred.id = kf.id;
        pred.t = kf.t;

        let scan = downsample(&kf.points, p.map_voxel);
        let features = (p.vs_scale > 0.0 && !self.map.is_empty())
            .then(|| FeatureMap::new(self.map.points().to_vec(), cfg.planarity.gate_radius));
        self.map.accumulate(kf.id, scan.clone(), pred.pose(), self.extrinsic);

        let mut inputs = Vec::new();
        let mut statuses = Vec::new();
        for i in range {
            let (e, st) = self.prepare_epoch(i, &prev, &pred);
            inputs.push(e);
            statuses.push(st);
        }
        let n_real: usize = inputs.iter().map(|e| e.pseudoranges.len()).sum();
        let vs = match &features {
            Some(f) => virtual_satellites(kf.id, &scan, &pred.pose(), &self.extrinsic, f, cfg, n_real),
            None => Vec::new(),
        };
        self.out.virtual_satellites.push(vs.len());
        self.window.add_keyframe(pred, delta, vs)?;
        for e in inputs {
            self.window.add_epoch(e)?;
        }
        self.window.optimize()?;
        self.out.families.extend(self.window.factor_counts().into_keys());

        let mut fixes = Vec::new();
        for st in statuses {
            fixes.push(self.resolve_epoch(st)?);
        }
        let latest = self.window.latest().pose();
        let corrected = self.global.update(kf.id, latest, fixes)?;
        self.map
            .repose(&corrected)
            .map_err(|e: PcmError| EvalError::Solver(e.to_string()))?;
        self.keyframe_positions.push(latest.translation);
        self.map
            .set_window(pcm::adaptive_window(&self.keyframe_positions, p.map_span, p.map_max_keyframes));
        self.window.enforce_size()?;
        Ok(())
    }

    /// Screens, differences and slip-checks one epoch against the predicted state.
    fn prepare_epoch(&mut self, i: usize, prev: &NavState, pred: &NavState) -> (GnssEpoch, EpochStatus) {
        let cfg = self.cfg;
        let data = self.data;
        let ep = &data.epochs[i];
        let origin = &data.origin;
        let link = EpochLink {
            k0: prev.id,
            k1: pred.id,
            alpha: ((pred.t - ep.time) / (pred.t - prev.t)).clamp(0.0, 1.0),
            lever_arm: self.lever,
            origin: *origin,
            base_pos: ep.base_pos,
        };
        let rx_enu = link.receiver_enu(prev, pred);
        let labels = pcm::classify_epoch(&self.map, &rx_enu, ep, origin, &cfg.nlos);
        let mut st = EpochStatus::unsolved(i, ep.time);
        let obs = if cfg.mode.excludes_nlos() {
            match pcm::exclude_nlos(ep, &labels) {
                Ok((o, rep)) => {
                    st.n_excluded = rep.excluded.len();
                    o
                }
                Err(_) => {
                    st.n_excluded = labels.iter().filter(|l| l.visibility.is_nlos()).count();
                    EpochObs {
                        rover: Vec::new(),
                        ..ep.clone()
                    }
                }
            }
        } else {
            ep.clone()
        };
        self.skyplot(i, ep.time, &labels);

        let rx_ec = origin.enu_to_ecef(&rx_enu);
        let masters = gnss::select_masters(&obs, &rx_ec, origin);
        let dds = gnss::form_double_differences(&obs, &masters, origin, &data.manifest.gnss_noise).observations;
        let floats: Vec<FloatAmbiguity> = dds
            .iter()
            .map(|d| FloatAmbiguity {
                sat: d.sat,
                master: d.master,
                value: estimate_dd_ambiguity_float(d, &rx_ec, &ep.base_pos),
                lock_lost: d.lock_lost,
            })
            .collect();
        let outcome = self.track.detect_cycle_slips(i, &floats, cfg.pipeline.slip_threshold);
        self.out.slips.extend(outcome.reports);
        let carriers = dds
            .iter()
            .zip(&floats)
            .filter(|(d, _)| !d.lock_lost)
            .map(|(d, f)| CarrierInput {
                dd: d.clone(),
                initial_ambiguity: f.value,
            })
            .collect();
        let dopplers = if cfg.pipeline.use_doppler {
            obs.rover.iter().map(|o| (o.clone(), data.manifest.doppler_sigma_hz)).collect()
        } else {
            Vec::new()
        };
        st.n_dd = dds.len();
        (
            GnssEpoch {
                epoch: i,
                time: ep.time,
                link,
                pseudoranges: dds,
                carriers,
                dopplers,
                continuing: outcome.continuing,
            },
            st,
        )
    }

    fn skyplot(&mut self, epoch: usize, t: f64, labels: &[VisibilityLabel]) {
        let exclude = self.cfg.mode.excludes_nlos();
        self.out.skyplot.extend(labels.iter().map(|l| SkyRow {
            epoch,
            t,
            sat: l.sat.to_string(),
            azimuth_deg: l.azimuth.to_degrees(),
            elevation_deg: l.elevation.to_degrees(),
            nlos: l.visibility.is_nlos(),
            excluded: exclude && l.visibility.is_nlos(),
        }));
    }

    /// Float solution, integer fix and reported position of an epoch already in the window.
    fn resolve_epoch(&mut self, mut st: EpochStatus) -> Result<(AbsoluteFix, bool), EvalError> {
        let p = &self.cfg.pipeline;
        let (float, _sats): (FloatSolution, Vec<SatId>) = self.window.float_solution(st.epoch)?;
        let link = self.window.epoch_link(st.epoch)?.clone();
        let near_id = if link.alpha >= 0.5 { link.k0 } else { link.k1 };
        let q = self
            .window
            .nav(near_id)
            .map(|x| x.q)
            .ok_or_else(|| EvalError::Solver(format!("keyframe {near_id} left the window early")))?;
        st.adop = adop_of(&float);
        let mut antenna = float.position;
        let mut fixed = false;
        if let Some(fix) = resolve(&float, p.min_ambiguities, p.ratio_threshold) {
            st.ratio = fix.ratio;
            if fix.accepted {
                fixed = true;
                antenna = fix.position;
            }
        }
        st.fixed = fixed;
        let body = antenna - q * self.lever;
        let covariance = Matrix3::from_iterator(float.q_pp.iter().copied());
        self.out.record(st, Some((body, q)));
        Ok((
            AbsoluteFix {
                i: link.k0,
                j: link.k1,
                alpha: link.alpha,
                position: body,
                covariance,
            },
            fixed,
        ))
    }
}
