use super::factors::{AbsolutePositionFactor, BetweenFactor, PriorFactor};
use super::graph::{optimize, FactorGraph, FgoError, OptimizerParams, Values, Var, VarKey};
use crate::frames::RigidTransform;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalGraphParams {
    pub sigma_relative_pos: f64,
    pub sigma_relative_rot: f64,
    /// Position sigma applied to fixed (integer-resolved) solutions.
    pub sigma_fixed: f64,
    /// Number of most recent keyframes re-optimized on each update.
    pub scope: usize,
}

impl Default for GlobalGraphParams {
    fn default() -> Self {
        Self {
            sigma_relative_pos: 0.02,
            sigma_relative_rot: 0.002,
            sigma_fixed: 0.05,
            scope: 60,
        }
    }
}

/// An absolute body-position observation at a time between keyframes `i` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteFix {
    pub i: usize,
    pub j: usize,
    /// Weight of keyframe `i`.
    pub alpha: f64,
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Keyframe pose graph with odometry edges and absolute GNSS position priors.
#[derive(Debug, Clone, Default)]
pub struct GlobalPoseGraph {
    params: GlobalGraphParams,
    odometry: BTreeMap<usize, RigidTransform>,
    estimates: BTreeMap<usize, RigidTransform>,
    fixes: Vec<AbsoluteFix>,
}

impl GlobalPoseGraph {
    pub fn new(params: GlobalGraphParams) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }

    pub fn poses(&self) -> &BTreeMap<usize, RigidTransform> {
        &self.estimates
    }

    /// Adds a keyframe with its odometry pose; the new estimate chains from the previous corrected pose.
    pub fn add_keyframe(&mut self, id: usize, odometry_pose: RigidTransform) {
        let init = match (self.odometry.iter().next_back(), self.estimates.iter().next_back()) {
            (Some((_, prev_odo)), Some((_, prev_est))) => prev_est.compose(&prev_odo.inverse().compose(&odometry_pose)),
            _ => odometry_pose,
        };
        self.odometry.insert(id, odometry_pose);
        self.estimates.insert(id, init);
    }

    /// Absolute fix; the covariance is replaced by the fixed-solution sigma when `fixed` is set.
    pub fn add_fix(&mut self, mut fix: AbsoluteFix, fixed: bool) {
        if fixed {
            fix.covariance = Matrix3::identity() * self.params.sigma_fixed.powi(2);
        }
        self.fixes.push(fix);
    }

    pub fn update(
        &mut self,
        id: usize,
        odometry_pose: RigidTransform,
        fixes: Vec<(AbsoluteFix, bool)>,
    ) -> Result<BTreeMap<usize, RigidTransform>, FgoError> {
        self.add_keyframe(id, odometry_pose);
        for (f, fixed) in fixes {
            self.add_fix(f, fixed);
        }
        self.optimize()
    }

    /// Re-optimizes the most recent `scope` keyframes and returns all corrected poses.
    pub fn optimize(&mut self) -> Result<BTreeMap<usize, RigidTransform>, FgoError> {
        let ids: Vec<usize> = self.estimates.keys().copied().collect();
        if ids.is_empty() {
            return Ok(BTreeMap::new());
        }
        let first = ids.len().saturating_sub(self.params.scope.max(2));
        let active = &ids[first..];
        let lo = active[0];
        let mut values = Values::new();
        for id in active {
            values.insert(VarKey::Pose(*id), Var::Pose(self.estimates[id]));
        }
        let mut graph = FactorGraph::new();
        for w in active.windows(2) {
            let rel = self.odometry[&w[0]].inverse().compose(&self.odometry[&w[1]]);
            graph.add(BetweenFactor::new(
                w[0],
                w[1],
                rel,
                self.params.sigma_relative_pos,
                self.params.sigma_relative_rot,
            ));
        }
        let mut n_abs = 0;
        for f in self.fixes.iter().filter(|f| f.i >= lo && values.contains(&VarKey::Pose(f.j))) {
            let Some(s) = f.covariance.cholesky().map(|c| c.l()).and_then(|l| l.try_inverse()) else {
                continue;
            };
            graph.add(AbsolutePositionFactor {
                i: f.i,
                j: f.j,
                alpha: f.alpha,
                measured: f.position,
                sqrt_info: s,
            });
            n_abs += 1;
        }
        // gauge: hold the oldest active pose hard without fixes, loosely with them
        let (sp, sr) = if n_abs == 0 { (1e-6, 1e-6) } else { (10.0, 0.5) };
        graph.add(PriorFactor::new(
            VarKey::Pose(lo),
            Var::Pose(self.estimates[&lo]),
            &[sp, sp, sp, sr, sr, sr],
        ));
        let params = OptimizerParams {
            max_iterations: 10,
            ..Default::default()
        };
        let rep = optimize(&graph, &values, &params)?;
        for id in active {
            self.estimates.insert(*id, *rep.values.pose(VarKey::Pose(*id))?);
        }
        Ok(self.estimates.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(k: usize) -> RigidTransform {
        RigidTransform::from_yaw(0.01 * k as f64, Vector3::new(0.3 * k as f64, 5.0 * k as f64, 0.0))
    }

    #[test]
    fn consistent_inputs_leave_poses_unchanged() {
        let mut g = GlobalPoseGraph::new(GlobalGraphParams::default());
        for k in 0..20 {
            let fixes = vec![(
                AbsoluteFix {
                    i: k,
                    j: k,
                    alpha: 1.0,
                    position: truth(k).translation,
                    covariance: Matrix3::identity() * 0.01,
                },
                k % 2 == 0,
            )];
            let out = g.update(k, truth(k), fixes).unwrap();
            for (id, p) in out {
                assert!((p.translation - truth(id).translation).norm() < 1e-9);
                assert!(p.rotation.angle_to(&truth(id).rotation) < 1e-9);
            }
        }
    }

    #[test]
    fn odometry_only_chain_is_returned() {
        let mut g = GlobalPoseGraph::new(GlobalGraphParams::default());
        for k in 0..10 {
            let out = g.update(k, truth(k), vec![]).unwrap();
            assert!((out[&k].translation - truth(k).translation).norm() < 1e-6);
        }
    }

    #[test]
    fn yaw_drift_is_removed_by_fixes() {
        let n = 50;
        let drift = 2f64.to_radians();
        // odometry accumulates a yaw error that grows linearly to 2°
        let mut odo = vec![truth(0)];
        for k in 1..n {
            let step = truth(k - 1).inverse().compose(&truth(k));
            let err = RigidTransform::from_yaw(drift / n as f64, Vector3::zeros());
            odo.push(odo[k - 1].compose(&err).compose(&step));
        }
        let uncorrected = (odo[n - 1].translation - truth(n - 1).translation).norm();
        let mut g = GlobalPoseGraph::new(GlobalGraphParams::default());
        let mut out = BTreeMap::new();
        for k in 0..n {
            let fix = AbsoluteFix {
                i: k,
                j: k,
                alpha: 1.0,
                position: truth(k).translation,
                covariance: Matrix3::identity(),
            };
            out = g.update(k, odo[k], vec![(fix, true)]).unwrap();
        }
        let corrected = (out[&(n - 1)].translation - truth(n - 1).translation).norm();
        assert!(corrected <= 0.1 * uncorrected, "{corrected} vs {uncorrected}");
    }
}
