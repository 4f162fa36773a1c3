//! Positioning error statistics, fix rate and availability.

use canyon_rtk::io::PoseStamped;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Estimates and truth are paired by nearest timestamp within this tolerance (s).
pub const MATCH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no estimated epoch lies within {MATCH_TOLERANCE} s of a truth sample")]
    NoOverlap,
}

/// Outcome of one GNSS epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStatus {
    pub epoch: usize,
    pub t: f64,
    pub solved: bool,
    /// Integer fix accepted by the ratio test.
    pub fixed: bool,
    pub ratio: f64,
    pub n_dd: usize,
    pub n_excluded: usize,
    pub adop: Option<f64>,
    /// Body position (ENU) of the reported solution.
    pub east: Option<f64>,
    pub north: Option<f64>,
    pub up: Option<f64>,
}

impl EpochStatus {
    pub fn unsolved(epoch: usize, t: f64) -> Self {
        Self {
            epoch,
            t,
            solved: false,
            fixed: false,
            ratio: 0.0,
            n_dd: 0,
            n_excluded: 0,
            adop: None,
            east: None,
            north: None,
            up: None,
        }
    }

    pub fn position(&self) -> Option<[f64; 3]> {
        Some([self.east?, self.north?, self.up?])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub t: f64,
    pub error_2d: f64,
    pub error_3d: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizontal: Stats,
    pub spatial: Stats,
    /// Percent of solved epochs with an accepted fix.
    pub fix_rate: f64,
    /// Percent of epochs with a solution.
    pub availability: f64,
    pub trace: Vec<ErrorSample>,
}

fn nearest(truth: &[PoseStamped], t: f64) -> Option<&PoseStamped> {
    let i = truth.partition_point(|p| p.t < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| truth.get(j))
        .filter(|p| (p.t - t).abs() <= MATCH_TOLERANCE)
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

/// Scores `estimated` against time-sorted `truth`.
///
/// Fix rate and availability come from `statuses`; with no statuses every estimate
/// counts as an unfixed solution.
pub fn compute_metrics(
    estimated: &[PoseStamped],
    truth: &[PoseStamped],
    statuses: &[EpochStatus],
) -> Result<MetricsReport, MetricsError> {
    let mut trace = Vec::new();
    for e in estimated {
        let Some(tr) = nearest(truth, e.t) else {
            continue;
        };
        let d = e.pose.translation - tr.pose.translation;
        let fixed = statuses
            .iter()
            .find(|s| (s.t - e.t).abs() <= 1e-9)
            .is_some_and(|s| s.fixed);
        trace.push(ErrorSample {
            t: e.t,
            error_2d: d.xy().norm(),
            error_3d: d.norm(),
            fixed,
        });
    }
    if trace.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let e2: Vec<f64> = trace.iter().map(|s| s.error_2d).collect();
    let e3: Vec<f64> = trace.iter().map(|s| s.error_3d).collect();
    let (fix_rate, availability) = if statuses.is_empty() {
        (0.0, 100.0)
    } else {
        let solved = statuses.iter().filter(|s| s.solved).count();
        let fixed = statuses.iter().filter(|s| s.solved && s.fixed).count();
        let rate = if solved == 0 { 0.0 } else { 100.0 * fixed as f64 / solved as f64 };
        (rate, 100.0 * solved as f64 / statuses.len() as f64)
    };
    Ok(MetricsReport {
        horizontal: Stats::of(&e2),
        spatial: Stats::of(&e3),
        fix_rate,
        availability,
        trace,
    })
}

/// Percent reduction of `value` relative to `reference`.
pub fn improvement(reference: f64, value: f64) -> Option<f64> {
    (reference > 0.0).then(|| 100.0 * (reference - value) / reference)
}
