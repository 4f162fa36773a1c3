//! Triple-difference cycle-slip detection and the constant-ambiguity link between epochs.

use crate::frames::EcefPoint;
use crate::gnss::{geometric_dd, DdObservation, SatId};
use crate::io::DatasetError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const DEFAULT_SLIP_THRESHOLD: f64 = 0.5;

/// Float DD ambiguity (cycles) implied by a predicted receiver position.
pub fn estimate_dd_ambiguity_float(dd: &DdObservation, p_r: &EcefPoint, p_e: &EcefPoint) -> f64 {
    dd.carrier - geometric_dd(dd, p_r, p_e) / dd.wavelength
}

/// Residual of the constant-ambiguity factor (cycles).
pub fn constant_ambiguity_residual(n_t: f64, n_prev: f64) -> f64 {
    n_t - n_prev
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipMethod {
    LidarAided,
    ReceiverFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipReport {
    pub epoch: usize,
    pub sat: SatId,
    /// Triple-differenced ambiguity (cycles); zero for receiver flags on a fresh track.
    pub td_value: f64,
    pub threshold: f64,
    pub method: SlipMethod,
}

/// One satellite's float ambiguity at the current epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatAmbiguity {
    pub sat: SatId,
    pub master: SatId,
    pub value: f64,
    pub lock_lost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TrackEntry {
    value: f64,
    master: SatId,
    epoch: usize,
}

/// Per-satellite ambiguity history between consecutive epochs.
#[derive(Debug, Clone, Default)]
pub struct AmbiguityTrack {
    entries: BTreeMap<SatId, TrackEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlipOutcome {
    pub reports: Vec<SlipReport>,
    /// Satellites whose ambiguity continues from the previous epoch without a slip.
    pub continuing: BTreeSet<SatId>,
}

impl AmbiguityTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, sat: SatId) -> Option<f64> {
        self.entries.get(&sat).map(|e| e.value)
    }

    /// Compares `current` against the previous epoch and replaces the track with it.
    ///
    /// A satellite continues only if it was seen at `epoch - 1` against the same master,
    /// carries no loss-of-lock flag and its triple difference stays within `threshold`.
    pub fn detect_cycle_slips(&mut self, epoch: usize, current: &[FloatAmbiguity], threshold: f64) -> SlipOutcome {
        let mut out = SlipOutcome::default();
        let mut next = BTreeMap::new();
        for a in current {
            let prev = self
                .entries
                .get(&a.sat)
                .filter(|e| e.master == a.master && epoch > 0 && e.epoch == epoch - 1);
            if a.lock_lost {
                out.reports.push(SlipReport {
                    epoch,
                    sat: a.sat,
                    td_value: prev.map_or(0.0, |p| a.value - p.value),
                    threshold,
                    method: SlipMethod::ReceiverFlag,
                });
            } else if let Some(p) = prev {
                let td = a.value - p.value;
                if td.abs() > threshold {
                    out.reports.push(SlipReport {
                        epoch,
                        sat: a.sat,
                        td_value: td,
                        threshold,
                        method: SlipMethod::LidarAided,
                    });
                } else {
                    out.continuing.insert(a.sat);
                }
            }
            next.insert(
                a.sat,
                TrackEntry {
                    value: a.value,
                    master: a.master,
                    epoch,
                },
            );
        }
        self.entries = next;
        out
    }
}

#[derive(Serialize)]
struct SlipRow<'a> {
    epoch: usize,
    prn: String,
    n_td: f64,
    method: &'a SlipMethod,
}

pub fn write_slip_report(path: &Path, reports: &[SlipReport]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    if reports.is_empty() {
        w.write_record(["epoch", "prn", "n_td", "method"])
            .map_err(|e| DatasetError::csv(path, e))?;
    }
    for r in reports {
        w.serialize(SlipRow {
            epoch: r.epoch,
            prn: r.sat.to_string(),
            n_td: r.td_value,
            method: &r.method,
        })
        .map_err(|e| DatasetError::csv(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}
