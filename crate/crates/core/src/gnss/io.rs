use super::{Constellation, EpochObs, SatId, SatObs};
use crate::frames::EcefPoint;
use crate::io::DatasetError;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverId {
    Rover,
    Base,
}

/// One line of an observation file. Field order is fixed; `lli` is an optional trailing column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch_time: f64,
    pub receiver_id: ReceiverId,
    pub constellation: Constellation,
    pub prn: u16,
    pub pseudorange_m: f64,
    pub carrier_cycles: f64,
    pub doppler_hz: f64,
    pub snr_dbhz: f64,
    pub wavelength_m: f64,
    pub sat_x: f64,
    pub sat_y: f64,
    pub sat_z: f64,
    pub sat_vx: f64,
    pub sat_vy: f64,
    pub sat_vz: f64,
    pub sat_clk_s: f64,
    pub sat_clkdrift: f64,
    #[serde(default)]
    pub lli: u8,
}

impl EpochRecord {
    pub fn from_obs(receiver_id: ReceiverId, o: &SatObs) -> Self {
        Self {
            epoch_time: o.time,
            receiver_id,
            constellation: o.sat.constellation,
            prn: o.sat.prn,
            pseudorange_m: o.pseudorange,
            carrier_cycles: o.carrier,
            doppler_hz: o.doppler,
            snr_dbhz: o.snr,
            wavelength_m: o.wavelength,
            sat_x: o.sat_pos.x,
            sat_y: o.sat_pos.y,
            sat_z: o.sat_pos.z,
            sat_vx: o.sat_vel.x,
            sat_vy: o.sat_vel.y,
            sat_vz: o.sat_vel.z,
            sat_clk_s: o.sat_clock_bias,
            sat_clkdrift: o.sat_clock_drift,
            lli: o.lock_lost as u8,
        }
    }

    pub fn to_obs(&self) -> SatObs {
        SatObs {
            sat: SatId::new(self.constellation, self.prn),
            time: self.epoch_time,
            pseudorange: self.pseudorange_m,
            carrier: self.carrier_cycles,
            doppler: self.doppler_hz,
            snr: self.snr_dbhz,
            wavelength: self.wavelength_m,
            sat_pos: Vector3::new(self.sat_x, self.sat_y, self.sat_z),
            sat_vel: Vector3::new(self.sat_vx, self.sat_vy, self.sat_vz),
            sat_clock_bias: self.sat_clk_s,
            sat_clock_drift: self.sat_clkdrift,
            lock_lost: self.lli != 0,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.pseudorange_m > 0.0) {
            return Err(format!("non-positive pseudorange {}", self.pseudorange_m));
        }
        if !(self.wavelength_m > 0.0) {
            return Err(format!("non-positive wavelength {}", self.wavelength_m));
        }
        if !(self.snr_dbhz >= 0.0) {
            return Err(format!("negative snr {}", self.snr_dbhz));
        }
        if ![self.sat_x, self.sat_y, self.sat_z].iter().all(|v| v.is_finite()) {
            return Err("non-finite satellite position".into());
        }
        Ok(())
    }
}

/// Writes epochs in time order, rover rows before base rows.
pub fn write_epoch_file(path: &Path, epochs: &[EpochObs]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::csv(path, e))?;
    for ep in epochs {
        let rows = ep
            .rover
            .iter()
            .map(|o| (ReceiverId::Rover, o))
            .chain(ep.base.iter().map(|o| (ReceiverId::Base, o)));
        for (id, o) in rows {
            w.serialize(EpochRecord::from_obs(id, o))
                .map_err(|e| DatasetError::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

/// Reads an observation file and groups its rows into epochs sharing `base_pos`.
pub fn read_epoch_file(path: &Path, base_pos: EcefPoint) -> Result<Vec<EpochObs>, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::csv(path, e))?;
    let mut epochs: BTreeMap<u64, EpochObs> = BTreeMap::new();
    for (i, rec) in r.deserialize::<EpochRecord>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DatasetError::parse(path, line, e.to_string()))?;
        rec.validate().map_err(|m| DatasetError::parse(path, line, m))?;
        // epochs keyed on the millisecond so float jitter cannot split them
        let key = (rec.epoch_time * 1000.0).round() as u64;
        let ep = epochs.entry(key).or_insert_with(|| EpochObs {
            time: rec.epoch_time,
            base_pos,
            ..Default::default()
        });
        match rec.receiver_id {
            ReceiverId::Rover => ep.rover.push(rec.to_obs()),
            ReceiverId::Base => ep.base.push(rec.to_obs()),
        }
    }
    Ok(epochs.into_values().collect())
}
