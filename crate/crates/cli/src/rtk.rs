//! Single-epoch RTK: DD code and carrier least squares followed by LAMBDA.

use canyon_rtk::ambiguity::FloatSolution;
use canyon_rtk::cycle_slip::estimate_dd_ambiguity_float;
use canyon_rtk::gnss::{self, DdObservation, EpochObs, NoiseModel, SatId};
use canyon_rtk::GeodeticOrigin;
use nalgebra::{DMatrix, DVector, Vector3};

/// Fewest DD pseudoranges for an over-determined position.
pub const MIN_PSEUDORANGES: usize = 4;
const ITERATIONS: usize = 10;

#[derive(Debug, Clone)]
pub struct EpochFloat {
    /// Antenna position in ENU with ambiguities and covariance.
    pub float: FloatSolution,
    pub sats: Vec<SatId>,
    pub n_dd: usize,
}

/// Float antenna position and DD ambiguities from one epoch alone.
///
/// Carriers flagged for loss of lock are left out; all pseudoranges are used.
pub fn solve_epoch(epoch: &EpochObs, origin: &GeodeticOrigin, noise: &NoiseModel, start_enu: &Vector3<f64>) -> Option<EpochFloat> {
    let base = epoch.base_pos;
    let r_ec = origin.enu_to_ecef_rotation();
    let masters = gnss::select_masters(epoch, &origin.enu_to_ecef(start_enu), origin);
    let dds = gnss::form_double_differences(epoch, &masters, origin, noise).observations;
    if dds.len() < MIN_PSEUDORANGES {
        return None;
    }
    let carriers: Vec<&DdObservation> = dds.iter().filter(|d| !d.lock_lost).collect();
    let m = carriers.len();
    let n = 3 + m;
    let mut p = *start_enu;
    let p_ec = origin.enu_to_ecef(&p);
    let mut amb = DVector::from_iterator(m, carriers.iter().map(|d| estimate_dd_ambiguity_float(d, &p_ec, &base)));
    let mut h = DMatrix::zeros(n, n);
    for _ in 0..ITERATIONS {
        let p_ec = origin.enu_to_ecef(&p);
        h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut add = |row: DVector<f64>, r: f64, sigma: f64| {
            let w = 1.0 / (sigma * sigma);
            h += &row * row.transpose() * w;
            b += row * (r * w);
        };
        for d in &dds {
            let g = gnss::geometric_dd_gradient(d, &p_ec) * r_ec;
            let mut row = DVector::zeros(n);
            row.rows_mut(0, 3).copy_from(&g.transpose());
            add(row, gnss::dd_pseudorange_residual(d, &p_ec, &base), d.sigma_rho);
        }
        for (i, d) in carriers.iter().enumerate() {
            let g = gnss::geometric_dd_gradient(d, &p_ec) * r_ec;
            let mut row = DVector::zeros(n);
            row.rows_mut(0, 3).copy_from(&g.transpose());
            row[3 + i] = d.wavelength;
            add(row, gnss::dd_carrierphase_residual(d, &p_ec, &base, amb[i]), d.sigma_psi);
        }
        let dx = h.clone().cholesky()?.solve(&b);
        p += Vector3::new(dx[0], dx[1], dx[2]);
        amb += dx.rows(3, m);
        if dx.norm() < 1e-9 {
            break;
        }
    }
    let cov = h.cholesky()?.inverse();
    let q_pp = cov.view((0, 0), (3, 3)).into_owned();
    let q_nn = cov.view((3, 3), (m, m)).into_owned();
    let q_np = cov.view((3, 0), (m, 3)).into_owned();
    Some(EpochFloat {
        float: FloatSolution {
            position: p,
            ambiguities: amb,
            q_pp,
            q_nn,
            q_np,
        },
        sats: carriers.iter().map(|d| d.sat).collect(),
        n_dd: dds.len(),
    })
}
