//! Tightly coupled GNSS-RTK / IMU / LiDAR positioning for urban canyons.
//!
//! Double-differenced code and carrier, IMU preintegration and LiDAR point-to-plane
//! constraints share one sliding-window factor graph. A local point cloud map screens
//! satellites for non-line-of-sight reception, and LAMBDA resolves the integer ambiguities.

pub mod ambiguity;
pub mod cycle_slip;
pub mod fgo;
pub mod frames;
pub mod gnss;
pub mod imu;
pub mod io;
pub mod pcm;
pub mod so3;
pub mod spatial;
pub mod virtual_sat;

pub use frames::{GeodeticOrigin, RigidTransform};
pub use gnss::{Constellation, EpochObs, SatId, SatObs};
