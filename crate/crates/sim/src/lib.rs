//! Synthetic urban-canyon worlds and the GNSS, IMU and LiDAR streams a vehicle
//! driving through them would record, together with the ground truth.

pub mod dataset;
pub mod scenario;
pub mod synth;
pub mod trajectory;
pub mod world;

pub use dataset::{generate, Dataset, Manifest};
pub use scenario::Scenario;
pub use world::{Aabb, World};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degenerate box: min {min:?} max {max:?}")]
    DegenerateBox { min: [f64; 3], max: [f64; 3] },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario file {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] canyon_rtk::io::DatasetError),
}
