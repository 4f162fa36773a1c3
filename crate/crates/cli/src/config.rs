//! Run configuration: which dataset, which estimator and every tunable.

use crate::EvalError;
use canyon_rtk::fgo::global::GlobalGraphParams;
use canyon_rtk::pcm::NlosSearchParams;
use canyon_rtk::virtual_sat::PlanarityParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Epoch-wise DD least squares and LAMBDA, no inertial or LiDAR information.
    RtkOnly,
    /// Sliding-window GNSS/IMU/virtual-satellite fusion.
    FgoVs,
    /// As `FgoVs`, with point-cloud NLOS exclusion.
    #[default]
    FgoVsNlos,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::RtkOnly, Mode::FgoVs, Mode::FgoVsNlos];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::RtkOnly => "rtk_only",
            Mode::FgoVs => "fgo_vs",
            Mode::FgoVsNlos => "fgo_vs_nlos",
        }
    }

    pub fn uses_window(&self) -> bool {
        !matches!(self, Mode::RtkOnly)
    }

    pub fn excludes_nlos(&self) -> bool {
        matches!(self, Mode::FgoVsNlos)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    /// Keyframes in the sliding window.
    pub window_size: usize,
    pub ratio_threshold: f64,
    /// Triple-difference slip threshold (cycles).
    pub slip_threshold: f64,
    /// Fewest DD ambiguities worth an integer search.
    pub min_ambiguities: usize,
    pub max_virtual_satellites: usize,
    /// Scan points tried for plane association per keyframe.
    pub vs_candidates: usize,
    /// Point-to-plane sigma before weighting (m).
    pub vs_sigma: f64,
    /// Multiplies the information of every virtual satellite; zero disables them.
    pub vs_scale: f64,
    /// Scan downsampling voxel (m).
    pub map_voxel: f64,
    /// Travelled distance the point cloud map should cover (m).
    pub map_span: f64,
    pub map_max_keyframes: usize,
    pub use_doppler: bool,
    /// Prior on the first keyframe: position (m), attitude (rad), velocity (m/s), biases.
    pub prior_position: f64,
    pub prior_attitude: f64,
    pub prior_velocity: f64,
    pub prior_accel_bias: f64,
    pub prior_gyro_bias: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            window_size: 10,
            ratio_threshold: canyon_rtk::ambiguity::DEFAULT_RATIO_THRESHOLD,
            slip_threshold: canyon_rtk::cycle_slip::DEFAULT_SLIP_THRESHOLD,
            min_ambiguities: 2,
            max_virtual_satellites: 200,
            vs_candidates: 1000,
            vs_sigma: 0.1,
            vs_scale: 1.0,
            map_voxel: 0.4,
            map_span: 250.0,
            map_max_keyframes: 60,
            use_doppler: true,
            prior_position: 1.0,
            prior_attitude: 0.02,
            prior_velocity: 0.2,
            prior_accel_bias: 0.1,
            prior_gyro_bias: 0.005,
        }
    }
}

impl PipelineParams {
    pub fn prior_sigmas(&self) -> [f64; 15] {
        let mut s = [0.0; 15];
        for (i, v) in [
            self.prior_position,
            self.prior_attitude,
            self.prior_velocity,
            self.prior_accel_bias,
            self.prior_gyro_bias,
        ]
        .into_iter()
        .enumerate()
        {
            s[3 * i..3 * i + 3].fill(v);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory; relative paths resolve against the config file.
    pub dataset: PathBuf,
    pub mode: Mode,
    pub output: PathBuf,
    /// Seeds virtual-satellite subsampling.
    pub seed: u64,
    /// Also run `rtk_only` so the summary can report improvements against it.
    pub compare_baseline: bool,
    pub pipeline: PipelineParams,
    pub nlos: NlosSearchParams,
    pub planarity: PlanarityParams,
    pub global: GlobalGraphParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset"),
            mode: Mode::default(),
            output: PathBuf::from("out"),
            seed: 0,
            compare_baseline: true,
            pipeline: PipelineParams::default(),
            nlos: NlosSearchParams::default(),
            planarity: PlanarityParams::default(),
            global: GlobalGraphParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, EvalError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EvalError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = dir.join(&cfg.dataset);
        }
        if cfg.output.is_relative() {
            cfg.output = dir.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    fn validate(&self, path: &Path) -> Result<(), EvalError> {
        let p = &self.pipeline;
        let bad = |m: &str| {
            Err(EvalError::Config {
                path: path.to_path_buf(),
                message: m.to_string(),
            })
        };
        if p.window_size < 2 {
            return bad("pipeline.window_size must be at least 2");
        }
        if !(p.ratio_threshold >= 1.0) {
            return bad("pipeline.ratio_threshold must be at least 1");
        }
        if !(p.vs_sigma > 0.0) || !(p.map_voxel > 0.0) {
            return bad("pipeline.vs_sigma and pipeline.map_voxel must be positive");
        }
        if !(p.vs_scale >= 0.0) {
            return bad("pipeline.vs_scale must be non-negative");
        }
        if !(self.nlos.step > 0.0) || !(self.nlos.radius > 0.0) {
            return bad("nlos.step and nlos.radius must be positive");
        }
        Ok(())
    }
}
