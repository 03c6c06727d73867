//! Safe mapping of scalar fields with Gaussian processes.
//!
//! A GP model of an unknown field is refined along a planned measurement
//! tour. After each measurement, grid points whose upper confidence bound
//! may exceed a safety threshold form a binary map; ball-shaped unsafe
//! regions are extracted from it (circular Hough transform in 2D,
//! connected components in 3D), future measurement points inside them are
//! moved to the nearest estimated-safe grid point, and RRT* plans the
//! collision-free leg to the next point.

pub mod analysis;
pub mod config;
pub mod detector;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gp;
pub mod io;
pub mod planner;
pub mod replanner;
pub mod rng;
pub mod rrtstar;
pub mod safety;

pub use config::ExperimentConfig;
pub use detector::{classify, detect, Classification, DetectedRegionSet, DetectorParams, Region};
pub use error::{Error, Result};
pub use field::{eval_field, true_safety, FieldSpec, MeasurementModel, Safety, SafetyThreshold};
pub use geometry::{Bounds, Point};
pub use gp::{
    kernel, mutual_information, posterior, posterior_covariance_matrix, Dataset, GpModel,
    KernelParams, Posterior,
};
pub use planner::{greedy_info_gain, mvs_select, nn_order, MeasurementPlan, SlotStatus};
pub use replanner::{run_episode, Episode, EpisodeConfig, SamplingMode};
pub use rrtstar::{path_length, PlannerParams};
pub use safety::{
    beta, binary_map, safe_subset, BinarySafetyMap, ConfidenceSchedule, PiRule, TestGrid,
};
