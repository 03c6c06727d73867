//! Unsafe-region extraction from binary safety maps.

mod components;
mod hough;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::safety::{BinarySafetyMap, TestGrid};

pub use components::{detect_3d, ComponentParams};
pub use hough::{detect_2d, ideal_votes, HoughParams, Suppression};

/// A detected closed ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Point,
    pub radius: f64,
    /// Accumulator votes (2D) or voxel count (3D).
    pub support: f64,
    /// The fitted radius fell outside the configured range and was clamped.
    pub clamped: bool,
}

impl Region {
    pub fn contains(&self, x: &Point) -> bool {
        x.dist2(&self.center) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectedRegionSet {
    pub t: usize,
    pub regions: Vec<Region>,
}

impl DetectedRegionSet {
    pub fn empty(t: usize) -> Self {
        DetectedRegionSet {
            t,
            regions: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Membership in the union of detected closed balls.
    pub fn in_unsafe(&self, x: &Point) -> bool {
        self.regions.iter().any(|r| r.contains(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Unsafe,
    Safe,
}

pub fn classify(regions: &DetectedRegionSet, x: &Point) -> Classification {
    if regions.in_unsafe(x) {
        Classification::Unsafe
    } else {
        Classification::Safe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub hough: HoughParams,
    pub components: ComponentParams,
    /// Keep only regions that enclose a grid point whose posterior mean
    /// exceeds the threshold.
    pub require_mean_evidence: bool,
}

/// Drops regions without a grid point inside whose `mean` exceeds `level`.
pub fn filter_by_evidence(
    set: DetectedRegionSet,
    grid: &TestGrid,
    mean: &[f64],
    level: f64,
) -> DetectedRegionSet {
    let regions = set
        .regions
        .into_iter()
        .filter(|r| {
            let keep = grid
                .points()
                .iter()
                .zip(mean)
                .any(|(p, m)| *m > level && r.contains(p));
            if !keep {
                log::debug!("region at {:?} has no mean evidence; dropped", r.center);
            }
            keep
        })
        .collect();
    DetectedRegionSet { t: set.t, regions }
}

/// Runs the detector that matches the map's dimension.
pub fn detect(
    map: &BinarySafetyMap,
    grid: &TestGrid,
    params: &DetectorParams,
) -> Result<DetectedRegionSet> {
    if map.bits.len() != grid.len() {
        return Err(Error::arg("map and grid sizes differ"));
    }
    match grid.dim() {
        2 => detect_2d(map, grid, &params.hough),
        _ => Ok(detect_3d(map, grid, &params.components)),
    }
}
