//! 3D unsafe-voxel clusters as bounding spheres.

use serde::{Deserialize, Serialize};

use super::{DetectedRegionSet, Region};
use crate::geometry::Point;
use crate::safety::{BinarySafetyMap, TestGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    /// Components with fewer voxels are ignored.
    pub min_voxels: usize,
    /// Smaller spheres are grown to this radius.
    pub radius_min: f64,
    /// Larger spheres are discarded.
    pub radius_max: f64,
}

impl Default for ComponentParams {
    fn default() -> Self {
        ComponentParams {
            min_voxels: 8,
            radius_min: 0.3,
            radius_max: 4.0,
        }
    }
}

/// 6-connected components of unsafe voxels. Each surviving component
/// becomes a sphere at its centroid whose radius is the largest
/// centroid-to-voxel distance plus half a voxel diagonal. Output is sorted
/// by voxel count, largest first.
pub fn detect_3d(
    map: &BinarySafetyMap,
    grid: &TestGrid,
    params: &ComponentParams,
) -> DetectedRegionSet {
    let n = grid.len();
    let mut label = vec![usize::MAX; n];
    let half_diag = 0.5
        * (0..grid.dim())
            .map(|a| grid.spacing(a).powi(2))
            .sum::<f64>()
            .sqrt();
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for seed in 0..n {
        if !map.bits[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = seed;
        label[seed] = id;
        stack.push(seed);
        members.clear();
        while let Some(v) = stack.pop() {
            members.push(v);
            for u in grid.axis_neighbors(v) {
                if map.bits[u] && label[u] == usize::MAX {
                    label[u] = id;
                    stack.push(u);
                }
            }
        }
        if members.len() < params.min_voxels {
            continue;
        }
        let mut c = [0.0; 3];
        for &v in &members {
            let p = grid.point(v);
            for (acc, x) in c.iter_mut().zip(p.0) {
                *acc += x;
            }
        }
        let inv = 1.0 / members.len() as f64;
        let centroid = Point([c[0] * inv, c[1] * inv, c[2] * inv]);
        let extent = members
            .iter()
            .map(|&v| grid.point(v).dist(&centroid))
            .fold(0.0, f64::max);
        let mut radius = extent + half_diag;
        if radius > params.radius_max {
            log::debug!(
                "dropping component of {} voxels with radius {radius:.3} > {}",
                members.len(),
                params.radius_max
            );
            continue;
        }
        let clamped = radius < params.radius_min;
        if clamped {
            radius = params.radius_min;
        }
        regions.push(Region {
            center: centroid,
            radius,
            support: members.len() as f64,
            clamped,
        });
    }
    regions.sort_by(|a, b| b.support.total_cmp(&a.support));
    DetectedRegionSet { t: map.t, regions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;
    use crate::geometry::Bounds;

    fn map_of(grid: &TestGrid, unsafe_at: impl Fn(&Point) -> bool) -> BinarySafetyMap {
        BinarySafetyMap {
            t: 1,
            beta: 1.0,
            f_bar: 0.0,
            margin: 0.0,
            shape: grid.shape(),
            dim: grid.dim(),
            bits: grid.points().iter().map(unsafe_at).collect(),
        }
    }

    fn loose() -> ComponentParams {
        ComponentParams {
            min_voxels: 1,
            radius_min: 0.0,
            radius_max: 100.0,
        }
    }

    #[test]
    fn empty_volume() {
        let g = TestGrid::uniform(Bounds::cube(0.0, 10.0), 10).unwrap();
        let m = map_of(&g, |_| false);
        assert!(detect_3d(&m, &g, &loose()).is_empty());
    }

    #[test]
    fn ground_level_ball_is_a_hemisphere() {
        let g = TestGrid::uniform(Bounds::cube(0.0, 10.0), 50).unwrap();
        let s = g.spacing(0);
        let c = Point::new3(2.0, 2.0, 0.0);
        let m = map_of(&g, |p| p.dist(&c) <= 1.0);
        let set = detect_3d(&m, &g, &loose());
        assert_eq!(set.count(), 1);
        let r = &set.regions[0];
        assert!((r.center.x() - 2.0).abs() <= s);
        assert!((r.center.y() - 2.0).abs() <= s);
        // Only the upper half lies in the domain: centroid sits near 3R/8.
        assert!((r.center.z() - 0.375).abs() <= s, "z = {}", r.center.z());
        assert!(r.contains(&c));
        let diag = s * 3f64.sqrt();
        assert!(
            r.radius >= 1.0 && r.radius <= 1.0 + diag,
            "r = {}",
            r.radius
        );
    }

    #[test]
    fn interior_ball_matches_geometry() {
        let g = TestGrid::uniform(Bounds::cube(0.0, 10.0), 50).unwrap();
        let s = g.spacing(0);
        let c = Point::new3(5.1, 4.9, 5.0);
        let m = map_of(&g, |p| p.dist(&c) <= 1.0);
        let set = detect_3d(&m, &g, &loose());
        assert_eq!(set.count(), 1);
        let r = &set.regions[0];
        assert!(r.center.dist(&c) <= s);
        assert!(r.radius >= 1.0 && r.radius <= 1.0 + s * 3f64.sqrt());
    }

    #[test]
    fn four_sources_give_four_components() {
        let g = TestGrid::uniform(Bounds::cube(0.0, 10.0), 40).unwrap();
        let f = FieldSpec::sim3d();
        let m = map_of(&g, |p| f.value(p) > 2.0);
        let set = detect_3d(&m, &g, &loose());
        assert_eq!(set.count(), 4);
        for src in f.source_points() {
            assert_eq!(set.regions.iter().filter(|r| r.contains(&src)).count(), 1);
        }
    }

    #[test]
    fn floors_and_caps() {
        let g = TestGrid::uniform(Bounds::cube(0.0, 10.0), 20).unwrap();
        let lone = g.point(g.index(10, 10, 10));
        let m = map_of(&g, |p| p.dist(&lone) < 0.1 || p.x() > 9.0);
        let p = ComponentParams {
            min_voxels: 1,
            radius_min: 1.0,
            radius_max: 4.0,
        };
        let set = detect_3d(&m, &g, &p);
        // The slab is too large; the single voxel is grown to the floor radius.
        assert_eq!(set.count(), 1);
        assert!(set.regions[0].clamped);
        assert_eq!(set.regions[0].radius, 1.0);
        let strict = ComponentParams { min_voxels: 2, ..p };
        assert!(detect_3d(&m, &g, &strict).is_empty());
    }
}
