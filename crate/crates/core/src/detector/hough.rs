//! Circular Hough transform on 2D binary safety maps.
//!
//! Boundary cells of the unsafe region vote for centres that lie on their
//! inward side: each boundary cell carries an outward normal built from its
//! safe 8-neighbours, and a centre candidate only receives the vote when it
//! sits inside a cone around the opposite direction. Radii are scanned past
//! `radius_max` (by `overflow_factor`) so oversized blobs peak at their own
//! size instead of spawning rings of spurious small circles; such detections
//! are reported with the radius clamped to `radius_max`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DetectedRegionSet, Region};
use crate::error::{Error, Result};
use crate::safety::{BinarySafetyMap, TestGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMethod {
    /// Unsafe cell with at least one safe 4-neighbour.
    #[default]
    FourNeighbor,
    /// Unsafe cell with at least one safe 8-neighbour.
    EightNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub radius_min: f64,
    pub radius_max: f64,
    /// Radius increment in domain units; `None` means one grid cell.
    pub radius_step: Option<f64>,
    /// Minimum votes as a fraction of an ideal rasterized circle.
    pub accumulator_threshold: f64,
    pub edge_method: EdgeMethod,
    /// Radii are scanned up to `radius_max * overflow_factor`.
    pub overflow_factor: f64,
    /// Cosine of the half-angle of the inward voting cone.
    pub normal_cone_cos: f64,
    /// Reject peaks whose centre cell is safe.
    pub require_unsafe_center: bool,
    /// Minimum unsafe fraction inside the (clamped) detected disk.
    pub min_fill: f64,
    pub suppression: Suppression,
}

/// Non-maximum suppression rule against already accepted circles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Suppression {
    /// Discard a candidate whose centre lies inside an accepted circle.
    #[default]
    CenterInside,
    /// Discard a candidate whose disk intersects an accepted circle.
    Overlap,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            radius_min: 0.05,
            radius_max: 0.15,
            radius_step: None,
            accumulator_threshold: 0.5,
            edge_method: EdgeMethod::FourNeighbor,
            overflow_factor: 2.0,
            normal_cone_cos: 0.5,
            require_unsafe_center: true,
            min_fill: 0.0,
            suppression: Suppression::CenterInside,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_min > 0.0
            && self.radius_min < self.radius_max
            && self.radius_max.is_finite())
        {
            return Err(Error::arg(format!(
                "degenerate radius range [{}, {}]",
                self.radius_min, self.radius_max
            )));
        }
        if let Some(s) = self.radius_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg("radius_step must be > 0"));
            }
        }
        if !(self.accumulator_threshold > 0.0 && self.accumulator_threshold <= 1.0) {
            return Err(Error::arg("accumulator_threshold must lie in (0, 1]"));
        }
        if !(self.overflow_factor >= 1.0 && self.overflow_factor.is_finite()) {
            return Err(Error::arg("overflow_factor must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.normal_cone_cos) {
            return Err(Error::arg("normal_cone_cos must lie in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.min_fill) {
            return Err(Error::arg("min_fill must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Votes are accepted at distances in `(r - BAND_IN, r + BAND_OUT]` cells.
const BAND_IN: f64 = 1.5;
const BAND_OUT: f64 = 0.5;

struct Raster<'a> {
    nx: usize,
    ny: usize,
    bits: &'a [bool],
}

impl Raster<'_> {
    fn get(&self, x: i64, y: i64) -> Option<bool> {
        if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
            None
        } else {
            Some(self.bits[x as usize + self.nx * y as usize])
        }
    }

    /// Boundary cells with unit outward normals.
    fn boundary(&self, edge: EdgeMethod) -> Vec<([i64; 2], [f64; 2])> {
        let mut out = Vec::new();
        for y in 0..self.ny as i64 {
            for x in 0..self.nx as i64 {
                if self.get(x, y) != Some(true) {
                    continue;
                }
                let mut is_edge = false;
                let mut n = [0.0f64; 2];
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        if (dx, dy) == (0, 0) || self.get(x + dx, y + dy) != Some(false) {
                            continue;
                        }
                        let w = 1.0 / ((dx * dx + dy * dy) as f64).sqrt();
                        n[0] += dx as f64 * w;
                        n[1] += dy as f64 * w;
                        if edge == EdgeMethod::EightNeighbor || dx == 0 || dy == 0 {
                            is_edge = true;
                        }
                    }
                }
                if is_edge {
                    let len = n[0].hypot(n[1]);
                    let unit = if len > 0.0 {
                        [n[0] / len, n[1] / len]
                    } else {
                        [0.0, 0.0]
                    };
                    out.push(([x, y], unit));
                }
            }
        }
        out
    }
}

/// Boundary-cell count of a disk of radius `r` cells rasterized about a cell centre.
pub fn ideal_votes(r: f64, edge: EdgeMethod) -> usize {
    let half = r.ceil() as i64 + 2;
    let side = (2 * half + 1) as usize;
    let bits: Vec<bool> = (0..side * side)
        .map(|i| {
            let x = (i % side) as i64 - half;
            let y = (i / side) as i64 - half;
            ((x * x + y * y) as f64).sqrt() <= r
        })
        .collect();
    Raster {
        nx: side,
        ny: side,
        bits: &bits,
    }
    .boundary(edge)
    .len()
}

struct Ring {
    r: f64,
    offsets: Vec<([i64; 2], f64)>,
}

fn ring(r: f64) -> Ring {
    let reach = (r + BAND_OUT).ceil() as i64;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if d > r - BAND_IN && d <= r + BAND_OUT && d > 0.0 {
                offsets.push(([dx, dy], d));
            }
        }
    }
    Ring { r, offsets }
}

/// Whether a boundary cell with outward normal `n` supports a centre at offset `o`.
#[inline]
fn supports(n: &[f64; 2], o: &[i64; 2], d: f64, cos: f64) -> bool {
    n[0] * o[0] as f64 + n[1] * o[1] as f64 <= -cos * d
}

#[derive(Debug)]
struct Candidate {
    votes: u32,
    k: usize,
    cell: usize,
}

pub fn detect_2d(
    map: &BinarySafetyMap,
    grid: &TestGrid,
    params: &HoughParams,
) -> Result<DetectedRegionSet> {
    params.validate()?;
    if grid.dim() != 2 {
        return Err(Error::arg("circular Hough transform needs a 2D grid"));
    }
    let [nx, ny, _] = grid.shape();
    if nx < 2 || ny < 2 {
        return Err(Error::arg("grid too small for Hough detection"));
    }
    let s = grid.spacing(0);
    if ((grid.spacing(1) - s) / s).abs() > 1e-9 {
        return Err(Error::arg("Hough detection needs square grid cells"));
    }
    let raster = Raster {
        nx,
        ny,
        bits: &map.bits,
    };
    let edges = raster.boundary(params.edge_method);
    if edges.is_empty() {
        return Ok(DetectedRegionSet::empty(map.t));
    }

    let step = params.radius_step.unwrap_or(s) / s;
    let r_lo = params.radius_min / s;
    let r_cap = params.radius_max / s;
    let r_hi = r_cap * params.overflow_factor;
    let mut rings = Vec::new();
    let mut r = r_lo;
    while r <= r_hi + 1e-9 {
        rings.push(ring(r));
        r += step;
    }
    let cos = params.normal_cone_cos;
    let cells = nx * ny;

    let mut acc = vec![0u32; rings.len() * cells];
    for (k, rg) in rings.iter().enumerate() {
        let slice = &mut acc[k * cells..(k + 1) * cells];
        for (b, n) in &edges {
            for (o, d) in &rg.offsets {
                if !supports(n, o, *d, cos) {
                    continue;
                }
                let cx = b[0] + o[0];
                let cy = b[1] + o[1];
                if cx >= 0 && cy >= 0 && (cx as usize) < nx && (cy as usize) < ny {
                    slice[cx as usize + nx * cy as usize] += 1;
                }
            }
        }
    }
    let mut ideal_cache: HashMap<u64, usize> = HashMap::new();
    let ideal: Vec<f64> = rings
        .iter()
        .map(|rg| {
            *ideal_cache
                .entry(rg.r.to_bits())
                .or_insert_with(|| ideal_votes(rg.r, params.edge_method)) as f64
        })
        .collect();

    let at = |k: usize, x: usize, y: usize| acc[k * cells + x + nx * y];
    let mut cands = Vec::new();
    for k in 0..rings.len() {
        let need = params.accumulator_threshold * ideal[k];
        for y in 0..ny {
            for x in 0..nx {
                let v = at(k, x, y);
                if v == 0 || (v as f64) < need {
                    continue;
                }
                let mut peak = true;
                'nbhd: for dk in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let (kk, xx, yy) = (k as i64 + dk, x as i64 + dx, y as i64 + dy);
                            if kk < 0
                                || xx < 0
                                || yy < 0
                                || kk >= rings.len() as i64
                                || xx >= nx as i64
                                || yy >= ny as i64
                            {
                                continue;
                            }
                            if at(kk as usize, xx as usize, yy as usize) > v {
                                peak = false;
                                break 'nbhd;
                            }
                        }
                    }
                }
                if !peak {
                    continue;
                }
                let cell = x + nx * y;
                if params.require_unsafe_center && !map.bits[cell] {
                    continue;
                }
                if params.min_fill > 0.0
                    && fill_fraction(&raster, x, y, rings[k].r.min(r_cap)) < params.min_fill
                {
                    continue;
                }
                cands.push(Candidate { votes: v, k, cell });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.k.cmp(&b.k))
            .then(a.cell.cmp(&b.cell))
    });

    // Accepted circles in cell units: (x, y, fitted radius).
    let mut kept: Vec<(f64, f64, f64)> = Vec::new();
    let mut regions = Vec::new();
    for c in cands {
        let (x, y) = ((c.cell % nx) as i64, (c.cell / nx) as i64);
        let r = rings[c.k].r;
        let reach = match params.suppression {
            Suppression::CenterInside => 0.0,
            Suppression::Overlap => r,
        };
        if kept.iter().any(|(kx, ky, kr)| {
            (x as f64 - kx).powi(2) + (y as f64 - ky).powi(2) <= (kr + reach).powi(2)
        }) {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, n) in &edges {
            let o = [x - b[0], y - b[1]];
            let d = ((o[0] * o[0] + o[1] * o[1]) as f64).sqrt();
            if d > r - BAND_IN && d <= r + BAND_OUT && d > 0.0 && supports(n, &o, d, cos) {
                sum += d;
                count += 1;
            }
        }
        let fitted = if count > 0 {
            sum / count as f64 + 0.5
        } else {
            r
        };
        kept.push((x as f64, y as f64, fitted));
        let lo = params.radius_min;
        let hi = params.radius_max;
        let radius = fitted * s;
        let clamped = radius < lo || radius > hi;
        if radius > hi {
            log::debug!("detection at cell ({x},{y}) has radius {radius:.4} above range; clamped");
        }
        regions.push(Region {
            center: grid.point(c.cell),
            radius: radius.clamp(lo, hi),
            support: c.votes as f64,
            clamped,
        });
    }
    Ok(DetectedRegionSet { t: map.t, regions })
}

fn fill_fraction(raster: &Raster, x: usize, y: usize, r: f64) -> f64 {
    let reach = r.ceil() as i64;
    let (mut inside, mut hits) = (0usize, 0usize);
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64).sqrt() > r {
                continue;
            }
            if let Some(b) = raster.get(x as i64 + dx, y as i64 + dy) {
                inside += 1;
                hits += b as usize;
            }
        }
    }
    if inside == 0 {
        0.0
    } else {
        hits as f64 / inside as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bounds, Point};

    fn grid() -> TestGrid {
        TestGrid::uniform(Bounds::unit_square(), 100).unwrap()
    }

    fn map_of(g: &TestGrid, f: impl Fn(&Point) -> bool) -> BinarySafetyMap {
        BinarySafetyMap {
            t: 5,
            beta: 1.0,
            f_bar: 0.0,
            margin: 0.0,
            shape: g.shape(),
            dim: 2,
            bits: g.points().iter().map(f).collect(),
        }
    }

    /// Algebraic least-squares circle through boundary cells.
    fn kasa_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
        use nalgebra::{DMatrix, DVector};
        let a = DMatrix::from_fn(pts.len(), 3, |i, j| match j {
            0 => pts[i].0,
            1 => pts[i].1,
            _ => 1.0,
        });
        let b = DVector::from_fn(pts.len(), |i, _| pts[i].0.powi(2) + pts[i].1.powi(2));
        let sol = (a.transpose() * &a)
            .lu()
            .solve(&(a.transpose() * b))
            .unwrap();
        let cx = sol[0] / 2.0;
        let cy = sol[1] / 2.0;
        (cx, cy, (sol[2] + cx * cx + cy * cy).sqrt())
    }

    fn boundary_points(g: &TestGrid, m: &BinarySafetyMap) -> Vec<(f64, f64)> {
        let [nx, ny, _] = g.shape();
        Raster {
            nx,
            ny,
            bits: &m.bits,
        }
        .boundary(EdgeMethod::FourNeighbor)
        .iter()
        .map(|(b, _)| {
            let p = g.point(b[0] as usize + nx * b[1] as usize);
            (p.x(), p.y())
        })
        .collect()
    }

    #[test]
    fn empty_map_has_no_detections() {
        let g = grid();
        let set = detect_2d(&map_of(&g, |_| false), &g, &HoughParams::default()).unwrap();
        assert_eq!(set.count(), 0);
        assert_eq!(set.t, 5);
    }

    #[test]
    fn single_disks_are_recovered() {
        let g = grid();
        let c = Point::new2(0.25, 0.75);
        for r in [0.06, 0.10, 0.14] {
            let m = map_of(&g, |p| p.dist(&c) <= r);
            let set = detect_2d(&m, &g, &HoughParams::default()).unwrap();
            assert_eq!(set.count(), 1, "r = {r}: {:?}", set.regions);
            let d = &set.regions[0];
            let (fx, fy, fr) = kasa_fit(&boundary_points(&g, &m));
            // The least-squares fit and the ground truth agree on the disk.
            assert!(((fx - 0.25).powi(2) + (fy - 0.75).powi(2)).sqrt() < 0.01);
            assert!((fr - r).abs() < 0.01);
            assert!(d.center.dist(&c) <= 0.02, "r = {r}: centre {:?}", d.center);
            assert!((d.radius - r).abs() <= 0.01, "r = {r}: radius {}", d.radius);
            assert!(!d.clamped);
        }
    }

    #[test]
    fn two_source_geometry() {
        let g = grid();
        let cs = [Point::new2(0.25, 0.75), Point::new2(0.75, 0.25)];
        let m = map_of(&g, |p| cs.iter().any(|c| p.dist(c) <= 0.12));
        let set = detect_2d(&m, &g, &HoughParams::default()).unwrap();
        assert_eq!(set.count(), 2);
        for c in &cs {
            let hit: Vec<_> = set
                .regions
                .iter()
                .filter(|r| r.center.dist(c) <= 0.02)
                .collect();
            assert_eq!(hit.len(), 1);
            assert!((hit[0].radius - 0.12).abs() <= 0.01);
        }
    }

    #[test]
    fn rasterized_circles_score_near_ideal() {
        let g = grid();
        let c = g.point(g.index(50, 50, 0));
        for r in [0.06, 0.09, 0.13] {
            let m = map_of(&g, |p| p.dist(&c) <= r);
            let set = detect_2d(&m, &g, &HoughParams::default()).unwrap();
            let ideal = ideal_votes(r * 99.0, EdgeMethod::FourNeighbor) as f64;
            assert!(set.regions[0].support >= 0.9 * ideal, "r = {r}");
        }
    }

    #[test]
    fn oversized_blob_is_one_clamped_detection() {
        let g = grid();
        let c = Point::new2(0.5, 0.5);
        let m = map_of(&g, |p| p.dist(&c) <= 0.22);
        let set = detect_2d(&m, &g, &HoughParams::default()).unwrap();
        assert_eq!(set.count(), 1);
        assert!(set.regions[0].clamped);
        assert_eq!(set.regions[0].radius, 0.15);
        assert!(set.regions[0].center.dist(&c) <= 0.02);
    }

    #[test]
    fn detection_is_deterministic() {
        let g = grid();
        let m = map_of(&g, |p| {
            p.dist(&Point::new2(0.3, 0.4)) <= 0.08 || (p.x() > 0.8 && p.y() > 0.7)
        });
        let a = detect_2d(&m, &g, &HoughParams::default()).unwrap();
        let b = detect_2d(&m, &g, &HoughParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_range_rejected() {
        let g = grid();
        let p = HoughParams {
            radius_min: 0.2,
            radius_max: 0.1,
            ..HoughParams::default()
        };
        assert!(detect_2d(&map_of(&g, |_| false), &g, &p).is_err());
    }
}
