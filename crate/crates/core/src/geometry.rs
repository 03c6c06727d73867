//! Coordinates and axis-aligned domains shared by every module.
//!
//! Points always carry three components; 2D domains keep `z = 0`, which
//! leaves Euclidean distances unchanged and lets the whole pipeline run on
//! one concrete type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point(pub [f64; 3]);

impl Point {
    pub const fn new2(x: f64, y: f64) -> Self {
        Point([x, y, 0.0])
    }

    pub const fn new3(x: f64, y: f64, z: f64) -> Self {
        Point([x, y, z])
    }

    /// Builds a point from a 2- or 3-element slice.
    pub fn from_slice(c: &[f64]) -> Result<Self> {
        match c.len() {
            2 => Ok(Point::new2(c[0], c[1])),
            3 => Ok(Point::new3(c[0], c[1], c[2])),
            n => Err(Error::arg(format!(
                "coordinate has {n} components, expected 2 or 3"
            ))),
        }
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        let dz = self.0[2] - other.0[2];
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn lerp(&self, other: &Point, s: f64) -> Point {
        Point([
            self.0[0] + s * (other.0[0] - self.0[0]),
            self.0[1] + s * (other.0[1] - self.0[1]),
            self.0[2] + s * (other.0[2] - self.0[2]),
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// The first `dim` components.
    pub fn coords(&self, dim: usize) -> Vec<f64> {
        self.0[..dim].to_vec()
    }
}

/// Axis-aligned box `[min, max]` in 2 or 3 dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundsRepr", into = "BoundsRepr")]
pub struct Bounds {
    dim: usize,
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct BoundsRepr {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl TryFrom<BoundsRepr> for Bounds {
    type Error = Error;

    fn try_from(r: BoundsRepr) -> Result<Self> {
        Bounds::new(&r.min, &r.max)
    }
}

impl From<Bounds> for BoundsRepr {
    fn from(b: Bounds) -> Self {
        BoundsRepr {
            min: b.min[..b.dim].to_vec(),
            max: b.max[..b.dim].to_vec(),
        }
    }
}

impl Bounds {
    pub fn new(min: &[f64], max: &[f64]) -> Result<Self> {
        if min.len() != max.len() || !(2..=3).contains(&min.len()) {
            return Err(Error::arg("bounds need matching 2D or 3D min/max"));
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for (i, (&a, &b)) in min.iter().zip(max).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::arg(format!(
                    "degenerate bounds on axis {i}: [{a}, {b}]"
                )));
            }
            lo[i] = a;
            hi[i] = b;
        }
        Ok(Bounds {
            dim: min.len(),
            min: lo,
            max: hi,
        })
    }

    pub fn unit_square() -> Self {
        Bounds::new(&[0.0, 0.0], &[1.0, 1.0]).expect("valid")
    }

    pub fn cube(lo: f64, hi: f64) -> Self {
        Bounds::new(&[lo, lo, lo], &[hi, hi, hi]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min(&self) -> &[f64] {
        &self.min[..self.dim]
    }

    pub fn max(&self) -> &[f64] {
        &self.max[..self.dim]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent(a)).product()
    }

    pub fn diagonal(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.extent(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Closed-box membership with a small relative slack for round-off.
    pub fn contains(&self, p: &Point) -> bool {
        if !p.is_finite() {
            return false;
        }
        (0..self.dim).all(|a| {
            let tol = 1e-12 * self.extent(a);
            p.0[a] >= self.min[a] - tol && p.0[a] <= self.max[a] + tol
        }) && (self.dim == 3 || p.0[2] == 0.0)
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain {
                coord: p.coords(self.dim),
            })
        }
    }

    pub fn clamp(&self, p: &Point) -> Point {
        let mut q = *p;
        for a in 0..self.dim {
            q.0[a] = q.0[a].clamp(self.min[a], self.max[a]);
        }
        q
    }

    pub fn corners(&self) -> Vec<Point> {
        let n = 1 << self.dim;
        (0..n)
            .map(|mask| {
                let mut p = Point::default();
                for a in 0..self.dim {
                    p.0[a] = if mask & (1 << a) == 0 {
                        self.min[a]
                    } else {
                        self.max[a]
                    };
                }
                p
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_bounds() {
        assert!(Bounds::new(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(Bounds::new(&[0.0], &[1.0]).is_err());
        assert!(Bounds::new(&[0.0, 0.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn containment_is_closed() {
        let b = Bounds::unit_square();
        assert!(b.contains(&Point::new2(1.0, 0.0)));
        assert!(!b.contains(&Point::new2(1.01, 0.0)));
        assert!(!b.contains(&Point::new3(0.5, 0.5, 0.2)));
        assert_eq!(b.corners().len(), 4);
    }

    #[test]
    fn bounds_serde_keeps_dimension() {
        let b = Bounds::cube(0.0, 10.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"min":[0.0,0.0,0.0],"max":[10.0,10.0,10.0]}"#);
        let back: Bounds = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}

/// Uniform bucket index over points for exact nearest and radius queries.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    buckets: std::collections::HashMap<[i64; 3], Vec<usize>>,
    points: Vec<Point>,
}

impl SpatialHash {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "bucket size must be positive");
        SpatialHash {
            cell,
            buckets: Default::default(),
            points: Vec::new(),
        }
    }

    pub fn from_points(cell: f64, pts: &[Point]) -> Self {
        let mut h = SpatialHash::new(cell);
        for p in pts {
            h.insert(*p);
        }
        h
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        [
            (p.0[0] / self.cell).floor() as i64,
            (p.0[1] / self.cell).floor() as i64,
            (p.0[2] / self.cell).floor() as i64,
        ]
    }

    /// Inserts `p` and returns its index.
    pub fn insert(&mut self, p: Point) -> usize {
        let id = self.points.len();
        let k = self.key(&p);
        self.buckets.entry(k).or_default().push(id);
        self.points.push(p);
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> Point {
        self.points[id]
    }

    /// Nearest stored point; ties go to the lowest index.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = self.key(q);
        let mut best: Option<(usize, f64)> = None;
        let mut ring = 0i64;
        loop {
            for k in shell(c, ring) {
                if let Some(ids) = self.buckets.get(&k) {
                    for &id in ids {
                        let d = self.points[id].dist2(q);
                        best = match best {
                            Some((bi, bd)) if bd < d || (bd == d && bi < id) => Some((bi, bd)),
                            _ => Some((id, d)),
                        };
                    }
                }
            }
            // Everything outside this ring is at least `ring * cell` away.
            if let Some((_, bd)) = best {
                let reach = ring as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
            ring += 1;
            if ring > 1 && self.buckets.len() < shell_size(ring) {
                // Sparse index: fall back to a full scan.
                return self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, p.dist2(q)))
                    .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                        Some((_, bd)) if bd <= d => acc,
                        _ => Some((i, d)),
                    })
                    .map(|(i, d)| (i, d.sqrt()));
            }
        }
        best.map(|(i, d)| (i, d.sqrt()))
    }

    /// Indices of stored points within `r` of `q`, ascending.
    pub fn within(&self, q: &Point, r: f64) -> Vec<usize> {
        let lo = self.key(&Point([q.0[0] - r, q.0[1] - r, q.0[2] - r]));
        let hi = self.key(&Point([q.0[0] + r, q.0[1] + r, q.0[2] + r]));
        let r2 = r * r;
        let mut out = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(ids) = self.buckets.get(&[i, j, k]) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&id| self.points[id].dist2(q) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn shell_size(ring: i64) -> usize {
    let side = (2 * ring + 1) as usize;
    side * side * side
}

/// Bucket keys at Chebyshev distance exactly `ring` from `c`.
fn shell(c: [i64; 3], ring: i64) -> impl Iterator<Item = [i64; 3]> {
    let r = ring;
    (-r..=r).flat_map(move |i| {
        (-r..=r).flat_map(move |j| {
            (-r..=r).filter_map(move |k| {
                if i.abs().max(j.abs()).max(k.abs()) == r {
                    Some([c[0] + i, c[1] + j, c[2] + k])
                } else {
                    None
                }
            })
        })
    })
}
