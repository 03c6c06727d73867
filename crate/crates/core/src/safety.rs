//! Test-grid geometry, the confidence schedule, binary safety maps and
//! projection onto the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Point, SpatialHash};
use crate::gp::Posterior;
use crate::planner::MeasurementPlan;

/// Uniform grid of test locations, endpoints included on every axis.
///
/// Linear index is `ix + nx * (iy + ny * iz)`.
#[derive(Debug, Clone)]
pub struct TestGrid {
    bounds: Bounds,
    shape: [usize; 3],
    spacing: [f64; 3],
    points: Vec<Point>,
}

impl TestGrid {
    /// `n` points per axis.
    pub fn uniform(bounds: Bounds, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("grid needs at least one point per axis"));
        }
        let dim = bounds.dim();
        let mut shape = [1usize; 3];
        let mut spacing = [0.0; 3];
        for a in 0..dim {
            shape[a] = n;
            spacing[a] = if n > 1 {
                bounds.extent(a) / (n - 1) as f64
            } else {
                0.0
            };
        }
        let axis = |a: usize, i: usize| -> f64 {
            if n == 1 {
                0.5 * (bounds.min()[a] + bounds.max()[a])
            } else if i == n - 1 {
                bounds.max()[a]
            } else {
                bounds.min()[a] + i as f64 * spacing[a]
            }
        };
        let mut points = Vec::with_capacity(shape.iter().product());
        for iz in 0..shape[2] {
            for iy in 0..shape[1] {
                for ix in 0..shape[0] {
                    let mut p = Point::default();
                    p.0[0] = axis(0, ix);
                    p.0[1] = axis(1, iy);
                    if dim == 3 {
                        p.0[2] = axis(2, iz);
                    }
                    points.push(p);
                }
            }
        }
        Ok(TestGrid {
            bounds,
            shape,
            spacing,
            points,
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.shape[0] * (iy + self.shape[1] * iz)
    }

    pub fn cell(&self, i: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Fill distance; exact for a uniform grid (half the cell diagonal).
    pub fn fill_distance(&self) -> f64 {
        if self.len() == 1 {
            let c = self.points[0];
            return self
                .bounds
                .corners()
                .iter()
                .map(|k| k.dist(&c))
                .fold(0.0, f64::max);
        }
        (0..self.dim())
            .map(|a| (0.5 * self.spacing[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Separation radius (minimum pairwise distance); `+inf` for one point.
    pub fn separation(&self) -> f64 {
        if self.len() == 1 {
            return f64::INFINITY;
        }
        (0..self.dim())
            .map(|a| self.spacing[a])
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest grid index; exact half-way ties go to the lower index.
    pub fn project(&self, x: &Point) -> usize {
        let mut c = [0usize; 3];
        for (a, ca) in c.iter_mut().enumerate().take(self.dim()) {
            let n = self.shape[a];
            if n == 1 {
                continue;
            }
            let f = (x.0[a] - self.bounds.min()[a]) / self.spacing[a];
            let fl = f.floor();
            let frac = f - fl;
            let i = if frac > 0.5 + 1e-9 { fl + 1.0 } else { fl };
            *ca = i.clamp(0.0, (n - 1) as f64) as usize;
        }
        self.index(c[0], c[1], c[2])
    }

    /// Axis neighbours (4 in 2D, 6 in 3D) of grid index `i`.
    pub fn axis_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.cell(i);
        let dim = self.dim();
        (0..dim).flat_map(move |a| {
            [-1i64, 1].into_iter().filter_map(move |s| {
                let v = c[a] as i64 + s;
                if v < 0 || v >= self.shape[a] as i64 {
                    return None;
                }
                let mut cc = c;
                cc[a] = v as usize;
                Some(self.index(cc[0], cc[1], cc[2]))
            })
        })
    }
}

/// Fill distance `h` (probe-approximated sup) and separation radius `q`.
///
/// `probe_density` is the number of probes per axis across the domain,
/// endpoints included. A single point reports `q = +inf`.
pub fn grid_geometry(
    points: &[Point],
    bounds: &Bounds,
    probe_density: usize,
) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::arg("grid geometry needs at least one point"));
    }
    let dim = bounds.dim();
    let cell = (bounds.volume() / points.len() as f64).powf(1.0 / dim as f64);

    let mut q = f64::INFINITY;
    let mut seen = SpatialHash::new(cell);
    for p in points {
        if let Some((_, d)) = seen.nearest(p) {
            q = q.min(d);
        }
        seen.insert(*p);
    }

    let n = probe_density.max(2);
    let mut h = 0.0_f64;
    let mut idx = [0usize; 3];
    let total = n.pow(dim as u32);
    for _ in 0..total {
        let mut probe = Point::default();
        for (a, i) in idx.iter().enumerate().take(dim) {
            probe.0[a] = bounds.min()[a] + bounds.extent(a) * *i as f64 / (n - 1) as f64;
        }
        if let Some((_, d)) = seen.nearest(&probe) {
            h = h.max(d);
        }
        for v in idx.iter_mut().take(dim) {
            *v += 1;
            if *v < n {
                break;
            }
            *v = 0;
        }
    }
    Ok((h, q))
}

/// Summable sequence `pi_t` with `sum 1/pi_t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PiRule {
    /// `pi^2 t^2 / 6`.
    #[default]
    Basel,
    /// `2^t`.
    Geometric,
}

impl PiRule {
    pub fn pi(&self, t: usize) -> f64 {
        match self {
            PiRule::Basel => std::f64::consts::PI.powi(2) * (t as f64).powi(2) / 6.0,
            PiRule::Geometric => 2f64.powi(t as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSchedule {
    pub delta: f64,
    pub pi_rule: PiRule,
    pub lipschitz: f64,
}

impl ConfidenceSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::arg("delta must lie in (0, 1)"));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::arg("lipschitz constant must be > 0"));
        }
        Ok(())
    }

    /// `2 ln(M pi_t / delta)`; `t` is clamped to at least 1.
    pub fn beta(&self, m: usize, t: usize) -> f64 {
        2.0 * (m as f64 * self.pi_rule.pi(t.max(1)) / self.delta).ln()
    }
}

pub fn beta(schedule: &ConfidenceSchedule, m: usize, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::arg("beta is defined for t >= 1"));
    }
    Ok(schedule.beta(m, t))
}

/// Upper-confidence safety test shared by the map and the safe subset.
#[inline]
pub fn certified(mean: f64, std: f64, beta: f64, margin: f64, f_bar: f64) -> bool {
    mean + beta.sqrt() * std + margin <= f_bar
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySafetyMap {
    pub t: usize,
    pub beta: f64,
    pub f_bar: f64,
    /// `L_f h`.
    pub margin: f64,
    pub shape: [usize; 3],
    pub dim: usize,
    /// `true` marks an unsafe (1) cell.
    pub bits: Vec<bool>,
}

impl BinarySafetyMap {
    pub fn unsafe_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Binary PGM (P5): 0 safe, 255 unsafe, rows from max-y down. 3D maps
    /// stack z-slices vertically, lowest z first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let [nx, ny, nz] = self.shape;
        let mut out = format!("P5\n{} {}\n255\n", nx, ny * nz).into_bytes();
        for iz in 0..nz {
            for iy in (0..ny).rev() {
                for ix in 0..nx {
                    let b = self.bits[ix + nx * (iy + ny * iz)];
                    out.push(if b { 255 } else { 0 });
                }
            }
        }
        out
    }

    pub fn sidecar(&self) -> MapSidecar {
        MapSidecar {
            t: self.t,
            beta_t: self.beta,
            f_bar: self.f_bar,
            lipschitz_margin: self.margin,
            width: self.shape[0],
            height: self.shape[1],
            slices: self.shape[2],
            unsafe_cells: self.unsafe_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub t: usize,
    pub beta_t: f64,
    pub f_bar: f64,
    pub lipschitz_margin: f64,
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub unsafe_cells: usize,
}

/// Map `G_t` from the step `t - 1` posterior over the grid.
pub fn binary_map(
    post: &Posterior,
    schedule: &ConfidenceSchedule,
    grid: &TestGrid,
    t: usize,
    f_bar: f64,
) -> Result<BinarySafetyMap> {
    if post.len() != grid.len() || post.variance.len() != grid.len() {
        return Err(Error::arg(format!(
            "posterior has {} entries, grid has {}",
            post.len(),
            grid.len()
        )));
    }
    let b = beta(schedule, grid.len(), t)?;
    let margin = schedule.lipschitz * grid.fill_distance();
    let bits = (0..grid.len())
        .map(|i| !certified(post.mean[i], post.std(i), b, margin, f_bar))
        .collect();
    Ok(BinarySafetyMap {
        t,
        beta: b,
        f_bar,
        margin,
        shape: grid.shape(),
        dim: grid.dim(),
        bits,
    })
}

/// Slot indices of unvisited plan points passing the step-`t` safety test.
pub fn safe_subset(
    plan: &MeasurementPlan,
    post: &Posterior,
    schedule: &ConfidenceSchedule,
    grid: &TestGrid,
    t: usize,
    f_bar: f64,
) -> Vec<usize> {
    let b = schedule.beta(grid.len(), t);
    let margin = schedule.lipschitz * grid.fill_distance();
    plan.future()
        .filter(|&k| {
            let g = plan.slot(k).grid_index;
            certified(post.mean[g], post.std(g), b, margin, f_bar)
        })
        .collect()
}

pub fn project(grid: &TestGrid, x: &Point) -> usize {
    grid.project(x)
}
