//! Offline measurement planning: maximum-variance selection and a
//! nearest-neighbour tour over the selected points.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::gp::{GpModel, KernelParams};
use crate::safety::TestGrid;

/// Relative tolerance under which two scores count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// Index of the largest score among unmasked entries. Scores within
/// [`TIE_RTOL`] of the maximum tie, and ties go to the lowest index.
pub fn argmax_tied(scores: &[f64], skip: impl Fn(usize) -> bool) -> Option<usize> {
    let best = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let floor = best - TIE_RTOL * best.abs();
    (0..scores.len()).find(|&i| !skip(i) && scores[i] >= floor)
}

/// Greedy maximum-variance selection over the grid, in pick order.
///
/// Variance does not depend on measured values, so chosen points are
/// conditioned with zero pseudo-measurements and the mean is never read.
pub fn mvs_select(
    params: &KernelParams,
    grid: &TestGrid,
    budget: usize,
    _start: &Point,
) -> Result<Vec<usize>> {
    check_budget(grid, budget)?;
    let mut gp = GpModel::tracking(*params, grid.points().to_vec())?;
    let mut chosen = vec![false; grid.len()];
    let mut picks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let var = &gp.tracked().expect("tracking model").variance;
        let i = argmax_tied(var, |j| chosen[j]).expect("budget <= grid size");
        chosen[i] = true;
        picks.push(i);
        gp.add(grid.point(i), 0.0)?;
    }
    Ok(picks)
}

/// Greedy mutual-information maximisation, returning the picks and the
/// information gain of the final set in nats.
///
/// Marginal gains are read off an incrementally extended Cholesky factor of
/// `I + K / noise_var`, whose log-diagonal sums to the set's information.
pub fn greedy_info_gain(
    params: &KernelParams,
    grid: &TestGrid,
    budget: usize,
) -> Result<(Vec<usize>, f64)> {
    check_budget(grid, budget)?;
    let m = grid.len();
    let pts = grid.points();
    let s2 = params.noise_var;
    // rows[i * m + j] = (L^{-1} b_j)[i] with b_j = K(S, x_j) / s2.
    let mut rows: Vec<f64> = Vec::with_capacity(budget * m);
    let mut schur = vec![1.0 + params.prior_var() / s2; m];
    let mut chosen = vec![false; m];
    let mut picks = Vec::with_capacity(budget);
    let mut gamma = 0.0;
    for t in 0..budget {
        let i = argmax_tied(&schur, |j| chosen[j]).expect("budget <= grid size");
        let d = schur[i].sqrt();
        gamma += d.ln();
        let mut row: Vec<f64> = pts.iter().map(|x| params.kernel(&pts[i], x) / s2).collect();
        for r in 0..t {
            let prev = &rows[r * m..(r + 1) * m];
            let ci = prev[i];
            for (v, p) in row.iter_mut().zip(prev) {
                *v -= ci * p;
            }
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v /= d;
            schur[j] -= *v * *v;
        }
        rows.extend_from_slice(&row);
        chosen[i] = true;
        picks.push(i);
    }
    Ok((picks, gamma))
}

fn check_budget(grid: &TestGrid, budget: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::arg("grid is empty"));
    }
    if budget > grid.len() {
        return Err(Error::arg(format!(
            "budget {budget} exceeds grid size {}",
            grid.len()
        )));
    }
    Ok(())
}

/// Greedy nearest-neighbour tour from `start`; returns a permutation.
pub fn nn_tour(points: &[Point], start: &Point) -> Vec<usize> {
    let mut left: Vec<bool> = vec![true; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut cur = *start;
    for _ in 0..points.len() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if !left[i] {
                continue;
            }
            let d = p.dist2(&cur);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("unvisited point");
        left[i] = false;
        order.push(i);
        cur = points[i];
    }
    order
}

/// Orders grid picks into a measurement plan by nearest-neighbour tour.
/// Slot origins index into `picks`.
pub fn nn_order(grid: &TestGrid, picks: &[usize], start: &Point) -> MeasurementPlan {
    let pts: Vec<Point> = picks.iter().map(|&i| grid.point(i)).collect();
    let order = nn_tour(&pts, start);
    let slots = order
        .into_iter()
        .map(|o| PlanSlot {
            point: pts[o],
            grid_index: picks[o],
            original: pts[o],
            original_index: picks[o],
            origin: o,
            status: SlotStatus::Planned,
        })
        .collect();
    MeasurementPlan {
        slots,
        budget: picks.len(),
        visited: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotStatus {
    Planned,
    Visited,
    Relocated,
    /// Used only for exported originals whose slot currently holds a substitute.
    Blocked,
    Reinstated,
}

impl SlotStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlotStatus::Planned => "planned",
            SlotStatus::Visited => "visited",
            SlotStatus::Relocated => "relocated",
            SlotStatus::Blocked => "blocked",
            SlotStatus::Reinstated => "reinstated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSlot {
    pub point: Point,
    pub grid_index: usize,
    pub original: Point,
    pub original_index: usize,
    /// Position of the original point in the selection order.
    pub origin: usize,
    pub status: SlotStatus,
}

impl PlanSlot {
    pub fn is_substitute(&self) -> bool {
        self.grid_index != self.original_index
    }
}

/// Ordered measurement slots; the first `visited` slots are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlan {
    slots: Vec<PlanSlot>,
    budget: usize,
    visited: usize,
}

impl MeasurementPlan {
    pub fn empty() -> Self {
        MeasurementPlan {
            slots: Vec::new(),
            budget: 0,
            visited: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn visited(&self) -> usize {
        self.visited
    }

    pub fn slots(&self) -> &[PlanSlot] {
        &self.slots
    }

    pub fn slot(&self, k: usize) -> &PlanSlot {
        &self.slots[k]
    }

    pub fn points(&self) -> Vec<Point> {
        self.slots.iter().map(|s| s.point).collect()
    }

    /// Indices of unvisited slots.
    pub fn future(&self) -> std::ops::Range<usize> {
        self.visited..self.slots.len()
    }

    /// Index of the next slot to measure.
    pub fn next(&self) -> Option<usize> {
        (self.visited < self.slots.len()).then_some(self.visited)
    }

    pub fn mark_visited(&mut self) -> Result<usize> {
        let k = self.next().ok_or_else(|| Error::arg("plan exhausted"))?;
        self.slots[k].status = SlotStatus::Visited;
        self.visited += 1;
        Ok(k)
    }

    /// Replaces the point of unvisited slot `k` by a substitute grid point.
    pub fn relocate(&mut self, k: usize, grid_index: usize, point: Point) -> Result<()> {
        self.check_future(k)?;
        let s = &mut self.slots[k];
        s.grid_index = grid_index;
        s.point = point;
        s.status = SlotStatus::Relocated;
        Ok(())
    }

    /// Restores the original point of unvisited slot `k`.
    pub fn reinstate(&mut self, k: usize) -> Result<()> {
        self.check_future(k)?;
        let s = &mut self.slots[k];
        s.grid_index = s.original_index;
        s.point = s.original;
        s.status = SlotStatus::Reinstated;
        Ok(())
    }

    fn check_future(&self, k: usize) -> Result<()> {
        if k < self.visited || k >= self.slots.len() {
            return Err(Error::arg(format!("slot {k} is not an unvisited slot")));
        }
        Ok(())
    }

    /// Unvisited slots whose original point is currently blocked.
    pub fn blocked(&self) -> impl Iterator<Item = usize> + '_ {
        self.future().filter(|&k| self.slots[k].is_substitute())
    }

    /// CSV with columns `index,x,y[,z],status,origin_index`. Slots come
    /// first; blocked originals follow with status `blocked`.
    pub fn write_csv<W: Write>(&self, w: W, dim: usize) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["index", "x", "y"];
        if dim == 3 {
            header.push("z");
        }
        header.extend(["status", "origin_index"]);
        let csv_err = |e: csv::Error| Error::format("plan csv", e.to_string());
        wr.write_record(&header).map_err(csv_err)?;
        let mut row = |idx: usize, p: &Point, status: SlotStatus, origin: usize| {
            let mut rec: Vec<String> = vec![idx.to_string()];
            rec.extend(p.coords(dim).iter().map(|c| format!("{c}")));
            rec.push(status.as_str().to_string());
            rec.push(origin.to_string());
            wr.write_record(&rec)
        };
        let mut idx = 0;
        for s in &self.slots {
            row(idx, &s.point, s.status, s.origin).map_err(csv_err)?;
            idx += 1;
        }
        for k in self.blocked().collect::<Vec<_>>() {
            let s = &self.slots[k];
            row(idx, &s.original, SlotStatus::Blocked, s.origin).map_err(csv_err)?;
            idx += 1;
        }
        wr.flush().map_err(|e| Error::io("plan csv", e))?;
        Ok(())
    }
}
