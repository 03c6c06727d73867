//! The measurement loop: measure, condition, map, detect, relocate,
//! reinstate and plan the next leg.

use serde::{Deserialize, Serialize};

use crate::detector::{detect, filter_by_evidence, DetectedRegionSet, DetectorParams};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, MeasurementModel, SafetyThreshold};
use crate::geometry::Point;
use crate::gp::{Dataset, GpModel, KernelParams, Posterior};
use crate::planner::{mvs_select, nn_order, MeasurementPlan, SlotStatus};
use crate::rng;
use crate::rrtstar::{plan_with_rng, PlannerParams};
use crate::safety::{binary_map, safe_subset, BinarySafetyMap, ConfidenceSchedule, TestGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplingMode {
    /// Fixed budget planned offline and repaired online.
    Planned,
    /// Unbounded maximum-variance sampling restricted to points outside
    /// the detected regions; runs for `steps` measurements.
    MvsOnSafe { steps: usize },
}

/// Everything an episode needs, with the Lipschitz constant already resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub field: FieldSpec,
    pub threshold: SafetyThreshold,
    pub kernel: KernelParams,
    pub noise_std: f64,
    pub schedule: ConfidenceSchedule,
    pub grid_points_per_axis: usize,
    pub budget: usize,
    pub start: Point,
    pub detector: DetectorParams,
    pub planner: PlannerParams,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Plan RRT* legs; otherwise legs are straight segments.
    pub plan_paths: bool,
    /// Keep the grid posterior every this many steps (0 disables).
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub center: Vec<f64>,
    pub r: f64,
    pub support: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relocation {
    pub slot: usize,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub x_t: Vec<f64>,
    pub y_t: f64,
    pub beta_t: f64,
    /// Confidence scaling of the map built after this step.
    pub map_beta: f64,
    pub unsafe_cells: usize,
    pub regions: Vec<RegionRecord>,
    pub relocations: Vec<Relocation>,
    pub reinstated: Vec<Vec<f64>>,
    pub path_len: f64,
    /// Unvisited plan points failing the step-`t` certification test.
    pub uncertified: usize,
    /// `x_t` lay inside the regions detected at the previous step.
    pub in_detected: bool,
    /// `x_t` is unsafe according to the ground truth.
    pub truly_unsafe: bool,
    /// Unvisited plan points inside the new regions after the replan.
    pub future_in_detected: usize,
    pub start_snapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub posterior: Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Leg {
    pub index: usize,
    pub waypoints: Vec<Point>,
}

/// Mutable loop state.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub gp: GpModel,
    pub plan: MeasurementPlan,
    pub regions: DetectedRegionSet,
    pub trajectory: Vec<Leg>,
    pub t: usize,
    pub position: Point,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub grid: TestGrid,
    /// Offline selection (grid indices, pick order); empty in MVS-on-safe mode.
    pub greedy: Vec<usize>,
    pub initial_plan: MeasurementPlan,
    pub plan: MeasurementPlan,
    pub data: Dataset,
    pub posterior: Posterior,
    pub executed: Vec<Point>,
    pub executed_grid: Vec<usize>,
    pub trajectory: Vec<Leg>,
    pub logs: Vec<StepLog>,
    pub snapshots: Vec<Snapshot>,
    pub final_map: Option<BinarySafetyMap>,
    /// Map built after each measurement, in step order.
    pub maps: Vec<BinarySafetyMap>,
    pub regions: DetectedRegionSet,
    pub abort: Option<AbortRecord>,
}

impl Episode {
    pub fn relocation_count(&self) -> usize {
        self.logs.iter().map(|l| l.relocations.len()).sum()
    }

    pub fn greedy_points(&self) -> Vec<Point> {
        self.greedy.iter().map(|&i| self.grid.point(i)).collect()
    }
}

pub fn region_records(set: &DetectedRegionSet, dim: usize) -> Vec<RegionRecord> {
    set.regions
        .iter()
        .map(|r| RegionRecord {
            center: r.center.coords(dim),
            r: r.radius,
            support: r.support,
            clamped: r.clamped,
        })
        .collect()
}

/// Grid points outside every detected ball.
pub fn safe_mask(grid: &TestGrid, regions: &DetectedRegionSet) -> Vec<bool> {
    grid.points()
        .iter()
        .map(|p| !regions.in_unsafe(p))
        .collect()
}

/// Nearest grid point to `original` that is outside the detected regions
/// and not claimed; ties go to the lowest index.
pub fn relocate(
    original: &Point,
    safe: &[bool],
    grid: &TestGrid,
    claimed: &[bool],
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in grid.points().iter().enumerate() {
        if !safe[i] || claimed[i] {
            continue;
        }
        let d = p.dist2(original);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::arg("entire grid estimated unsafe"))
}

/// Grid indices that a relocation of slot `k` may not take.
fn claimed_except(plan: &MeasurementPlan, grid_len: usize, k: usize) -> Vec<bool> {
    let mut claimed = vec![false; grid_len];
    for (j, s) in plan.slots().iter().enumerate() {
        if j < plan.visited() {
            claimed[s.grid_index] = true;
        } else if j != k {
            claimed[s.grid_index] = true;
            claimed[s.original_index] = true;
        }
    }
    claimed
}

/// Moves every unvisited slot whose point lies in a detected region.
pub fn relocate_unsafe(
    plan: &mut MeasurementPlan,
    grid: &TestGrid,
    regions: &DetectedRegionSet,
    safe: &[bool],
) -> Result<Vec<Relocation>> {
    let dim = grid.dim();
    let mut moves = Vec::new();
    for k in plan.future() {
        let slot = plan.slot(k).clone();
        if !regions.in_unsafe(&slot.point) {
            continue;
        }
        let claimed = claimed_except(plan, grid.len(), k);
        let target = relocate(&slot.original, safe, grid, &claimed)?;
        if target == slot.original_index {
            plan.reinstate(k)?;
        } else {
            plan.relocate(k, target, grid.point(target))?;
        }
        moves.push(Relocation {
            slot: k,
            from: slot.point.coords(dim),
            to: grid.point(target).coords(dim),
        });
    }
    Ok(moves)
}

/// Restores blocked originals that are no longer inside a detected region.
pub fn reinstate(plan: &mut MeasurementPlan, regions: &DetectedRegionSet) -> Result<Vec<usize>> {
    let ready: Vec<usize> = plan
        .blocked()
        .filter(|&k| !regions.in_unsafe(&plan.slot(k).original))
        .collect();
    for &k in &ready {
        plan.reinstate(k)?;
    }
    Ok(ready)
}

fn straight(a: Point, b: Point) -> Vec<Point> {
    if a == b {
        vec![a]
    } else {
        vec![a, b]
    }
}

struct Runner<'a> {
    cfg: &'a EpisodeConfig,
    grid: TestGrid,
    meas: MeasurementModel,
    state: EpisodeState,
    logs: Vec<StepLog>,
    snapshots: Vec<Snapshot>,
    final_map: Option<BinarySafetyMap>,
    maps: Vec<BinarySafetyMap>,
    executed_grid: Vec<usize>,
}

impl Runner<'_> {
    fn leg(&mut self, goal: Point) -> std::result::Result<(f64, bool), String> {
        let index = self.state.trajectory.len();
        let from = self.state.position;
        let (waypoints, snapped) = if self.cfg.plan_paths && from != goal {
            let mut r = rng::leg_stream(self.cfg.seed, index);
            let p = plan_with_rng(
                &from,
                &goal,
                &self.state.regions,
                &self.cfg.planner,
                self.grid.bounds(),
                &mut r,
            )
            .map_err(|e| e.to_string())?;
            let snapped = p.snapped_from.is_some();
            let mut w = p.waypoints;
            if snapped {
                w.insert(0, from);
            }
            (w, snapped)
        } else {
            (straight(from, goal), false)
        };
        let len = waypoints.windows(2).map(|w| w[0].dist(&w[1])).sum();
        self.state.trajectory.push(Leg { index, waypoints });
        self.state.position = goal;
        Ok((len, snapped))
    }

    /// Measures at `x`, updates the model and returns the step log skeleton.
    fn measure(&mut self, x: Point, grid_index: usize) -> Result<StepLog> {
        let t = self.state.t + 1;
        let dim = self.grid.dim();
        let in_detected = self.state.regions.in_unsafe(&x);
        let y = self.meas.measure(&self.cfg.field, &x)?;
        self.state.gp.add(x, y)?;
        self.state.t = t;
        self.executed_grid.push(grid_index);
        let m = self.grid.len();
        let post = self.state.gp.tracked().expect("grid-tracking model");
        if self.cfg.snapshot_every > 0 && t.is_multiple_of(self.cfg.snapshot_every) {
            self.snapshots.push(Snapshot {
                t,
                posterior: post.clone(),
            });
        }
        let map = binary_map(
            post,
            &self.cfg.schedule,
            &self.grid,
            t + 1,
            self.cfg.threshold.f_bar,
        )?;
        let mut regions = detect(&map, &self.grid, &self.cfg.detector)?;
        if self.cfg.detector.require_mean_evidence {
            regions = filter_by_evidence(regions, &self.grid, &post.mean, self.cfg.threshold.f_bar);
        }
        let log = StepLog {
            t,
            x_t: x.coords(dim),
            y_t: y,
            beta_t: self.cfg.schedule.beta(m, t),
            map_beta: map.beta,
            unsafe_cells: map.unsafe_count(),
            regions: region_records(&regions, dim),
            relocations: Vec::new(),
            reinstated: Vec::new(),
            path_len: 0.0,
            uncertified: 0,
            in_detected,
            truly_unsafe: self.cfg.field.value(&x) > self.cfg.threshold.f_bar,
            future_in_detected: 0,
            start_snapped: false,
        };
        self.state.regions = DetectedRegionSet { t, ..regions };
        self.maps.push(map.clone());
        self.final_map = Some(map);
        Ok(log)
    }

    fn planned_loop(&mut self) -> std::result::Result<(), AbortRecord> {
        let abort = |step: usize, reason: String| AbortRecord { step, reason };
        if let Some(k) = self.state.plan.next() {
            let goal = self.state.plan.slot(k).point;
            self.leg(goal).map_err(|r| abort(0, r))?;
        }
        while let Some(k) = self.state.plan.next() {
            let step = self.state.t + 1;
            let slot = self.state.plan.slot(k).clone();
            self.state
                .plan
                .mark_visited()
                .map_err(|e| abort(step, e.to_string()))?;
            let mut log = self
                .measure(slot.point, slot.grid_index)
                .map_err(|e| abort(step, e.to_string()))?;
            let t = self.state.t;
            let post = self.state.gp.tracked().expect("grid-tracking model");
            let certified = safe_subset(
                &self.state.plan,
                post,
                &self.cfg.schedule,
                &self.grid,
                t,
                self.cfg.threshold.f_bar,
            );
            log.uncertified = self.state.plan.future().len() - certified.len();

            let safe = safe_mask(&self.grid, &self.state.regions);
            let moves =
                relocate_unsafe(&mut self.state.plan, &self.grid, &self.state.regions, &safe);
            let moves = match moves {
                Ok(m) => m,
                Err(e) => {
                    self.logs.push(log);
                    return Err(abort(t, e.to_string()));
                }
            };
            let back = reinstate(&mut self.state.plan, &self.state.regions)
                .map_err(|e| abort(t, e.to_string()))?;
            log.relocations = moves;
            log.reinstated = back
                .iter()
                .map(|&k| self.state.plan.slot(k).original.coords(self.grid.dim()))
                .collect();
            log.future_in_detected = self
                .state
                .plan
                .future()
                .filter(|&j| self.state.regions.in_unsafe(&self.state.plan.slot(j).point))
                .count();
            if let Some(next) = self.state.plan.next() {
                let goal = self.state.plan.slot(next).point;
                match self.leg(goal) {
                    Ok((len, snapped)) => {
                        log.path_len = len;
                        log.start_snapped = snapped;
                    }
                    Err(r) => {
                        self.logs.push(log);
                        return Err(abort(t, r));
                    }
                }
            }
            self.logs.push(log);
        }
        Ok(())
    }

    fn mvs_loop(&mut self, steps: usize) -> std::result::Result<(), AbortRecord> {
        let abort = |step: usize, reason: String| AbortRecord { step, reason };
        let mut target = self.grid.project(&self.cfg.start);
        let first = self.grid.point(target);
        self.leg(first).map_err(|r| abort(0, r))?;
        for _ in 0..steps {
            let step = self.state.t + 1;
            let mut log = self
                .measure(self.grid.point(target), target)
                .map_err(|e| abort(step, e.to_string()))?;
            let safe = safe_mask(&self.grid, &self.state.regions);
            let var = &self
                .state
                .gp
                .tracked()
                .expect("grid-tracking model")
                .variance;
            let Some(next) = crate::planner::argmax_tied(var, |i| !safe[i]) else {
                self.logs.push(log);
                return Err(abort(step, "entire grid estimated unsafe".into()));
            };
            target = next;
            if self.state.t < steps {
                match self.leg(self.grid.point(target)) {
                    Ok((len, snapped)) => {
                        log.path_len = len;
                        log.start_snapped = snapped;
                    }
                    Err(r) => {
                        self.logs.push(log);
                        return Err(abort(step, r));
                    }
                }
            }
            self.logs.push(log);
        }
        Ok(())
    }
}

pub fn run_episode(cfg: &EpisodeConfig) -> Result<Episode> {
    cfg.field.validate()?;
    cfg.kernel.validate()?;
    cfg.schedule.validate()?;
    cfg.planner.validate()?;
    cfg.detector.hough.validate()?;
    let grid = TestGrid::uniform(cfg.field.bounds.clone(), cfg.grid_points_per_axis)?;
    cfg.field.bounds.check(&cfg.start)?;

    let (greedy, plan) = match cfg.mode {
        SamplingMode::Planned => {
            let picks = mvs_select(&cfg.kernel, &grid, cfg.budget, &cfg.start)?;
            let plan = nn_order(&grid, &picks, &cfg.start);
            (picks, plan)
        }
        SamplingMode::MvsOnSafe { .. } => (Vec::new(), MeasurementPlan::empty()),
    };
    let gp = GpModel::tracking(cfg.kernel, grid.points().to_vec())?;
    let mut run = Runner {
        cfg,
        meas: MeasurementModel::new(cfg.noise_std, cfg.seed)?,
        state: EpisodeState {
            gp,
            plan: plan.clone(),
            regions: DetectedRegionSet::empty(0),
            trajectory: Vec::new(),
            t: 0,
            position: cfg.start,
        },
        grid,
        logs: Vec::new(),
        snapshots: Vec::new(),
        final_map: None,
        maps: Vec::new(),
        executed_grid: Vec::new(),
    };
    let outcome = match cfg.mode {
        SamplingMode::Planned => run.planned_loop(),
        SamplingMode::MvsOnSafe { steps } => run.mvs_loop(steps),
    };
    let abort = outcome.err();
    if let Some(a) = &abort {
        log::error!("episode aborted at step {}: {}", a.step, a.reason);
    }
    let posterior = run
        .state
        .gp
        .tracked()
        .cloned()
        .unwrap_or_else(|| Posterior::prior(&cfg.kernel, run.grid.len()));
    let data = run.state.gp.data().clone();
    debug_assert!(run
        .state
        .plan
        .slots()
        .iter()
        .take(run.state.plan.visited())
        .all(|s| s.status == SlotStatus::Visited));
    Ok(Episode {
        greedy,
        initial_plan: plan,
        executed: data.locations.clone(),
        executed_grid: run.executed_grid,
        data,
        posterior,
        plan: run.state.plan,
        trajectory: run.state.trajectory,
        logs: run.logs,
        snapshots: run.snapshots,
        final_map: run.final_map,
        maps: run.maps,
        regions: run.state.regions,
        abort,
        grid: run.grid,
    })
}

/// Converts an aborted episode into the matching error.
pub fn require_complete(ep: &Episode) -> Result<()> {
    match &ep.abort {
        None => Ok(()),
        Some(a) => Err(Error::EpisodeAbort {
            step: a.step,
            reason: a.reason.clone(),
        }),
    }
}
