//! RRT* legs between consecutive measurement locations, with detected
//! balls as obstacles.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::detector::DetectedRegionSet;
use crate::error::{Error, Result};
use crate::geometry::{Bounds, Point, SpatialHash};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub step_size: f64,
    /// Multiplier on the theoretical shrinking-ball constant.
    pub rewire_radius_gamma: f64,
    pub max_iterations: usize,
    pub goal_bias: f64,
    /// `None` means `step_size`.
    pub goal_tolerance: Option<f64>,
    pub collision_resolution: f64,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            step_size: 0.05,
            rewire_radius_gamma: 1.5,
            max_iterations: 5000,
            goal_bias: 0.05,
            goal_tolerance: None,
            collision_resolution: 0.01,
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("step_size must be > 0"));
        }
        if !(0.0..1.0).contains(&self.goal_bias) {
            return Err(Error::arg("goal_bias must lie in [0, 1)"));
        }
        if !(self.collision_resolution > 0.0 && self.collision_resolution <= self.step_size) {
            return Err(Error::arg(
                "collision_resolution must lie in (0, step_size]",
            ));
        }
        if self.rewire_radius_gamma.is_nan() || self.rewire_radius_gamma <= 0.0 {
            return Err(Error::arg("rewire_radius_gamma must be > 0"));
        }
        if let Some(t) = self.goal_tolerance {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::arg("goal_tolerance must be > 0"));
            }
        }
        Ok(())
    }

    pub fn goal_tolerance(&self) -> f64 {
        self.goal_tolerance.unwrap_or(self.step_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Point>,
    pub length: f64,
    /// Original start when it lay inside an obstacle and had to be moved.
    pub snapped_from: Option<Point>,
    /// `(iteration, best cost)` each time the best goal cost improved.
    pub cost_trace: Vec<(usize, f64)>,
    pub nodes: usize,
}

pub fn path_length(waypoints: &[Point]) -> Result<f64> {
    if waypoints.is_empty() {
        return Err(Error::arg("empty path"));
    }
    Ok(waypoints.windows(2).map(|w| w[0].dist(&w[1])).sum())
}

#[derive(Debug, Clone, Copy)]
struct Ball {
    c: Point,
    r2: f64,
}

#[derive(Debug, Clone)]
struct Obstacles {
    balls: Vec<Ball>,
    resolution: f64,
}

impl Obstacles {
    fn point_free(&self, p: &Point) -> bool {
        self.balls.iter().all(|b| p.dist2(&b.c) > b.r2)
    }

    fn segment_free(&self, a: &Point, b: &Point) -> bool {
        let n = (a.dist(b) / self.resolution).ceil().max(1.0) as usize;
        (0..=n).all(|i| self.point_free(&a.lerp(b, i as f64 / n as f64)))
    }
}

/// Checks `waypoints` against `regions` (uninflated) at `resolution`.
/// Returns the number of sampled points that fall inside a ball.
pub fn count_violations(
    waypoints: &[Point],
    regions: &DetectedRegionSet,
    resolution: f64,
) -> usize {
    let obs = Obstacles {
        balls: regions
            .regions
            .iter()
            .map(|r| Ball {
                c: r.center,
                r2: r.radius * r.radius,
            })
            .collect(),
        resolution,
    };
    let mut bad = 0;
    for w in waypoints.windows(2) {
        let n = (w[0].dist(&w[1]) / resolution).ceil().max(1.0) as usize;
        bad += (0..=n)
            .filter(|&i| !obs.point_free(&w[0].lerp(&w[1], i as f64 / n as f64)))
            .count();
    }
    bad
}

struct Node {
    p: Point,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        2 => std::f64::consts::PI,
        _ => 4.0 / 3.0 * std::f64::consts::PI,
    }
}

/// Plans with the generator of leg 0 of `params.seed`.
pub fn plan(
    start: &Point,
    goal: &Point,
    regions: &DetectedRegionSet,
    params: &PlannerParams,
    bounds: &Bounds,
) -> Result<Path> {
    plan_with_rng(
        start,
        goal,
        regions,
        params,
        bounds,
        &mut rng::leg_stream(params.seed, 0),
    )
}

pub fn plan_with_rng(
    start: &Point,
    goal: &Point,
    regions: &DetectedRegionSet,
    params: &PlannerParams,
    bounds: &Bounds,
    rng: &mut Rng,
) -> Result<Path> {
    params.validate()?;
    bounds.check(start)?;
    bounds.check(goal)?;
    let dim = bounds.dim();
    let pad = 0.5 * params.collision_resolution;

    if regions.in_unsafe(goal) {
        return Err(Error::arg("goal lies inside a detected region"));
    }
    let balls = regions
        .regions
        .iter()
        .map(|r| {
            let inflated = r.radius + pad;
            let exempt = start.dist(&r.center) <= inflated || goal.dist(&r.center) <= inflated;
            let rad = if exempt { r.radius } else { inflated };
            Ball {
                c: r.center,
                r2: rad * rad,
            }
        })
        .collect();
    let obs = Obstacles {
        balls,
        resolution: params.collision_resolution,
    };

    let mut snapped_from = None;
    let mut root = *start;
    if !obs.point_free(start) {
        root = snap(start, &obs, bounds, 2.0 * params.step_size).ok_or_else(|| {
            Error::arg("start lies inside a detected region with no free point nearby")
        })?;
        log::warn!(
            "start {:?} inside a detected region; snapped {:.4} to {:?}",
            start.coords(dim),
            start.dist(&root),
            root.coords(dim)
        );
        snapped_from = Some(*start);
    }

    let tol = params.goal_tolerance();
    let step = params.step_size;
    let mut nodes = vec![Node {
        p: root,
        parent: None,
        cost: 0.0,
        children: Vec::new(),
    }];
    let mut index = SpatialHash::new(step);
    index.insert(root);
    let mut goal_nodes: Vec<usize> = Vec::new();
    if root.dist(goal) <= tol && obs.segment_free(&root, goal) {
        goal_nodes.push(0);
    }

    let d = dim as f64;
    let gamma_star = 2.0
        * (1.0 + 1.0 / d).powf(1.0 / d)
        * (bounds.volume() / unit_ball_volume(dim)).powf(1.0 / d);
    let gamma = params.rewire_radius_gamma * gamma_star;

    let best_goal = |nodes: &[Node], goal_nodes: &[usize]| -> Option<(usize, f64)> {
        goal_nodes
            .iter()
            .map(|&g| (g, nodes[g].cost + nodes[g].p.dist(goal)))
            .fold(None, |acc, (g, c)| match acc {
                Some((_, bc)) if bc <= c => acc,
                _ => Some((g, c)),
            })
    };
    let mut trace = Vec::new();
    if let Some((_, c)) = best_goal(&nodes, &goal_nodes) {
        trace.push((0, c));
    }

    for it in 1..=params.max_iterations {
        let sample = if rng.random::<f64>() < params.goal_bias {
            *goal
        } else {
            let mut p = Point::default();
            for a in 0..dim {
                p.0[a] = rng.random_range(bounds.min()[a]..=bounds.max()[a]);
            }
            p
        };
        let (near_id, dn) = index.nearest(&sample).expect("tree is never empty");
        if dn < 1e-12 {
            continue;
        }
        let from = nodes[near_id].p;
        let new = if dn <= step {
            sample
        } else {
            from.lerp(&sample, step / dn)
        };
        if !obs.point_free(&new) || !obs.segment_free(&from, &new) {
            continue;
        }

        let n = nodes.len() as f64 + 1.0;
        let radius = (gamma * (n.ln() / n).powf(1.0 / d)).min(step);
        let near = index.within(&new, radius);

        let mut parent = near_id;
        let mut cost = nodes[near_id].cost + from.dist(&new);
        for &j in &near {
            if j == near_id {
                continue;
            }
            let c = nodes[j].cost + nodes[j].p.dist(&new);
            if c < cost && obs.segment_free(&nodes[j].p, &new) {
                parent = j;
                cost = c;
            }
        }
        let id = nodes.len();
        nodes.push(Node {
            p: new,
            parent: Some(parent),
            cost,
            children: Vec::new(),
        });
        nodes[parent].children.push(id);
        index.insert(new);

        for &j in &near {
            if j == parent {
                continue;
            }
            let c = cost + new.dist(&nodes[j].p);
            if c < nodes[j].cost && obs.segment_free(&new, &nodes[j].p) {
                if let Some(old) = nodes[j].parent {
                    nodes[old].children.retain(|&k| k != j);
                }
                nodes[j].parent = Some(id);
                nodes[id].children.push(j);
                let delta = nodes[j].cost - c;
                let mut stack = vec![j];
                while let Some(k) = stack.pop() {
                    nodes[k].cost -= delta;
                    stack.extend(nodes[k].children.iter().copied());
                }
            }
        }

        if new.dist(goal) <= tol && obs.segment_free(&new, goal) {
            goal_nodes.push(id);
        }
        if let Some((_, c)) = best_goal(&nodes, &goal_nodes) {
            if trace.last().is_none_or(|&(_, prev)| c < prev) {
                trace.push((it, c));
            }
        }
    }

    let Some((g, _)) = best_goal(&nodes, &goal_nodes) else {
        let closest = nodes
            .iter()
            .map(|n| n.p.dist(goal))
            .fold(f64::INFINITY, f64::min);
        return Err(Error::PlannerTimeout {
            iterations: params.max_iterations,
            nodes: nodes.len(),
            closest,
        });
    };
    let mut waypoints = Vec::new();
    let mut cur = Some(g);
    while let Some(k) = cur {
        waypoints.push(nodes[k].p);
        cur = nodes[k].parent;
    }
    waypoints.reverse();
    if waypoints.last() != Some(goal) {
        waypoints.push(*goal);
    }
    let length = path_length(&waypoints)?;
    Ok(Path {
        waypoints,
        length,
        snapped_from,
        cost_trace: trace,
        nodes: nodes.len(),
    })
}

/// Nearest free, in-bounds point within `reach` of `p` among a fixed
/// pattern of directions and radii.
fn snap(p: &Point, obs: &Obstacles, bounds: &Bounds, reach: f64) -> Option<Point> {
    let dirs: Vec<[f64; 3]> = if bounds.dim() == 2 {
        (0..64)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 64.0;
                [a.cos(), a.sin(), 0.0]
            })
            .collect()
    } else {
        let n = 256;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * k as f64;
                [r * a.cos(), r * a.sin(), z]
            })
            .collect()
    };
    let rings = 64;
    for i in 1..=rings {
        let r = reach * i as f64 / rings as f64;
        for d in &dirs {
            let q = Point([p.0[0] + r * d[0], p.0[1] + r * d[1], p.0[2] + r * d[2]]);
            if bounds.contains(&q) && obs.point_free(&q) {
                return Some(q);
            }
        }
    }
    None
}
