use safemap::planner::SlotStatus;
use safemap::*;

fn small(seed: u64, budget: usize) -> EpisodeConfig {
    let mut cfg = ExperimentConfig::preset("sim2d").unwrap();
    cfg.seed = seed;
    cfg.budget = budget;
    cfg.grid_points_per_axis = 50;
    cfg.snapshot_every = 1;
    cfg.resolve().unwrap()
}

#[test]
fn episode_structure() {
    for seed in [1, 2] {
        let cfg = small(seed, 60);
        let ep = run_episode(&cfg).unwrap();
        assert!(ep.abort.is_none(), "{:?}", ep.abort);
        assert_eq!(ep.executed.len(), 60);
        assert_eq!(ep.logs.len(), 60);
        assert_eq!(ep.maps.len(), 60);
        assert_eq!(ep.plan.visited(), 60);
        assert_eq!(ep.snapshots.first().map(|s| s.t), Some(1));
        assert_eq!(ep.snapshots.last().map(|s| s.t), Some(60));
        for (k, (log, map)) in ep.logs.iter().zip(&ep.maps).enumerate() {
            assert_eq!(log.t, k + 1);
            assert_eq!(map.t, k + 2, "map after step t is the step t + 1 map");
            assert_eq!(log.unsafe_cells, map.unsafe_count());
            assert_eq!(log.future_in_detected, 0);
        }
        // The plan prefix equals the measured sequence.
        for (slot, x) in ep.plan.slots().iter().zip(&ep.executed) {
            assert_eq!(slot.status, SlotStatus::Visited);
            assert_eq!(&slot.point, x);
        }
    }
}

#[test]
fn relocations_land_outside_current_regions() {
    let cfg = small(3, 80);
    let ep = run_episode(&cfg).unwrap();
    let mut moved = 0;
    for log in &ep.logs {
        let regions = DetectedRegionSet {
            t: log.t,
            regions: log
                .regions
                .iter()
                .map(|r| Region {
                    center: Point::from_slice(&r.center).unwrap(),
                    radius: r.r,
                    support: r.support,
                    clamped: r.clamped,
                })
                .collect(),
        };
        for r in &log.relocations {
            let from = Point::from_slice(&r.from).unwrap();
            let to = Point::from_slice(&r.to).unwrap();
            assert!(
                !regions.in_unsafe(&to),
                "relocated into a region at t = {}",
                log.t
            );
            assert!(from != to);
            moved += 1;
        }
    }
    assert!(moved > 0, "seed 3 is expected to relocate");
    // Every substitute keeps its original coordinate.
    for s in ep.plan.slots() {
        let init = ep
            .initial_plan
            .slots()
            .iter()
            .find(|i| i.origin == s.origin)
            .unwrap();
        assert_eq!(s.original, init.point);
    }
}

#[test]
fn plan_never_holds_duplicate_points() {
    let ep = run_episode(&small(5, 80)).unwrap();
    let mut seen: Vec<usize> = ep.plan.slots().iter().map(|s| s.grid_index).collect();
    seen.sort_unstable();
    let n = seen.len();
    seen.dedup();
    assert_eq!(seen.len(), n);
}

#[test]
fn episodes_replay_exactly() {
    let cfg = small(9, 40);
    let a = run_episode(&cfg).unwrap();
    let b = run_episode(&cfg).unwrap();
    assert_eq!(a.executed, b.executed);
    assert_eq!(a.data.values, b.data.values);
    assert_eq!(a.regions, b.regions);
    let c = run_episode(&EpisodeConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.data.values, c.data.values);
}

#[test]
fn mvs_on_safe_mode_runs_without_a_plan() {
    let mut cfg = small(1, 0);
    cfg.mode = SamplingMode::MvsOnSafe { steps: 30 };
    cfg.plan_paths = false;
    let ep = run_episode(&cfg).unwrap();
    assert!(ep.greedy.is_empty());
    assert!(ep.initial_plan.is_empty());
    assert_eq!(ep.executed.len(), 30);
    // Each step measures the highest-variance point outside the regions.
    assert_eq!(ep.executed_grid[0], 0);
}

#[test]
fn zero_budget_episode_is_empty() {
    let ep = run_episode(&small(1, 0)).unwrap();
    assert!(ep.executed.is_empty());
    assert!(ep.logs.is_empty());
    assert!(ep.abort.is_none());
}

#[test]
fn three_dimensional_episode_smoke() {
    let mut cfg = ExperimentConfig::preset("sim3d").unwrap();
    cfg.budget = 15;
    cfg.grid_points_per_axis = 12;
    let ep = run_episode(&cfg.resolve().unwrap()).unwrap();
    assert!(ep.abort.is_none(), "{:?}", ep.abort);
    assert_eq!(ep.executed.len(), 15);
    assert!(ep
        .executed
        .iter()
        .all(|p| cfg.resolve().unwrap().field.bounds.contains(p)));
}
