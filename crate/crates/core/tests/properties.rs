use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safemap::analysis::{convergence_audit, info_loss};
use safemap::detector::{detect_2d, HoughParams};
use safemap::field::{Source, SourceForm};
use safemap::replanner::Snapshot;
use safemap::rrtstar::{count_violations, plan};
use safemap::safety::certified;
use safemap::*;

fn points(seed: u64, n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point::new2(rng.random(), rng.random()))
        .collect()
}

fn params(l: f64) -> KernelParams {
    KernelParams::new(1.0, l, 1e-3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn field_ignores_source_order(x in 0.0..1.0f64, y in 0.0..1.0f64, rot in 0usize..4) {
        let spec = FieldSpec {
            dimension: 2,
            form: SourceForm::GaussianBump,
            bounds: Bounds::unit_square(),
            sources: (0..4)
                .map(|i| Source { center: vec![0.2 * i as f64 + 0.1, 0.9 - 0.2 * i as f64], amplitude: 1.0 + i as f64, scale: 0.05 })
                .collect(),
        };
        let mut rotated = spec.clone();
        rotated.sources.rotate_left(rot);
        let p = Point::new2(x, y);
        let a = eval_field(&spec, &p).unwrap();
        prop_assert!((a - eval_field(&rotated, &p).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(a, eval_field(&spec, &p).unwrap());
    }

    #[test]
    fn posterior_variance_stays_in_prior_band(seed in 0u64..10_000, n in 0usize..30, l in 0.05..0.5f64) {
        let p = params(l);
        let locs = points(seed, n);
        let vals: Vec<f64> = locs.iter().map(|q| q.x() - q.y()).collect();
        let data = Dataset::new(locs, vals).unwrap();
        prop_assert_eq!(data.len(), n);
        let post = posterior(&p, &data, &points(seed + 1, 40)).unwrap();
        for v in &post.variance {
            prop_assert!(*v >= -1e-12 && *v <= p.prior_var() + 1e-9);
        }
    }

    #[test]
    fn acquisition_order_does_not_matter(seed in 0u64..10_000, n in 1usize..25, shift in 1usize..24) {
        let p = params(0.2);
        let locs = points(seed, n);
        let vals: Vec<f64> = locs.iter().map(|q| (5.0 * q.x()).sin()).collect();
        let k = shift % n;
        let mut l2 = locs.clone();
        let mut v2 = vals.clone();
        l2.rotate_left(k);
        v2.rotate_left(k);
        let queries = points(seed + 7, 20);
        let a = posterior_covariance_matrix(&p, &Dataset::new(locs.clone(), vals).unwrap(), &queries).unwrap();
        let b = posterior_covariance_matrix(&p, &Dataset::new(l2.clone(), v2).unwrap(), &queries).unwrap();
        prop_assert!((a - b).amax() <= 1e-9);
        prop_assert!((mutual_information(&p, &locs) - mutual_information(&p, &l2)).abs() <= 1e-9);
    }

    #[test]
    fn grid_geometry_relations(n in 2usize..30, three in any::<bool>()) {
        let bounds = if three { Bounds::cube(0.0, 2.0) } else { Bounds::unit_square() };
        let grid = TestGrid::uniform(bounds, n).unwrap();
        let q = grid.separation();
        let h = grid.fill_distance();
        prop_assert!(q > 0.0);
        prop_assert!(h >= q / 2.0 - 1e-12);
    }

    #[test]
    fn beta_grows_with_time(m in 1usize..5000, t in 1usize..1000, delta in 0.001..0.5f64, basel in any::<bool>()) {
        let rule = if basel { PiRule::Basel } else { PiRule::Geometric };
        prop_assert!(rule.pi(t + 1) >= rule.pi(t));
        let s = ConfidenceSchedule { delta, pi_rule: rule, lipschitz: 1.0 };
        prop_assert!(beta(&s, m, t + 1).unwrap() >= beta(&s, m, t).unwrap());
    }

    #[test]
    fn map_bits_follow_the_certification_test(seed in 0u64..10_000, n in 0usize..15, f_bar in -0.5..1.5f64) {
        let grid = TestGrid::uniform(Bounds::unit_square(), 12).unwrap();
        let p = params(0.2);
        let locs = points(seed, n);
        let vals: Vec<f64> = locs.iter().map(|q| q.x()).collect();
        let post = posterior(&p, &Dataset::new(locs, vals).unwrap(), grid.points()).unwrap();
        let s = ConfidenceSchedule { delta: 0.05, pi_rule: PiRule::Basel, lipschitz: 0.5 };
        let map = binary_map(&post, &s, &grid, n + 1, f_bar).unwrap();
        let b = beta(&s, grid.len(), n + 1).unwrap();
        let margin = 0.5 * grid.fill_distance();
        for i in 0..grid.len() {
            let holds = post.mean[i] + b.sqrt() * post.std(i) + margin <= f_bar;
            prop_assert_eq!(map.bits[i], !holds);
        }
    }

    #[test]
    fn detected_regions_are_well_formed(cx in 0.1..0.9f64, cy in 0.1..0.9f64, r in 0.03..0.2f64) {
        let grid = TestGrid::uniform(Bounds::unit_square(), 60).unwrap();
        let c = Point::new2(cx, cy);
        let map = BinarySafetyMap {
            t: 1,
            beta: 1.0,
            f_bar: 0.0,
            margin: 0.0,
            shape: grid.shape(),
            dim: 2,
            bits: grid.points().iter().map(|p| p.dist(&c) <= r).collect(),
        };
        let set = detect_2d(&map, &grid, &HoughParams::default()).unwrap();
        for reg in &set.regions {
            prop_assert!(reg.radius > 0.0);
            prop_assert!(grid.bounds().contains(&reg.center));
        }
    }

    #[test]
    fn rrt_paths_respect_step_and_obstacles(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regions = DetectedRegionSet {
            t: 0,
            regions: (0..3)
                .map(|_| Region {
                    center: Point::new2(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)),
                    radius: rng.random_range(0.05..0.12),
                    support: 1.0,
                    clamped: false,
                })
                .collect(),
        };
        let free = |rng: &mut ChaCha8Rng| loop {
            let p = Point::new2(rng.random(), rng.random());
            if !regions.in_unsafe(&p) {
                break p;
            }
        };
        let (a, b) = (free(&mut rng), free(&mut rng));
        let pp = PlannerParams { seed, max_iterations: 3000, ..PlannerParams::default() };
        if let Ok(path) = plan(&a, &b, &regions, &pp, &Bounds::unit_square()) {
            for w in path.waypoints.windows(2) {
                prop_assert!(w[0].dist(&w[1]) <= pp.step_size + 1e-9);
            }
            prop_assert_eq!(count_violations(&path.waypoints, &regions, pp.collision_resolution), 0);
        }
    }

    #[test]
    fn information_loss_is_a_difference(seed in 0u64..10_000, n in 1usize..20) {
        let p = params(0.15);
        let r = info_loss(&p, &points(seed, n), &points(seed + 1, n), None).unwrap();
        prop_assert!((r.delta_gamma - (r.gamma_g - r.gamma_s)).abs() <= 1e-9);
        prop_assert!(r.eig_g.iter().chain(&r.eig_s).all(|l| *l >= -1e-9));
    }

    #[test]
    fn t_star_is_the_latest_persistent_certification(seed in 0u64..10_000, steps in 1usize..25) {
        let grid = TestGrid::uniform(Bounds::unit_square(), 6).unwrap();
        let p = params(0.3);
        let field = FieldSpec::sim2d();
        let s = ConfidenceSchedule { delta: 0.05, pi_rule: PiRule::Basel, lipschitz: 0.0 };
        let mut gp = GpModel::tracking(p, grid.points().to_vec()).unwrap();
        let mut snaps = vec![Snapshot { t: 0, posterior: Posterior::prior(&p, grid.len()) }];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 1..=steps {
            let x = grid.point(rng.random_range(0..grid.len()));
            gp.add(x, field.value(&x)).unwrap();
            snaps.push(Snapshot { t, posterior: gp.tracked().unwrap().clone() });
        }
        let rep = convergence_audit(&snaps, &field, 0.7, &s, &grid, 0.1).unwrap();
        let finite: Option<Vec<usize>> = rep
            .interior
            .iter()
            .zip(&rep.certified_from)
            .filter(|(i, _)| **i)
            .map(|(_, c)| *c)
            .collect();
        if let Some(ts) = finite {
            prop_assert_eq!(rep.t_star, ts.into_iter().max());
        } else {
            prop_assert_eq!(rep.t_star, None);
        }
        // A persistent certification holds at every later audited step.
        let last = snaps.last().unwrap();
        for i in 0..grid.len() {
            if rep.certified_from[i].is_some() {
                let b = s.beta(grid.len(), last.t + 1);
                prop_assert!(certified(last.posterior.mean[i], last.posterior.std(i), b, 0.0, 0.7));
            }
        }
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let text = ExperimentConfig::preset("sim2d").unwrap().to_toml();
    let without: String = text
        .lines()
        .filter(|l| !l.starts_with("seed"))
        .collect::<Vec<_>>()
        .join("\n");
    match ExperimentConfig::parse(&without) {
        Err(Error::Config { message, .. }) => assert!(message.contains("seed"), "{message}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
