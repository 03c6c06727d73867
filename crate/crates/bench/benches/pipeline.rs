use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use safemap::detector::{detect_2d, HoughParams};
use safemap::rrtstar::plan;
use safemap::*;

fn grid_points(n: usize) -> TestGrid {
    TestGrid::uniform(Bounds::unit_square(), n).unwrap()
}

fn gp_update(c: &mut Criterion) {
    let params = KernelParams::new(1.0, 0.15, 1e-4).unwrap();
    let grid = grid_points(100);
    let field = FieldSpec::sim2d();
    let xs: Vec<Point> = (0..100)
        .map(|i| grid.point((i * 997) % grid.len()))
        .collect();
    c.bench_function("gp/100 tracked updates on 100x100 grid", |b| {
        b.iter_batched(
            || GpModel::tracking(params, grid.points().to_vec()).unwrap(),
            |mut gp| {
                for x in &xs {
                    gp.add(*x, field.value(x)).unwrap();
                }
                gp
            },
            BatchSize::LargeInput,
        )
    });
    c.bench_function("planner/mvs select 100 of 2500", |b| {
        let g = grid_points(50);
        b.iter(|| mvs_select(&params, black_box(&g), 100, &Point::new2(0.0, 0.0)).unwrap())
    });
}

fn detection(c: &mut Criterion) {
    let grid = grid_points(100);
    let centres = [Point::new2(0.25, 0.75), Point::new2(0.75, 0.25)];
    let map = BinarySafetyMap {
        t: 1,
        beta: 1.0,
        f_bar: 0.0,
        margin: 0.0,
        shape: grid.shape(),
        dim: 2,
        bits: grid
            .points()
            .iter()
            .map(|p| centres.iter().any(|c| p.dist(c) <= 0.12))
            .collect(),
    };
    let params = HoughParams::default();
    c.bench_function("detect/hough two disks on 100x100", |b| {
        b.iter(|| detect_2d(black_box(&map), &grid, &params).unwrap())
    });
}

fn rrt(c: &mut Criterion) {
    let regions = DetectedRegionSet {
        t: 0,
        regions: vec![Region {
            center: Point::new2(0.5, 0.5),
            radius: 0.15,
            support: 1.0,
            clamped: false,
        }],
    };
    let params = PlannerParams::default();
    let bounds = Bounds::unit_square();
    c.bench_function("rrt/around one disk", |b| {
        b.iter(|| {
            plan(
                &Point::new2(0.2, 0.5),
                &Point::new2(0.8, 0.5),
                black_box(&regions),
                &params,
                &bounds,
            )
            .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gp_update, detection, rrt
}
criterion_main!(benches);
