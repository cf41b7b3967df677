use std::hint::black_box;

use capcon::mc::Scaled;
use capcon::{
    compare_policies, solve_fd, solve_x_star, FdOptions, FeedbackPolicy, Model, ModelParams,
    OptimalPolicy, SimConfig, SolveOptions,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn p0() -> Model {
    Model::new(ModelParams {
        r: 0.03,
        mu: 0.05,
        sigma: 0.2,
        beta: 0.1,
        p: 0.5,
        k: 0.05,
        ell: 1.0,
    })
    .unwrap()
}

fn p1() -> Model {
    Model::new(ModelParams {
        r: 0.06,
        k: 0.01,
        ..p0().params
    })
    .unwrap()
}

fn shooting(c: &mut Criterion) {
    let opts = SolveOptions::default();
    for (name, m) in [("p0", p0()), ("p1", p1())] {
        c.bench_function(&format!("solve_x_star/{name}"), |b| {
            b.iter(|| solve_x_star(black_box(&m), &opts).unwrap())
        });
    }
}

fn evaluation(c: &mut Criterion) {
    let sol = solve_x_star(&p0(), &SolveOptions::default()).unwrap();
    let xs: Vec<f64> = (0..256)
        .map(|i| sol.x_star * 10f64.powf(-3.0 + 6.0 * i as f64 / 255.0))
        .collect();
    c.bench_function("evaluate/256_points", |b| {
        b.iter(|| {
            xs.iter()
                .map(|&x| sol.evaluate(black_box(x)).unwrap().v)
                .sum::<f64>()
        })
    });
    let policy = OptimalPolicy::new(&sol).unwrap();
    c.bench_function("optimal_policy/256_points", |b| {
        b.iter(|| {
            xs.iter()
                .map(|&x| policy.controls(black_box(x)).c)
                .sum::<f64>()
        })
    });
}

fn finite_difference(c: &mut Criterion) {
    let m = p0();
    let mut group = c.benchmark_group("solve_fd");
    group.sample_size(10);
    for n in [1000, 4000] {
        let opts = FdOptions::for_model(&m, n);
        group.bench_function(format!("{n}_nodes"), |b| {
            b.iter(|| solve_fd(black_box(&m), &opts).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let m = p0();
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let opt = OptimalPolicy::new(&sol).unwrap();
    let low = Scaled::new(&opt, &m, 0.8, 1.0);
    let policies: [&dyn FeedbackPolicy; 2] = [&opt, &low];
    let cfg = SimConfig {
        x0: sol.x_star,
        dt: 1e-2,
        horizon: 20.0,
        n_paths: 512,
        seed: 1,
    };
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("512_paths_2_policies", |b| {
        b.iter(|| compare_policies(black_box(&m), &cfg, &policies).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    shooting,
    evaluation,
    finite_difference,
    monte_carlo
);
criterion_main!(benches);
