use std::time::Instant;

use capcon::free_boundary::{asymptotic_wealth, default_y_min, shoot, EventKind, ShotOutcome};
use capcon::{
    homogeneous_value, integrate_dual, shooting_residual, solve_x_star, Error, Model, ModelParams,
    Region, SolveOptions,
};

fn p0() -> ModelParams {
    ModelParams {
        r: 0.03,
        mu: 0.05,
        sigma: 0.2,
        beta: 0.1,
        p: 0.5,
        k: 0.05,
        ell: 1.0,
    }
}

fn p1() -> ModelParams {
    ModelParams {
        r: 0.06,
        k: 0.01,
        ..p0()
    }
}

fn model(params: ModelParams) -> Model {
    Model::new(params).unwrap()
}

#[test]
fn p0_boundary_inside_bracket() {
    let m = model(p0());
    let t = Instant::now();
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert!(4.6154 < sol.x_star && sol.x_star < 17.391);
    assert!((sol.x_star - 15.0037279).abs() < 1e-5);
    assert!(sol.residual.abs() <= 1e-6 * sol.x_star);
    assert!(sol.trajectory.events.is_empty());
}

#[test]
fn p1_boundary_below_exception_point() {
    let m = model(p1());
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let (lo, hi) = m.bracket().unwrap();
    assert!(lo < sol.x_star && sol.x_star < hi);
    assert!(sol.x_star < 20.0);
    let crossings: Vec<_> = sol
        .trajectory
        .events
        .iter()
        .filter(|e| e.kind == EventKind::YeCrossing)
        .collect();
    assert_eq!(crossings.len(), 1);
    assert!((crossings[0].x - 20.0).abs() < 1e-6);
    assert!(!sol.trajectory.has_event(EventKind::Truncated));
    let e = sol.evaluate(20.0).unwrap();
    assert!(e.one_sided);
    assert_eq!(e.region, Region::C);
}

#[test]
fn residual_signs_at_bracket_ends() {
    for params in [p0(), p1()] {
        let m = model(params);
        let (lo, hi) = m.bracket().unwrap();
        let y_min = default_y_min(&m).unwrap();
        let opts = SolveOptions::default();
        assert!(shooting_residual(&m, lo, y_min, &opts).unwrap() < 0.0);
        assert!(shooting_residual(&m, hi, y_min, &opts).unwrap() > 0.0);
    }
}

#[test]
fn zero_length_shot_is_finite() {
    let m = model(p0());
    let opts = SolveOptions::default();
    let y_star = m.cap(10.0).powf(-0.5);
    let (shot, _) = shoot(&m, 10.0, y_star, &opts).unwrap();
    assert_eq!(shot.outcome, ShotOutcome::Reached);
    assert!(shot.residual.is_finite());
    assert_eq!(shot.x_end, 10.0);
}

#[test]
fn tighter_bisection_stays_within_previous_width() {
    let m = model(p0());
    let (lo, hi) = m.bracket().unwrap();
    let a = solve_x_star(
        &m,
        &SolveOptions {
            tol: 1e-8,
            ..Default::default()
        },
    )
    .unwrap();
    let b = solve_x_star(
        &m,
        &SolveOptions {
            tol: 5e-9,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((a.x_star - b.x_star).abs() <= 1e-8 * (hi - lo));
}

#[test]
fn boundary_stable_under_tighter_integration() {
    let m = model(p0());
    let a = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let b = solve_x_star(
        &m,
        &SolveOptions {
            rtol: 5e-9,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((a.x_star - b.x_star).abs() <= 1e-8 * a.x_star);
}

#[test]
fn trajectory_meets_asymptote() {
    for params in [p0(), p1()] {
        let m = model(params);
        let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
        let end = sol.trajectory.last();
        assert!(asymptotic_wealth(&m, end.y) >= 50.0 * sol.x_star);
        assert!((end.x() / asymptotic_wealth(&m, end.y) - 1.0).abs() < 5e-3);
        for w in sol.trajectory.points.windows(2) {
            assert!(w[1].y < w[0].y && w[1].x() > w[0].x());
            assert!(w[1].v_yy > 0.0);
        }
    }
}

#[test]
fn dual_integration_reproduces_homogeneous_solution() {
    // With l = 0 the capped branch holds everywhere and v(y) = (1-p) a x^p
    // along x = (y / (p a))^(1/(p-1)).
    let m = model(ModelParams { ell: 0.0, ..p0() });
    let p = m.params.p;
    let a = m.consts.a_inf.unwrap();
    let exact = |y: f64| {
        let x = asymptotic_wealth(&m, y);
        ((1.0 - p) * a * x.powf(p), -x)
    };
    let y0 = 0.5;
    let (v0, vy0) = exact(y0);
    let tol = SolveOptions::default().ode_tolerances();
    let traj = integrate_dual(&m, y0, v0, vy0, 1e-4, &tol).unwrap();
    assert!(traj.last().y <= 1e-4 * (1.0 + 1e-12));
    for pt in &traj.points {
        let (v, vy) = exact(pt.y);
        assert!((pt.v / v - 1.0).abs() < 1e-6);
        assert!((pt.v_y / vy - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dual_integration_preconditions() {
    let m = model(p0());
    let tol = SolveOptions::default().ode_tolerances();
    assert!(matches!(
        integrate_dual(&m, 0.5, 1.0, 2.0, 1e-3, &tol),
        Err(Error::Domain { .. })
    ));
    assert!(integrate_dual(&m, 0.5, 1.0, -2.0, 0.6, &tol).is_err());
    assert!(integrate_dual(&m, 0.5, 1.0, -2.0, 0.0, &tol).is_err());
}

#[test]
fn non_main_regimes_are_refused() {
    let opts = SolveOptions::default();
    let unsupported = model(ModelParams {
        r: 0.06,
        k: 0.05,
        ..p0()
    });
    assert!(matches!(
        solve_x_star(&unsupported, &opts),
        Err(Error::Unsupported { .. })
    ));
    let hom = model(ModelParams { ell: 0.0, ..p0() });
    assert!(matches!(
        solve_x_star(&hom, &opts),
        Err(Error::RegimeMismatch { .. })
    ));
}

#[test]
fn region_and_policy_examples() {
    let m = model(p0());
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let xs = sol.x_star;
    assert_eq!(sol.region(xs / 2.0).unwrap(), Region::U);
    assert_eq!(sol.region(xs).unwrap(), Region::C);
    assert_eq!(sol.region(2.0 * xs).unwrap(), Region::C);
    for x in [xs, 1.5 * xs, 100.0 * xs] {
        assert_eq!(sol.policy(x).c, m.cap(x));
    }
    let kappa = m.consts.kappa;
    let tiny = sol.policy(1e-6);
    assert!((tiny.c / 1e-6 / kappa - 1.0).abs() < 1e-5);
    assert_eq!(sol.policy(0.0).c, 0.0);
    for i in 0..200 {
        let x = 1e-3 * 1.06f64.powi(i);
        let pol = sol.policy(x);
        assert!(pol.c >= 0.0 && pol.c <= m.cap(x));
        assert_eq!(pol.pi, sol.allocation(x));
        assert!(pol.pi > 0.0);
    }
    assert_eq!(sol.value(0.0).unwrap(), 0.0);
}

#[test]
fn bounds_at_log_spaced_points() {
    for params in [p0(), p1()] {
        let m = model(params);
        let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
        let (p, kappa) = (m.params.p, m.consts.kappa);
        let a = m.consts.a_inf.unwrap();
        let eta = m.consts.eta.unwrap();
        for i in 0..100 {
            let x = sol.x_star * 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0);
            let e = sol.evaluate(x).unwrap();
            let upper = kappa.powf(p - 1.0) * x.powf(p) / p;
            assert!(a * x.powf(p) <= e.v * (1.0 + 1e-9) && e.v <= upper * (1.0 + 1e-9));
            assert!((eta * x).powf(p - 1.0) <= e.vx * (1.0 + 1e-9));
            assert!(e.vx <= (kappa * x).powf(p - 1.0) * (1.0 + 1e-9));
            assert!(x * e.vx <= p * e.v * (1.0 + 1e-9));
            assert!(e.vxx < 0.0);
        }
    }
}

#[test]
fn extrapolation_offers_fallback() {
    let m = model(p0());
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let x = 2.0 * sol.trajectory.x_max();
    match sol.evaluate(x) {
        Err(Error::Extrapolation { fallback, .. }) => {
            assert!((fallback / (m.consts.a_inf.unwrap() * x.sqrt()) - 1.0).abs() < 1e-12)
        }
        other => panic!("expected extrapolation error, got {other:?}"),
    }
}

#[test]
fn small_floor_approaches_homogeneous_value() {
    let m = model(ModelParams { ell: 1e-4, ..p0() });
    let hom = model(ModelParams { ell: 0.0, ..p0() });
    let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
    let (lo, hi) = m.bracket().unwrap();
    assert!(lo < sol.x_star && sol.x_star < hi && hi < 2e-3);
    for i in 0..50 {
        let x = 10f64.powf(2.0 * i as f64 / 49.0);
        let v = sol.value(x).unwrap();
        let h = homogeneous_value(x, &hom).unwrap();
        assert!((v / h - 1.0).abs() <= 2e-3, "x={x} v={v} h={h}");
    }
}
