use capcon::{
    extract_x_star_fd, homogeneous_value, merton_value, solve_fd, solve_x_star, Error, FdOptions,
    Model, ModelParams, SolveOptions,
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

fn model(params: ModelParams) -> Model {
    Model::new(params).unwrap()
}

fn max_rel_error(fd: &capcon::FdSolution, range: (f64, f64), oracle: impl Fn(f64) -> f64) -> f64 {
    fd.x_grid
        .iter()
        .zip(&fd.v)
        .filter(|(x, _)| **x >= range.0 && **x <= range.1)
        .map(|(&x, &v)| (v / oracle(x) - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn homogeneous_matches_closed_form() {
    let m = model(ModelParams { ell: 0.0, ..p0() });
    let fd = solve_fd(&m, &FdOptions::for_model(&m, 4000)).unwrap();
    let n = fd.x_grid.len();
    let range = (fd.x_grid[n / 4], fd.x_grid[3 * n / 4]);
    let err = max_rel_error(&fd, range, |x| homogeneous_value(x, &m).unwrap());
    assert!(err <= 5e-3, "err={err}");
}

#[test]
fn merton_equivalent_matches_closed_form() {
    let m = model(ModelParams { k: 0.2, ..p0() });
    let fd = solve_fd(&m, &FdOptions::for_model(&m, 4000)).unwrap();
    let err = max_rel_error(&fd, (0.01, 100.0), |x| merton_value(x, &m).unwrap());
    assert!(err <= 5e-3, "err={err}");
    assert!(matches!(
        extract_x_star_fd(&m, &fd),
        Err(Error::NoCrossing) | Err(Error::RegimeMismatch { .. })
    ));
}

#[test]
fn main_regime_agrees_with_shooting() {
    for params in [
        p0(),
        ModelParams {
            r: 0.06,
            k: 0.01,
            ..p0()
        },
    ] {
        let m = model(params);
        let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
        let fd = solve_fd(&m, &FdOptions::for_model(&m, 4000)).unwrap();
        let xs = sol.x_star;
        let err = max_rel_error(&fd, (0.05 * xs, 20.0 * xs), |x| sol.value(x).unwrap());
        assert!(err <= 5e-3, "err={err}");
        let (a, b) = extract_x_star_fd(&m, &fd).unwrap();
        assert!(a <= xs && xs <= b, "cell [{a}, {b}] misses {xs}");
    }
}

#[test]
fn refinement_shrinks_boundary_cell() {
    let m = model(p0());
    let cell = |n| {
        let fd = solve_fd(&m, &FdOptions::for_model(&m, n)).unwrap();
        let (a, b) = extract_x_star_fd(&m, &fd).unwrap();
        b - a
    };
    let ratio = cell(2000) / cell(4000);
    assert!((1.6..=2.4).contains(&ratio), "ratio={ratio}");
}

#[test]
fn larger_floor_raises_value() {
    let lo = model(p0());
    let hi = model(ModelParams { ell: 2.0, ..p0() });
    let a = solve_fd(&lo, &FdOptions::for_model(&lo, 1000)).unwrap();
    let b = solve_x_star(&hi, &SolveOptions::default()).unwrap();
    for (&x, &v) in a.x_grid.iter().zip(&a.v).skip(1).step_by(50) {
        if x > 1e3 {
            break;
        }
        assert!(b.value(x).unwrap() > v);
    }
}

#[test]
fn allocation_is_linear_for_proportional_cap() {
    let m = model(ModelParams { ell: 0.0, ..p0() });
    let fd = solve_fd(&m, &FdOptions::for_model(&m, 4000)).unwrap();
    for (&x, &pi) in fd.x_grid.iter().zip(&fd.pi) {
        if (0.1..=100.0).contains(&x) {
            assert!((pi / (2.5 * x) - 1.0).abs() <= 0.02, "x={x} pi={pi}");
        }
    }
}

#[test]
fn allocation_agrees_with_hjb_maximiser() {
    for params in [
        p0(),
        ModelParams {
            r: 0.06,
            k: 0.01,
            ..p0()
        },
    ] {
        let m = model(params);
        let sol = solve_x_star(&m, &SolveOptions::default()).unwrap();
        let fd = solve_fd(&m, &FdOptions::for_model(&m, 4000)).unwrap();
        let xs = sol.x_star;
        let mut worst_linear: f64 = 0.0;
        for (&x, &pi) in fd.x_grid.iter().zip(&fd.pi) {
            if (0.05 * xs..=20.0 * xs).contains(&x) {
                let want = sol.allocation(x);
                assert!((pi / want - 1.0).abs() <= 0.02, "x={x} pi={pi} want={want}");
                worst_linear = worst_linear.max((pi / (2.5 * x) - 1.0).abs());
            }
        }
        // The linear rule is visibly off near the boundary.
        assert!(worst_linear > 0.05, "worst={worst_linear}");
    }
}

#[test]
fn preconditions() {
    let m = model(p0());
    let small = FdOptions::for_model(&m, 100);
    assert!(solve_fd(&m, &small).is_err());
    let short = FdOptions {
        x_max: 10.0,
        ..FdOptions::for_model(&m, 1000)
    };
    assert!(solve_fd(&m, &short).is_err());
    let unsupported = model(ModelParams {
        r: 0.06,
        k: 0.05,
        ..p0()
    });
    assert!(solve_fd(&unsupported, &FdOptions::for_model(&unsupported, 1000)).is_err());
}
