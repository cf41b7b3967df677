//! Invariant suite run by `capsolve verify`.

use serde::{Deserialize, Serialize};

use crate::closed_form::{homogeneous_value, merton_value, pow_p};
use crate::error::{Error, Result};
use crate::fd::{extract_x_star_fd, solve_fd, FdOptions};
use crate::free_boundary::{
    shooting_residual, solve_x_star, DualEquation, EventKind, SolveOptions, ValueSolution,
    RESTART_CONTAMINATION,
};
use crate::params::{Model, Regime};
use crate::value::hjb_residual;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub regime: Regime,
    pub x_star: Option<f64>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn new(regime: Regime, x_star: Option<f64>, checks: Vec<Check>) -> Self {
        VerifyReport {
            regime,
            x_star,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub bound_points: usize,
    pub hjb_points: usize,
    pub fd_nodes: usize,
    pub scan_points: usize,
    pub hjb_tol: f64,
    pub c1_tol: f64,
    pub c2_tol: f64,
    pub fd_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            bound_points: 1000,
            hjb_points: 500,
            fd_nodes: 4000,
            scan_points: 16,
            hjb_tol: 1e-6,
            c1_tol: 1e-7,
            c2_tol: 1e-5,
            fd_tol: 5e-3,
        }
    }
}

fn check(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        value,
        threshold,
        detail,
    }
}

fn log_space(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(move |i| (la + (lb - la) * i as f64 / (n - 1).max(1) as f64).exp())
}

/// Runs the suite for a parameter set.
pub fn verify(model: &Model, solve: &SolveOptions, opts: &VerifyOptions) -> Result<VerifyReport> {
    match model.regime() {
        Regime::Main => {
            let sol = solve_x_star(model, solve)?;
            Ok(verify_solution(&sol, solve, opts))
        }
        Regime::Homogeneous | Regime::MertonEquivalent => Ok(verify_closed_form(model, opts)),
        _ => Err(model
            .require_main("verify")
            .expect_err("only ill-posed and unsupported remain")),
    }
}

/// Closed-form regimes: the finite-difference oracle against the formula.
fn verify_closed_form(model: &Model, opts: &VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    match solve_fd(model, &FdOptions::for_model(model, opts.fd_nodes)) {
        Ok(fd) => {
            let mut worst: f64 = 0.0;
            for (&x, &v) in fd.x_grid.iter().zip(&fd.v) {
                if !(1e-2..=1e2).contains(&x) {
                    continue;
                }
                let exact = if model.regime() == Regime::Homogeneous {
                    homogeneous_value(x, model)
                } else {
                    merton_value(x, model)
                };
                if let Ok(e) = exact {
                    worst = worst.max((v - e).abs() / e);
                }
            }
            checks.push(check(
                "fd_cross_check",
                worst <= opts.fd_tol,
                worst,
                opts.fd_tol,
                "max relative FD error against the closed form on [0.01, 100]".into(),
            ));
        }
        Err(e) => checks.push(check(
            "fd_cross_check",
            false,
            f64::NAN,
            opts.fd_tol,
            e.to_string(),
        )),
    }
    VerifyReport::new(model.regime(), None, checks)
}

/// Full suite for a (possibly perturbed) free-boundary solution.
pub fn verify_solution(
    sol: &ValueSolution,
    solve: &SolveOptions,
    opts: &VerifyOptions,
) -> VerifyReport {
    let checks = vec![
        check_solution_invariants(sol),
        check_bounds(sol, opts),
        check_pasting(sol, "c1_pasting", opts.c1_tol),
        check_pasting(sol, "c2_pasting", opts.c2_tol),
        check_hjb(sol, opts),
        check_fd(sol, opts),
        check_sign_scan(sol, solve, opts),
        check_ye_audit(sol),
    ];
    VerifyReport::new(sol.derived.regime, Some(sol.x_star), checks)
}

fn check_solution_invariants(sol: &ValueSolution) -> Check {
    let model = sol.model();
    let eq = DualEquation::new(&model);
    let (lo, hi) = sol.bracket;
    let mut problems = Vec::new();
    if !(sol.x_star > lo && sol.x_star < hi) {
        problems.push(format!(
            "x* = {} not strictly inside [{lo}, {hi}]",
            sol.x_star
        ));
    }
    let mut worst: f64 = 0.0;
    for p in &sol.trajectory.points {
        let excess = eq.capped_consumption(p.v_y) / eq.free_consumption(p.y) - 1.0;
        worst = worst.max(excess);
    }
    if worst > 1e-10 {
        problems.push(format!("constrained branch violated by {worst:e}"));
    }
    let coverage = sol.trajectory.x_max() / sol.x_star;
    if coverage < 50.0 {
        problems.push(format!("trajectory covers only {coverage:.3} x*"));
    }
    if sol.trajectory.has_event(EventKind::Truncated) {
        problems.push("trajectory truncated".into());
    }
    let shift = sol
        .restarts
        .iter()
        .map(|r| r.shift.abs())
        .fold(0.0, f64::max);
    if shift > RESTART_CONTAMINATION {
        problems.push(format!("restart shift {shift:e}"));
    }
    let res = sol.residual.abs() / sol.x_star;
    if !(res <= 1e-6) {
        problems.push(format!("residual {res:e} x*"));
    }
    check(
        "solution_invariants",
        problems.is_empty(),
        res,
        1e-6,
        if problems.is_empty() {
            format!(
                "x* in bracket, branch margin {worst:e}, coverage {coverage:.3e} x*, {} restarts",
                sol.restarts.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn check_bounds(sol: &ValueSolution, opts: &VerifyOptions) -> Check {
    let model = sol.model();
    let p = model.params.p;
    let kappa = model.consts.kappa;
    let eta = model.consts.eta.unwrap_or(f64::NAN);
    let a = model.consts.a_inf.unwrap_or(f64::NAN);
    let slack = 1e-10;
    let mut failures = Vec::new();
    let mut prev_vx = f64::INFINITY;
    let mut prev_v = 0.0;
    for x in log_space(1e-3 * sol.x_star, 1e3 * sol.x_star, opts.bound_points) {
        let e = match sol.evaluate(x) {
            Ok(e) => e,
            Err(err) => {
                failures.push(format!("x = {x}: {err}"));
                break;
            }
        };
        let xp = pow_p(x, p);
        let tests = [
            (x * e.vx <= p * e.v * (1.0 + slack), "x V_x <= p V"),
            (a * xp <= e.v * (1.0 + slack), "a_inf x^p <= V"),
            (
                e.v <= pow_p(kappa, p - 1.0) * xp / p * (1.0 + slack),
                "V <= kappa^(p-1) x^p / p",
            ),
            (
                pow_p(eta * x, p - 1.0) <= e.vx * (1.0 + slack),
                "(eta x)^(p-1) <= V_x",
            ),
            (
                e.vx <= pow_p(kappa * x, p - 1.0) * (1.0 + slack),
                "V_x <= (kappa x)^(p-1)",
            ),
            (e.vxx < 0.0 && e.vx < prev_vx, "strict concavity"),
            (e.v > prev_v, "V increasing"),
        ];
        for (ok, name) in tests {
            if !ok {
                failures.push(format!("{name} at x = {x}"));
            }
        }
        prev_vx = e.vx;
        prev_v = e.v;
        if failures.len() > 5 {
            break;
        }
    }
    check(
        "bounds",
        failures.is_empty(),
        failures.len() as f64,
        0.0,
        if failures.is_empty() {
            format!(
                "{} log-spaced points on [1e-3 x*, 1e3 x*]",
                opts.bound_points
            )
        } else {
            failures.join("; ")
        },
    )
}

fn check_pasting(sol: &ValueSolution, name: &str, tol: f64) -> Check {
    let d = 1e-10;
    let xs = sol.x_star;
    match (sol.evaluate(xs * (1.0 - d)), sol.evaluate(xs * (1.0 + d))) {
        (Ok(l), Ok(r)) => {
            let gap = if name == "c1_pasting" {
                (l.vx - r.vx).abs() / r.vx.abs()
            } else {
                (l.vxx - r.vxx).abs() / r.vxx.abs()
            };
            check(
                name,
                gap <= tol,
                gap,
                tol,
                format!("relative jump across x* (one-sided offsets {d:e} x*)"),
            )
        }
        (Err(e), _) | (_, Err(e)) => check(name, false, f64::NAN, tol, e.to_string()),
    }
}

fn check_hjb(sol: &ValueSolution, opts: &VerifyOptions) -> Check {
    let model = sol.model();
    let beta = model.params.beta;
    let mut worst: f64 = 0.0;
    let mut at = f64::NAN;
    let mut error = None;
    for x in log_space(1e-2 * sol.x_star, 50.0 * sol.x_star, opts.hjb_points) {
        if (x - sol.x_star).abs() <= 1e-9 * sol.x_star || sol.at_exception_point(x) {
            continue;
        }
        match sol.evaluate(x) {
            Ok(e) => {
                let rel = hjb_residual(&model, x, &e.triple()).abs() / (beta * e.v);
                if !(rel <= worst) {
                    worst = rel;
                    at = x;
                }
            }
            Err(e) => {
                error = Some(e);
                worst = f64::INFINITY;
                at = x;
                break;
            }
        }
    }
    let detail = match error {
        Some(Error::Extrapolation { x_max, .. }) => {
            format!("solution ends at x = {x_max:.6}, sample x = {at:.6} not covered")
        }
        Some(e) => e.to_string(),
        None => format!("worst at x = {at:.6} over [1e-2 x*, 50 x*]"),
    };
    check(
        "hjb_residual",
        worst <= opts.hjb_tol,
        worst,
        opts.hjb_tol,
        detail,
    )
}

fn check_fd(sol: &ValueSolution, opts: &VerifyOptions) -> Check {
    let model = sol.model();
    let fd = match solve_fd(&model, &FdOptions::for_model(&model, opts.fd_nodes)) {
        Ok(fd) => fd,
        Err(e) => {
            return check(
                "fd_cross_check",
                false,
                f64::NAN,
                opts.fd_tol,
                e.to_string(),
            )
        }
    };
    let mut worst: f64 = 0.0;
    for (&x, &v) in fd.x_grid.iter().zip(&fd.v) {
        if x < 0.05 * sol.x_star || x > 20.0 * sol.x_star {
            continue;
        }
        match sol.value(x) {
            Ok(s) => worst = worst.max((v - s).abs() / s),
            Err(e) => {
                return check(
                    "fd_cross_check",
                    false,
                    f64::INFINITY,
                    opts.fd_tol,
                    e.to_string(),
                )
            }
        }
    }
    let cell = extract_x_star_fd(&model, &fd);
    let contains = matches!(cell, Ok((a, b)) if a <= sol.x_star && sol.x_star <= b);
    check(
        "fd_cross_check",
        worst <= opts.fd_tol && contains,
        worst,
        opts.fd_tol,
        format!(
            "max relative gap on [0.05 x*, 20 x*] with {} nodes; x* cell {:?}",
            opts.fd_nodes,
            cell.map_err(|e| e.to_string())
        ),
    )
}

fn check_sign_scan(sol: &ValueSolution, solve: &SolveOptions, opts: &VerifyOptions) -> Check {
    let model = sol.model();
    let (lo, hi) = sol.bracket;
    let n = opts.scan_points.max(2);
    let mut bad = Vec::new();
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        if (x - sol.x_star).abs() <= 1e-6 * sol.x_star {
            continue;
        }
        match shooting_residual(&model, x, sol.y_min, solve) {
            Ok(r) => {
                if (r < 0.0) != (x < sol.x_star) || r == 0.0 {
                    bad.push(format!("r({x:.6}) = {r:e}"));
                }
            }
            Err(e) => bad.push(format!("x = {x}: {e}")),
        }
    }
    check(
        "residual_sign_scan",
        bad.is_empty(),
        bad.len() as f64,
        0.0,
        if bad.is_empty() {
            format!("{n} bracket points, negative below x* and positive above")
        } else {
            bad.join("; ")
        },
    )
}

fn check_ye_audit(sol: &ValueSolution) -> Check {
    let Some(x_e) = sol.derived.x_e else {
        return check(
            "ye_audit",
            true,
            0.0,
            0.0,
            "r <= k: no exception point".into(),
        );
    };
    let crossings: Vec<_> = sol
        .trajectory
        .events
        .iter()
        .filter(|e| e.kind == EventKind::YeCrossing)
        .collect();
    if x_e < sol.x_star {
        return check(
            "ye_audit",
            crossings.is_empty(),
            crossings.len() as f64,
            0.0,
            format!("x_e = {x_e} lies in U; no crossing expected"),
        );
    }
    if x_e > sol.trajectory.x_max() {
        return check(
            "ye_audit",
            false,
            f64::NAN,
            0.0,
            "x_e beyond the trajectory".into(),
        );
    }
    let one = crossings.len() == 1 && (crossings[0].x - x_e).abs() <= 1e-12 * x_e;
    let cont = match (
        sol.evaluate(x_e * (1.0 - 1e-9)),
        sol.evaluate(x_e * (1.0 + 1e-9)),
    ) {
        (Ok(l), Ok(r)) => (l.vx - r.vx).abs() / r.vx,
        _ => f64::INFINITY,
    };
    let flagged = sol.evaluate(x_e).map(|e| e.one_sided).unwrap_or(false);
    check(
        "ye_audit",
        one && cont <= 1e-7 && flagged,
        cont,
        1e-7,
        format!(
            "{} crossing event(s) at x_e = {x_e}; V_x jump {cont:e}; one-sided flag {flagged}",
            crossings.len()
        ),
    )
}
