use std::fmt::Write as _;
use std::path::Path;

use capcon::closed_form::{homogeneous_coefficient, pow_p};
use capcon::mc::{
    compare_policies, quantiles, simulate_paths, HomogeneousPolicy, MertonPolicy, OptimalPolicy,
    Scaled, SimConfig, ZeroConsumption,
};
use capcon::{
    extract_x_star_fd, merton_value, solve_fd, solve_x_star, FdOptions, FeedbackPolicy, Model,
    ModelParams, Regime, Region, SolveOptions, TableRow, ValueSolution, VerifyOptions,
};
use serde_json::{json, Value};

use crate::manifest::{emit, unix_now, RunManifest};
use crate::{CliError, FdArgs, Format, SimulateArgs, SolveArgs, TableArgs, VerifyArgs};

const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

fn load(config: &Path) -> Result<Model, CliError> {
    let params = ModelParams::from_path(config)?;
    Ok(Model::new(params)?)
}

fn reject_unsolvable(model: &Model) -> Result<(), CliError> {
    match model.regime() {
        Regime::IllPosed | Regime::Unsupported => Err(model
            .require_main("capsolve")
            .expect_err("regime has no solution")
            .into()),
        _ => Ok(()),
    }
}

fn manifest(command: &'static str, model: &Model, options: Value, seeds: Vec<u64>) -> RunManifest {
    RunManifest::new(command, options, model.params, model.consts, seeds)
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

/// The value function: solved numerically or in closed form.
enum Valued {
    Solved(Box<ValueSolution>),
    Closed(Model),
}

impl Valued {
    fn build(model: &Model, opts: &SolveOptions) -> Result<Self, CliError> {
        reject_unsolvable(model)?;
        Ok(match model.regime() {
            Regime::Main => Valued::Solved(Box::new(solve_x_star(model, opts)?)),
            _ => Valued::Closed(*model),
        })
    }

    fn value(&self, x: f64) -> Result<f64, CliError> {
        match self {
            Valued::Solved(s) => Ok(s.value(x)?),
            Valued::Closed(m) => Ok(homogeneous_coefficient(m)? * pow_p(x, m.params.p)),
        }
    }

    fn row(&self, x: f64) -> Result<TableRow, CliError> {
        match self {
            Valued::Solved(s) => {
                let e = s.evaluate(x)?;
                let pol = s.policy(x);
                Ok(TableRow {
                    x,
                    v: e.v,
                    vx: e.vx,
                    vxx: e.vxx,
                    c_star: pol.c,
                    pi_star: pol.pi,
                    region: e.region,
                })
            }
            Valued::Closed(m) => {
                if !(x > 0.0) {
                    return Err(CliError::invalid(format!(
                        "wealth must be positive, got {x}"
                    )));
                }
                let p = m.params.p;
                let a = homogeneous_coefficient(m)?;
                let rate = m.consts.kappa.min(m.params.k);
                Ok(TableRow {
                    x,
                    v: a * pow_p(x, p),
                    vx: a * p * pow_p(x, p - 1.0),
                    vxx: a * p * (p - 1.0) * pow_p(x, p - 2.0),
                    c_star: rate * x,
                    pi_star: m.consts.merton_fraction * x,
                    region: if m.regime() == Regime::Homogeneous {
                        Region::C
                    } else {
                        Region::U
                    },
                })
            }
        }
    }
}

pub fn solve(a: SolveArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = load(&a.common.config)?;
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(CliError::invalid(format!(
            "--tol must lie in (0, 1), got {}",
            a.tol
        )));
    }
    let opts = SolveOptions {
        tol: a.tol,
        ..Default::default()
    };
    let man = manifest("solve", &model, json!({ "tol": a.tol }), vec![]);
    let c = &model.consts;
    let body = match Valued::build(&model, &opts)? {
        Valued::Solved(s) => json!({
            "manifest": man,
            "regime": c.regime,
            "x_star": s.x_star,
            "B": s.umap.b,
            "lambda": c.lambda_plus,
            "kappa": c.kappa,
            "theta": c.theta,
            "eta": c.eta,
            "x_e": c.x_e,
            "bracket": [s.bracket.0, s.bracket.1],
            "solution": s,
        }),
        Valued::Closed(m) => json!({
            "manifest": man,
            "regime": c.regime,
            "x_star": Value::Null,
            "value_coefficient": homogeneous_coefficient(&m)?,
            "consumption_rate": c.kappa.min(m.params.k),
            "merton_fraction": c.merton_fraction,
            "kappa": c.kappa,
            "theta": c.theta,
            "eta": c.eta,
            "x_e": c.x_e,
        }),
    };
    emit(a.common.out.as_deref(), &pretty(&body), &man, started)
}

pub fn table(a: TableArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = load(&a.common.config)?;
    if !(a.xmin > 0.0 && a.xmax >= a.xmin && a.points >= 1) || (a.points > 1 && a.xmax == a.xmin) {
        return Err(CliError::invalid(format!(
            "need 0 < xmin <= xmax (strict when points > 1) and points >= 1; got xmin = {}, xmax = {}, points = {}",
            a.xmin, a.xmax, a.points
        )));
    }
    let valued = Valued::build(&model, &SolveOptions::default())?;
    let rows = (0..a.points)
        .map(|i| {
            let x = if a.points == 1 {
                a.xmin
            } else {
                a.xmin + (a.xmax - a.xmin) * i as f64 / (a.points - 1) as f64
            };
            valued.row(x)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let man = manifest(
        "table",
        &model,
        json!({ "xmin": a.xmin, "xmax": a.xmax, "points": a.points, "format": format!("{:?}", a.format).to_lowercase() }),
        vec![],
    );
    let body = match a.format {
        Format::Csv => {
            let mut s = String::new();
            writeln!(s, "{}", TableRow::CSV_HEADER).expect("string write");
            for r in &rows {
                writeln!(s, "{}", r.to_csv()).expect("string write");
            }
            s
        }
        Format::Json => pretty(&json!({ "manifest": man, "rows": rows })),
    };
    emit(a.common.out.as_deref(), &body, &man, started)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = load(&a.common.config)?;
    let valued = Valued::build(&model, &SolveOptions::default())?;
    let horizon = a
        .horizon
        .unwrap_or_else(|| (1e8f64).ln() / model.params.beta);
    let cfg = SimConfig {
        x0: a.x0,
        dt: a.dt,
        horizon,
        n_paths: a.paths,
        seed: a.seed,
    };

    let (optimal, linear): (Box<dyn FeedbackPolicy>, Box<dyn FeedbackPolicy>) = match &valued {
        Valued::Solved(s) => {
            let pol = OptimalPolicy::new(s)?;
            (
                Box::new(pol.clone()),
                Box::new(pol.with_linear_allocation()),
            )
        }
        Valued::Closed(m) => (
            Box::new(HomogeneousPolicy::new(m)),
            Box::new(HomogeneousPolicy::new(m)),
        ),
    };
    let merton = MertonPolicy::new(&model);
    let homogeneous = HomogeneousPolicy::new(&model);
    let zero = ZeroConsumption {
        merton_fraction: model.consts.merton_fraction,
    };
    let scaled = a
        .policy
        .strip_prefix("scaled:")
        .and_then(|f| f.parse::<f64>().ok())
        .filter(|f| *f >= 0.0 && f.is_finite())
        .map(|f| Scaled::new(optimal.as_ref(), &model, f, 1.0));
    let chosen: &dyn FeedbackPolicy = match (a.policy.as_str(), &scaled) {
        ("optimal", _) => optimal.as_ref(),
        ("optimal-linear", _) => linear.as_ref(),
        ("merton", _) => &merton,
        ("homogeneous", _) => &homogeneous,
        ("zero", _) => &zero,
        (_, Some(s)) => s,
        (other, None) => {
            return Err(CliError::invalid(format!(
                "unknown policy {other:?}; expected optimal, optimal-linear, merton, homogeneous, zero or scaled:<factor>"
            )))
        }
    };
    let low = Scaled::new(optimal.as_ref(), &model, 0.8, 1.0);
    let high = Scaled::new(optimal.as_ref(), &model, 1.2, 1.0);
    let half_pi = Scaled::new(optimal.as_ref(), &model, 1.0, 0.5);
    let mut policies: Vec<&dyn FeedbackPolicy> = vec![chosen];
    if a.compare {
        policies.extend([&low as &dyn FeedbackPolicy, &high, &half_pi]);
    }
    let cmp = compare_policies(&model, &cfg, &policies)?;

    let man = manifest(
        "simulate",
        &model,
        json!({
            "x0": a.x0, "paths": a.paths, "dt": a.dt, "horizon": horizon,
            "policy": a.policy, "compare": a.compare,
        }),
        vec![a.seed],
    );
    let value = if a.x0 == 0.0 {
        Ok(0.0)
    } else {
        valued.value(a.x0)
    };
    let mut body = json!({
        "manifest": man,
        "config": cfg,
        "policy": a.policy,
        "estimate": cmp.estimates[0],
        "value_x0": value.ok(),
        "merton_upper_bound": merton_value(a.x0, &model)?,
    });
    if a.compare {
        body["comparison"] = serde_json::to_value(&cmp).expect("comparison serializes");
    }
    if let Some(path) = &a.quantiles {
        let paths = simulate_paths(&model, &cfg, chosen)?;
        let utilities: Vec<f64> = paths.iter().map(|p| p.utility).collect();
        let mut csv = String::from("quantile,utility\n");
        for (q, v) in QUANTILE_LEVELS
            .iter()
            .zip(quantiles(&utilities, &QUANTILE_LEVELS))
        {
            writeln!(csv, "{q},{v}").expect("string write");
        }
        emit(Some(path), &csv, &man, started)?;
    }
    emit(a.common.out.as_deref(), &pretty(&body), &man, started)
}

pub fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = load(&a.common.config)?;
    reject_unsolvable(&model)?;
    let opts = VerifyOptions {
        fd_nodes: a.fd_nodes,
        ..Default::default()
    };
    let report = capcon::verify(&model, &SolveOptions::default(), &opts)?;
    let man = manifest("verify", &model, json!({ "fd_nodes": a.fd_nodes }), vec![]);
    let body = json!({ "manifest": man, "report": report });
    emit(a.common.out.as_deref(), &pretty(&body), &man, started)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError {
            code: CliError::VERIFY,
            message: format!("failed checks: {}", report.failed().join(", ")),
        })
    }
}

pub fn fd(a: FdArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = load(&a.common.config)?;
    reject_unsolvable(&model)?;
    let mut opts = FdOptions::for_model(&model, a.nodes);
    if let Some(x_max) = a.x_max {
        opts.x_max = x_max;
    }
    let sol = solve_fd(&model, &opts)?;
    let cell = extract_x_star_fd(&model, &sol);
    let man = manifest(
        "fd",
        &model,
        json!({ "nodes": a.nodes, "x_max": opts.x_max, "x_min": opts.x_min }),
        vec![],
    );
    let body = json!({
        "manifest": man,
        "iterations": sol.iterations,
        "final_update": sol.final_update,
        "update_history": sol.update_history,
        "x_star_cell": cell.as_ref().ok().map(|(l, r)| [*l, *r]),
        "x_star_cell_error": cell.as_ref().err().map(|e| e.to_string()),
    });
    if let Some(path) = &a.csv {
        let x = &sol.x_grid;
        let vx = sol.derivative();
        let mut csv = String::new();
        writeln!(csv, "{}", TableRow::CSV_HEADER).expect("string write");
        for i in 1..x.len() - 1 {
            let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let vxx =
                2.0 * ((sol.v[i + 1] - sol.v[i]) / hp - (sol.v[i] - sol.v[i - 1]) / hm) / (hm + hp);
            let region = if sol.c[i] < model.cap(x[i]) {
                Region::U
            } else {
                Region::C
            };
            let row = TableRow {
                x: x[i],
                v: sol.v[i],
                vx: vx[i],
                vxx,
                c_star: sol.c[i],
                pi_star: sol.pi[i],
                region,
            };
            writeln!(csv, "{}", row.to_csv()).expect("string write");
        }
        emit(Some(path), &csv, &man, started)?;
    }
    emit(a.common.out.as_deref(), &pretty(&body), &man, started)
}
