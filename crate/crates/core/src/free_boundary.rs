//! Dual-variable integration through the constrained region and the
//! shooting search for the free boundary `x*`.
//!
//! With `v(y) = max_x (V(x) - xy)` the HJB equation becomes, on the
//! constrained branch `d(y) = l - k v_y`,
//!
//! ```text
//! beta (v - y v_y) - (mu^2 / 2 sigma^2) y^2 v_yy + y d + r y v_y - d^p / p = 0
//! ```
//!
//! The state `(v, v_y)` is advanced in `s = ln y` from `y* = (k x* + l)^(p-1)`
//! towards `y -> 0`, with `v_yy` recovered algebraically from the equation.
//! For a wrong candidate `x*` the solution picks up a mode growing faster than
//! `x^p` and either loses convexity (candidate too small) or leaves the
//! constrained branch (candidate too large). The residual against the
//! large-wealth asymptote `V ~ a_inf x^p` inherits that sign, which makes
//! bisection on the bracket `[l/(eta-k), l/(kappa-k)]` well defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, Flow, OdeOutcome, Tolerances};
use crate::params::{DerivedConstants, Model, ModelParams};
use crate::umap::UMap;

/// Magnitude of the residual reported when a shot ends in an event.
pub const SENTINEL: f64 = 1e300;

/// Half-width of the relative neighbourhood of `y_e` where `v_yy` is floored.
const YE_BAND: f64 = 1e-6;
const VYY_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub y: f64,
    pub v: f64,
    pub v_y: f64,
    pub v_yy: f64,
}

impl DualPoint {
    /// Primal wealth `x = -v_y`.
    pub fn x(&self) -> f64 {
        -self.v_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// `-v_y` crossed the exception point `x_e = l/(r-k)`.
    YeCrossing,
    /// `v_yy` was floored inside the `y_e` neighbourhood.
    VyyFloor,
    /// Integration stopped before `y_min` on the returned solution.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub kind: EventKind,
    pub y: f64,
    pub x: f64,
    /// `v_yy` as recovered from the equation at the nearest node.
    pub v_yy: f64,
}

/// Accepted integration nodes, ordered by decreasing `y` (increasing wealth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTrajectory {
    pub points: Vec<DualPoint>,
    pub events: Vec<TrajectoryEvent>,
}

impl DualTrajectory {
    pub fn first(&self) -> &DualPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &DualPoint {
        self.points
            .last()
            .expect("trajectory has at least one point")
    }

    /// Largest wealth covered.
    pub fn x_max(&self) -> f64 {
        self.last().x()
    }

    pub fn has_event(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DualEquation {
    params: ModelParams,
    x_e: Option<f64>,
    half_sharpe_sq: f64,
    inv_pm1: f64,
}

impl DualEquation {
    pub fn new(model: &Model) -> Self {
        DualEquation {
            params: model.params,
            x_e: model.consts.x_e,
            half_sharpe_sq: model.params.half_sharpe_sq(),
            inv_pm1: 1.0 / (model.params.p - 1.0),
        }
    }

    /// Consumption on the constrained branch, `l - k v_y`.
    #[inline]
    pub fn capped_consumption(&self, v_y: f64) -> f64 {
        self.params.ell - self.params.k * v_y
    }

    /// Unconstrained consumption `y^(1/(p-1))`.
    #[inline]
    pub fn free_consumption(&self, y: f64) -> f64 {
        y.powf(self.inv_pm1)
    }

    /// Numerator of the recovered `v_yy`, i.e. `g y^2 v_yy`.
    #[inline]
    fn numerator(&self, y: f64, v: f64, v_y: f64) -> f64 {
        let prm = &self.params;
        let d = self.capped_consumption(v_y);
        if d <= 0.0 {
            return f64::NAN;
        }
        prm.beta * (v - y * v_y) + y * d + prm.r * y * v_y - d.powf(prm.p) / prm.p
    }

    /// `v_yy` solved from the equation, without flooring.
    #[inline]
    pub fn raw_vyy(&self, y: f64, v: f64, v_y: f64) -> f64 {
        self.numerator(y, v, v_y) / (self.half_sharpe_sq * y * y)
    }

    /// Whether `v_y` lies within the tolerated neighbourhood of `y_e`, where
    /// `(k - r) v_y = l`.
    #[inline]
    pub fn near_ye(&self, v_y: f64) -> bool {
        match self.x_e {
            Some(_) => {
                let prm = &self.params;
                ((prm.k - prm.r) * v_y - prm.ell).abs() <= YE_BAND * prm.ell
            }
            None => false,
        }
    }

    /// `v_yy` with the floor applied inside the `y_e` neighbourhood.
    #[inline]
    pub fn vyy(&self, y: f64, v: f64, v_y: f64) -> (f64, bool) {
        let raw = self.raw_vyy(y, v, v_y);
        if self.near_ye(v_y) {
            let floor = VYY_FLOOR * v_y.abs() / y;
            if !(raw > floor) {
                return (floor, true);
            }
        }
        (raw, false)
    }

    /// Right-hand side in `s = ln y` for the state `(v, v_y)`.
    #[inline]
    fn rhs(&self, s: f64, u: &[f64; 2]) -> [f64; 2] {
        let y = s.exp();
        let (vyy, _) = self.vyy(y, u[0], u[1]);
        [y * u[1], y * vyy]
    }

    /// Residual of the full dual equation with `d = min(y^(1/(p-1)), l - k v_y)`.
    pub fn residual(&self, y: f64, v: f64, v_y: f64, v_yy: f64) -> f64 {
        let prm = &self.params;
        let d = self.free_consumption(y).min(self.capped_consumption(v_y));
        prm.beta * (v - y * v_y) - self.half_sharpe_sq * y * y * v_yy + y * d + prm.r * y * v_y
            - d.powf(prm.p) / prm.p
    }
}

/// Why a dual integration stopped before `y_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualStop {
    BranchViolation { y: f64, x: f64 },
    ConvexityLoss { y: f64, x: f64 },
    StepUnderflow { y: f64, x: f64 },
}

impl From<DualStop> for Error {
    fn from(stop: DualStop) -> Error {
        match stop {
            DualStop::BranchViolation { y, x } => Error::BranchViolation { y, x },
            DualStop::ConvexityLoss { y, x } => Error::ConvexityLoss { y, x },
            DualStop::StepUnderflow { y, .. } => Error::StepUnderflow { y },
        }
    }
}

/// A dual integration, complete or stopped early.
#[derive(Debug, Clone)]
pub struct DualRun {
    pub trajectory: DualTrajectory,
    pub stop: Option<DualStop>,
}

fn run_dual(
    model: &Model,
    y_start: f64,
    v0: f64,
    vy0: f64,
    y_min: f64,
    tol: &Tolerances,
) -> DualRun {
    let eq = DualEquation::new(model);
    let (vyy0, floored0) = eq.vyy(y_start, v0, vy0);
    let mut points = vec![DualPoint {
        y: y_start,
        v: v0,
        v_y: vy0,
        v_yy: vyy0,
    }];
    let mut events = Vec::new();
    if floored0 {
        events.push(TrajectoryEvent {
            kind: EventKind::VyyFloor,
            y: y_start,
            x: -vy0,
            v_yy: eq.raw_vyy(y_start, v0, vy0),
        });
    }
    if y_min >= y_start {
        return DualRun {
            trajectory: DualTrajectory { points, events },
            stop: None,
        };
    }

    let mut stop = None;
    let mut in_floor = floored0;
    let outcome = ode::integrate(
        |s, u| eq.rhs(s, u),
        y_start.ln(),
        [v0, vy0],
        y_min.ln(),
        1e-3,
        tol,
        |s, u, _du| {
            let y = s.exp();
            let (v, v_y) = (u[0], u[1]);
            let x = -v_y;
            let raw = eq.raw_vyy(y, v, v_y);
            let (vyy, floored) = eq.vyy(y, v, v_y);
            let cap = eq.capped_consumption(v_y);
            if x <= 0.0 || (!floored && !(raw > 0.0)) {
                stop = Some(DualStop::ConvexityLoss { y, x });
                return Flow::Stop;
            }
            if !(cap > 0.0) || eq.free_consumption(y) < cap * (1.0 - 1e-12) {
                stop = Some(DualStop::BranchViolation { y, x });
                return Flow::Stop;
            }
            let prev = *points.last().expect("non-empty");
            if let Some(x_e) = model.consts.x_e {
                if prev.x() < x_e && x >= x_e {
                    let w = (x_e - prev.x()) / (x - prev.x());
                    let ye = (prev.y.ln() + w * (y.ln() - prev.y.ln())).exp();
                    events.push(TrajectoryEvent {
                        kind: EventKind::YeCrossing,
                        y: ye,
                        x: x_e,
                        v_yy: prev.v_yy + w * (raw - prev.v_yy),
                    });
                }
            }
            if floored && !in_floor {
                events.push(TrajectoryEvent {
                    kind: EventKind::VyyFloor,
                    y,
                    x,
                    v_yy: raw,
                });
            }
            in_floor = floored;
            points.push(DualPoint {
                y,
                v,
                v_y,
                v_yy: vyy,
            });
            Flow::Continue
        },
    );
    if let OdeOutcome::StepUnderflow { t } | OdeOutcome::MaxSteps { t } = outcome {
        let last = points.last().expect("non-empty");
        stop = Some(DualStop::StepUnderflow {
            y: t.exp(),
            x: last.x(),
        });
    }
    DualRun {
        trajectory: DualTrajectory { points, events },
        stop,
    }
}

/// Integrates the constrained-branch dual equation from `y_start` down to
/// `y_min`.
pub fn integrate_dual(
    model: &Model,
    y_start: f64,
    v0: f64,
    vy0: f64,
    y_min: f64,
    tol: &Tolerances,
) -> Result<DualTrajectory> {
    if !(y_min > 0.0 && y_start > y_min) {
        return Err(Error::Domain {
            what: "y_min",
            value: y_min,
            domain: format!("(0, {y_start})"),
        });
    }
    if !(vy0 < 0.0) || !v0.is_finite() {
        return Err(Error::Domain {
            what: "v_y(y_start)",
            value: vy0,
            domain: "(-inf, 0)".into(),
        });
    }
    let run = run_dual(model, y_start, v0, vy0, y_min, tol);
    match run.stop {
        Some(stop) => Err(stop.into()),
        None => Ok(run.trajectory),
    }
}

/// `x_asym(y) = (y / (p a_inf))^(1/(p-1))`, the dual image of `a_inf x^p`.
pub fn asymptotic_wealth(model: &Model, y: f64) -> f64 {
    let p = model.params.p;
    let a = model.consts.a_inf.expect("kappa > 0");
    (y / (p * a)).powf(1.0 / (p - 1.0))
}

/// Dual variable at which the asymptotic wealth equals `x`.
pub fn asymptotic_dual(model: &Model, x: f64) -> f64 {
    let p = model.params.p;
    p * model.consts.a_inf.expect("kappa > 0") * x.powf(p - 1.0)
}

/// Solver settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Final bisection width relative to the bracket width.
    pub tol: f64,
    pub rtol: f64,
    /// Largest step in `ln y`.
    pub h_max: f64,
    /// Overrides the default end of integration.
    pub y_min: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            rtol: 1e-8,
            h_max: 0.02,
            y_min: None,
        }
    }
}

impl SolveOptions {
    pub fn ode_tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: 1e-300,
            h_max: self.h_max,
            h_min: 1e-10,
            max_steps: 2_000_000,
        }
    }
}

/// Default integration end: `min(y_ref * 1e-4, y with x_asym = 50 x_ref)`,
/// where `x_ref` is the upper bracket end and `y_ref = (k x_ref + l)^(p-1)`.
///
/// Fixed per model so that every candidate is compared at the same `y`.
pub fn default_y_min(model: &Model) -> Result<f64> {
    model.require_main("default_y_min")?;
    let (_, hi) = model.bracket().expect("main regime");
    let y_ref = model.cap(hi).powf(model.params.p - 1.0);
    Ok((y_ref * 1e-4).min(asymptotic_dual(model, 50.0 * hi)))
}

/// Initial dual data at `y* = (k x_hat + l)^(p-1)` from the unconstrained map.
pub fn initial_dual_state(model: &Model, umap: &UMap) -> Result<(f64, f64, f64)> {
    let t = umap.value_at(umap.c_star, model)?;
    let y_star = t.vx;
    Ok((y_star, t.v - umap.x_star * y_star, -umap.x_star))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShotOutcome {
    Reached,
    Stopped(DualStop),
}

/// One shooting evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub x_hat: f64,
    /// Signed mismatch, see [`shooting_residual`].
    pub residual: f64,
    pub outcome: ShotOutcome,
    pub y_end: f64,
    pub x_end: f64,
}

/// Integrates from a candidate boundary and compares with the asymptote.
pub fn shoot(
    model: &Model,
    x_hat: f64,
    y_min: f64,
    opts: &SolveOptions,
) -> Result<(Shot, DualRun)> {
    model.require_main("shooting_residual")?;
    let umap = UMap::build(model, x_hat)?;
    let (y_star, v0, vy0) = initial_dual_state(model, &umap)?;
    let run = run_dual(model, y_star, v0, vy0, y_min, &opts.ode_tolerances());
    Ok((Shot::of_run(model, x_hat, &run), run))
}

/// Signed mismatch of a run against the asymptote, scaled by `scale`.
fn mismatch(model: &Model, scale: f64, run: &DualRun) -> f64 {
    let end = run.trajectory.last();
    let x_asym = asymptotic_wealth(model, end.y);
    match run.stop {
        None => scale * (end.x() / x_asym - 1.0),
        Some(DualStop::ConvexityLoss { .. }) => -SENTINEL,
        Some(DualStop::BranchViolation { .. }) => SENTINEL,
        Some(DualStop::StepUnderflow { .. }) => {
            if end.x() >= x_asym {
                SENTINEL
            } else {
                -SENTINEL
            }
        }
    }
}

impl Shot {
    fn of_run(model: &Model, x_hat: f64, run: &DualRun) -> Self {
        let end = run.trajectory.last();
        Shot {
            x_hat,
            residual: mismatch(model, x_hat, run),
            outcome: match run.stop {
                None => ShotOutcome::Reached,
                Some(stop) => ShotOutcome::Stopped(stop),
            },
            y_end: end.y,
            x_end: end.x(),
        }
    }
}

/// Exponent `g` of the growing mode: a perturbation of the constrained
/// branch near the asymptote grows like `x^g` relative to `x_asym`.
///
/// From the linearisation `theta_s m (m-1) + b1 m - beta = 0` about
/// `a_inf x^p`, with `theta_s = mu^2/(2 sigma^2)` and
/// `b1 = p theta + (k - r)(1-p)`; `g = (1-p)(1-m_-) - 1`.
pub fn growth_exponent(model: &Model) -> f64 {
    let prm = &model.params;
    let ts = prm.half_sharpe_sq();
    let b = prm.p * model.consts.theta + (prm.k - prm.r) * (1.0 - prm.p) - ts;
    let m = (-b - (b * b + 4.0 * ts * prm.beta).sqrt()) / (2.0 * ts);
    (1.0 - prm.p) * (1.0 - m) - 1.0
}

/// A restart of the dual integration from an interior node with `v_y`
/// scaled by `1 + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Restart {
    pub y: f64,
    pub x: f64,
    pub shift: f64,
}

const MAX_RESTARTS: usize = 200;
/// Largest relative shift of `v_y` allowed at a restart node.
pub const RESTART_CONTAMINATION: f64 = 1e-8;
/// Relative asymptote mismatch accepted at `y_min`.
pub const ACCEPT_MISMATCH: f64 = 1e-6;

fn relative_mismatch(model: &Model, run: &DualRun) -> f64 {
    let end = run.trajectory.last();
    end.x() / asymptotic_wealth(model, end.y) - 1.0
}

fn acceptable(model: &Model, run: &DualRun) -> bool {
    run.stop.is_none() && relative_mismatch(model, run).abs() <= ACCEPT_MISMATCH
}

/// Where a run leaves the asymptote and its relative deviation there. A stop
/// counts as an order-one deviation at the last point; a gross miss at the
/// end is placed at the point of closest approach.
fn divergence(model: &Model, run: &DualRun) -> (f64, f64) {
    if run.stop.is_some() {
        return (run.trajectory.x_max(), 1.0);
    }
    let d = relative_mismatch(model, run).abs();
    if d < 0.5 {
        return (run.trajectory.last().x(), d);
    }
    let x = run
        .trajectory
        .points
        .iter()
        .map(|p| ((p.x() / asymptotic_wealth(model, p.y) - 1.0).abs(), p.x()))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|t| t.1)
        .expect("non-empty");
    (x, 1.0)
}

/// Ordering key: acceptable runs first, by mismatch; the rest by the wealth
/// at which the growing mode would reach order one.
fn quality(model: &Model, run: &DualRun) -> (bool, f64) {
    if acceptable(model, run) {
        return (true, -relative_mismatch(model, run).abs());
    }
    let (x, d) = divergence(model, run);
    (false, x * d.powf(-1.0 / growth_exponent(model).max(0.05)))
}

fn better(a: (bool, f64), b: (bool, f64)) -> bool {
    (a.0 && !b.0) || (a.0 == b.0 && a.1 > b.1)
}

/// Extends a run that stopped early or missed the asymptote. Rounding in
/// `x*` and in the integrator excites the growing mode, which the bisection
/// cannot resolve beyond double precision. Each stage picks the latest node
/// at which a relative shift of `v_y` of at most [`RESTART_CONTAMINATION`]
/// still brackets the asymptote, bisects the shift there and continues from
/// the corrected state.
fn continue_run(
    model: &Model,
    mut run: DualRun,
    y_min: f64,
    opts: &SolveOptions,
) -> (DualRun, Vec<Restart>) {
    let tol = opts.ode_tolerances();
    let mut restarts = Vec::new();
    let mut floor = 1;
    for _ in 0..MAX_RESTARTS {
        if acceptable(model, &run) {
            break;
        }
        let pts = &run.trajectory.points;
        if pts.len() < floor + 2 {
            break;
        }
        let attempt = |j: usize, shift: f64| {
            let start = pts[j];
            let r = run_dual(
                model,
                start.y,
                start.v,
                start.v_y * (1.0 + shift),
                y_min,
                &tol,
            );
            (mismatch(model, start.x(), &r), r)
        };
        let brackets = |j: usize, w: f64| {
            let (a, b) = (attempt(j, -w).0, attempt(j, w).0);
            a.signum() != b.signum()
        };
        // Latest node whose contamination is still within the allowed shift.
        let w = RESTART_CONTAMINATION;
        let (mut good, mut bad) = (floor, pts.len() - 1);
        if !brackets(good, w) {
            break;
        }
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if brackets(mid, w) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        let j = good;
        let (mut lo, mut hi) = (-w, w);
        let r_lo = attempt(j, lo).0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let r = attempt(j, mid).0;
            if r == 0.0 {
                (lo, hi) = (mid, mid);
                break;
            }
            if r.signum() == r_lo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (shift, next) = [0.5 * (lo + hi), lo, hi]
            .into_iter()
            .map(|d| (d, attempt(j, d).1))
            .reduce(|a, b| {
                if better(quality(model, &b.1), quality(model, &a.1)) {
                    b
                } else {
                    a
                }
            })
            .expect("three candidates");
        if !better(quality(model, &next), quality(model, &run)) {
            break;
        }
        let start = pts[j];
        restarts.push(Restart {
            y: start.y,
            x: start.x(),
            shift,
        });
        let traj = &mut run.trajectory;
        traj.points.truncate(j);
        traj.events.retain(|e| e.x < start.x());
        traj.points.extend(next.trajectory.points);
        traj.events.extend(next.trajectory.events);
        run.stop = next.stop;
        floor = j + 1;
    }
    (run, restarts)
}

/// Signed asymptote mismatch `x_hat (x(y_min) / x_asym(y_min) - 1)`.
///
/// Negative means the candidate lies below `x*`. Shots that stop on a
/// convexity loss return `-SENTINEL`, those that leave the constrained branch
/// return `+SENTINEL`.
pub fn shooting_residual(
    model: &Model,
    x_hat: f64,
    y_min: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    Ok(shoot(model, x_hat, y_min, opts)?.0.residual)
}

/// The solved free-boundary problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub params: ModelParams,
    pub derived: DerivedConstants,
    pub x_star: f64,
    pub y_star: f64,
    pub bracket: (f64, f64),
    pub umap: UMap,
    /// Residual at the returned `x*`.
    pub residual: f64,
    pub y_min: f64,
    pub bisection_steps: usize,
    /// Stages used to carry the trajectory past early divergence.
    pub restarts: Vec<Restart>,
    pub trajectory: DualTrajectory,
}

impl ValueSolution {
    pub fn model(&self) -> Model {
        Model {
            params: self.params,
            consts: self.derived,
        }
    }

    /// Builds the solution for a given boundary without searching for it.
    ///
    /// Integration stops at the first event; the trajectory then records a
    /// `Truncated` event.
    pub fn from_candidate(model: &Model, x_hat: f64, opts: &SolveOptions) -> Result<Self> {
        let y_min = match opts.y_min {
            Some(y) => y,
            None => default_y_min(model)?,
        };
        let (shot, run) = shoot(model, x_hat, y_min, opts)?;
        Ok(Self::assemble(model, shot, run, y_min, 0))
    }

    fn assemble(model: &Model, shot: Shot, run: DualRun, y_min: f64, steps: usize) -> Self {
        let umap = UMap::build_unchecked(model, shot.x_hat);
        let mut trajectory = run.trajectory;
        if let Some(stop) = run.stop {
            let (y, x) = match stop {
                DualStop::BranchViolation { y, x }
                | DualStop::ConvexityLoss { y, x }
                | DualStop::StepUnderflow { y, x } => (y, x),
            };
            trajectory.events.push(TrajectoryEvent {
                kind: EventKind::Truncated,
                y,
                x,
                v_yy: trajectory.last().v_yy,
            });
        }
        ValueSolution {
            params: model.params,
            derived: model.consts,
            x_star: shot.x_hat,
            y_star: trajectory.first().y,
            bracket: model.bracket().expect("main regime"),
            umap,
            residual: shot.residual,
            y_min,
            bisection_steps: steps,
            restarts: Vec::new(),
            trajectory,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

/// Locates `x*` by bisection on the shooting residual.
pub fn solve_x_star(model: &Model, opts: &SolveOptions) -> Result<ValueSolution> {
    model.require_main("solve_x_star")?;
    let (lo, hi) = model.bracket().expect("main regime");
    let y_min = match opts.y_min {
        Some(y) => y,
        None => default_y_min(model)?,
    };
    let r_lo = shooting_residual(model, lo, y_min, opts)?;
    let r_hi = shooting_residual(model, hi, y_min, opts)?;
    if !(r_lo < 0.0 && r_hi > 0.0) {
        return Err(Error::NoSignChange { r_lo, r_hi });
    }
    let (mut a, mut b) = (lo, hi);
    let mut steps = 0;
    let mut bisect = |a: &mut f64, b: &mut f64, width: f64| -> Result<()> {
        while *b - *a > width {
            let m = 0.5 * (*a + *b);
            if m <= *a || m >= *b {
                break;
            }
            let r = shooting_residual(model, m, y_min, opts)?;
            steps += 1;
            if r == 0.0 {
                (*a, *b) = (m, m);
                break;
            }
            if r < 0.0 {
                *a = m;
            } else {
                *b = m;
            }
        }
        Ok(())
    };
    // Keep whichever end of the final bracket integrates furthest; rounding
    // can excite the growing mode far out.
    let closest = |a: f64, b: f64| -> Result<(Shot, DualRun)> {
        let mut best: Option<(Shot, DualRun)> = None;
        for x in [0.5 * (a + b), a, b] {
            let (shot, run) = shoot(model, x, y_min, opts)?;
            let done = acceptable(model, &run);
            let replace = match &best {
                None => true,
                Some((_, r)) => better(quality(model, &run), quality(model, r)),
            };
            if replace {
                best = Some((shot, run));
            }
            if done {
                break;
            }
        }
        Ok(best.expect("at least one shot"))
    };
    bisect(&mut a, &mut b, opts.tol * (hi - lo))?;
    let mut best = closest(a, b)?;
    if !acceptable(model, &best.1) {
        // Any leftover width seeds the growing mode; go to full precision.
        bisect(&mut a, &mut b, 0.0)?;
        let finer = closest(a, b)?;
        if better(quality(model, &finer.1), quality(model, &best.1)) {
            best = finer;
        }
    }
    let (shot, run) = best;
    if acceptable(model, &run) {
        return Ok(ValueSolution::assemble(model, shot, run, y_min, steps));
    }
    let (run, restarts) = continue_run(model, run, y_min, opts);
    let shot = Shot::of_run(model, shot.x_hat, &run);
    let mut sol = ValueSolution::assemble(model, shot, run, y_min, steps);
    sol.restarts = restarts;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn precondition_errors() {
        let m = p0();
        let tol = Tolerances::default();
        assert!(integrate_dual(&m, 1.0, 1.0, 0.5, 0.1, &tol).is_err());
        assert!(integrate_dual(&m, 1.0, 1.0, -0.5, 2.0, &tol).is_err());
        assert!(integrate_dual(&m, 1.0, 1.0, -0.5, 0.0, &tol).is_err());
    }

    #[test]
    fn residual_signs_at_bracket_ends() {
        let m = p0();
        let (lo, hi) = m.bracket().unwrap();
        let opts = SolveOptions::default();
        let y_min = default_y_min(&m).unwrap();
        assert!(shooting_residual(&m, lo, y_min, &opts).unwrap() < 0.0);
        assert!(shooting_residual(&m, hi, y_min, &opts).unwrap() > 0.0);
    }

    #[test]
    fn zero_length_shot_is_finite() {
        let m = p0();
        let umap = UMap::build(&m, 10.0).unwrap();
        let (y_star, _, _) = initial_dual_state(&m, &umap).unwrap();
        let opts = SolveOptions::default();
        let r = shooting_residual(&m, 10.0, y_star, &opts).unwrap();
        assert!(r.is_finite() && r.abs() < SENTINEL);
    }

    #[test]
    fn unsupported_regime_is_refused() {
        let m = Model::new(ModelParams {
            r: 0.06,
            ..p0().params
        })
        .unwrap();
        assert!(matches!(
            solve_x_star(&m, &SolveOptions::default()),
            Err(Error::Unsupported { .. })
        ));
    }
}
