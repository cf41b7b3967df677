//! Monte Carlo estimation of expected discounted utility under feedback
//! policies.
//!
//! Each path draws its Brownian increments from its own ChaCha8 stream
//! (`seed`, stream = path index), so a path is the same whatever thread runs
//! it. Paths are grouped in fixed blocks whose statistics are merged in block
//! order; results are bit-identical for any thread count. Several policies
//! are simulated in lockstep on the same increments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{pow_p, PolicyPoint};
use crate::error::{Error, Result};
use crate::free_boundary::ValueSolution;
use crate::params::Model;
use crate::umap::UMap;

/// Paths per reduction block.
pub const BLOCK: usize = 256;

/// A Markov control `x -> (c, pi)`.
pub trait FeedbackPolicy: Sync {
    fn controls(&self, x: f64) -> PolicyPoint;
    fn label(&self) -> String;
}

/// Merton consumption and allocation, ignoring the cap.
#[derive(Debug, Clone, Copy)]
pub struct MertonPolicy {
    pub kappa: f64,
    pub merton_fraction: f64,
}

impl MertonPolicy {
    pub fn new(model: &Model) -> Self {
        MertonPolicy {
            kappa: model.consts.kappa,
            merton_fraction: model.consts.merton_fraction,
        }
    }
}

impl FeedbackPolicy for MertonPolicy {
    fn controls(&self, x: f64) -> PolicyPoint {
        PolicyPoint {
            c: self.kappa * x,
            pi: self.merton_fraction * x,
        }
    }
    fn label(&self) -> String {
        "merton".into()
    }
}

/// Proportional policy `(min(kappa, k) x, merton_fraction x)`.
#[derive(Debug, Clone, Copy)]
pub struct HomogeneousPolicy {
    pub rate: f64,
    pub merton_fraction: f64,
}

impl HomogeneousPolicy {
    pub fn new(model: &Model) -> Self {
        HomogeneousPolicy {
            rate: model.consts.kappa.min(model.params.k),
            merton_fraction: model.consts.merton_fraction,
        }
    }
}

impl FeedbackPolicy for HomogeneousPolicy {
    fn controls(&self, x: f64) -> PolicyPoint {
        PolicyPoint {
            c: self.rate * x,
            pi: self.merton_fraction * x,
        }
    }
    fn label(&self) -> String {
        "homogeneous".into()
    }
}

/// Never consumes; invests the Merton fraction.
#[derive(Debug, Clone, Copy)]
pub struct ZeroConsumption {
    pub merton_fraction: f64,
}

impl FeedbackPolicy for ZeroConsumption {
    fn controls(&self, x: f64) -> PolicyPoint {
        PolicyPoint {
            c: 0.0,
            pi: self.merton_fraction * x,
        }
    }
    fn label(&self) -> String {
        "zero".into()
    }
}

/// The solved optimal policy with `c(x)/x` tabulated on a log grid below `x*`.
///
/// Below the table `c = kappa x (1 + B kappa^lambda x^(lambda-1))`, the
/// two-term expansion of the inverse of `X(c)`. The allocation ratio
/// `pi / (merton_fraction x)` is tabulated from the same lower end to the end
/// of the trajectory and taken as 1 outside.
#[derive(Debug, Clone)]
pub struct OptimalPolicy {
    umap: UMap,
    model: Model,
    x_star: f64,
    u0: f64,
    inv_du: f64,
    du: f64,
    /// `(q, dq/du)` with `q = c/x` and `u = ln x`.
    table: Vec<(f64, f64)>,
    inv_du_pi: f64,
    ratio: Vec<f64>,
    linear_pi: bool,
}

impl OptimalPolicy {
    const NODES: usize = 8192;
    const DECADES: f64 = 16.0;
    const RATIO_PER_DECADE: f64 = 256.0;

    pub fn new(solution: &ValueSolution) -> Result<Self> {
        let model = solution.model();
        let umap = solution.umap;
        let x_star = solution.x_star;
        let u1 = x_star.ln();
        let u0 = u1 - Self::DECADES * std::f64::consts::LN_10;
        let du = (u1 - u0) / (Self::NODES - 1) as f64;
        let table = (0..Self::NODES)
            .map(|i| {
                let x = if i == Self::NODES - 1 {
                    x_star
                } else {
                    (u0 + du * i as f64).exp()
                };
                let c = umap.c_of_x(x, &model)?;
                let dcdx = 1.0 / umap.dx_dc(c)?;
                let q = c / x;
                Ok((q, dcdx - q))
            })
            .collect::<Result<Vec<_>>>()?;
        let mf = model.consts.merton_fraction;
        let du_pi = std::f64::consts::LN_10 / Self::RATIO_PER_DECADE;
        let n_pi = ((solution.trajectory.x_max().ln() - u0) / du_pi).floor() as usize + 1;
        let ratio = (0..n_pi)
            .map(|i| {
                let x = (u0 + du_pi * i as f64).exp();
                solution.allocation(x) / (mf * x)
            })
            .collect();
        Ok(OptimalPolicy {
            umap,
            model,
            x_star,
            u0,
            inv_du: 1.0 / du,
            du,
            table,
            inv_du_pi: 1.0 / du_pi,
            ratio,
            linear_pi: false,
        })
    }

    /// Same consumption, allocation `merton_fraction x` everywhere.
    pub fn with_linear_allocation(mut self) -> Self {
        self.linear_pi = true;
        self
    }

    /// Risky allocation, linear in `ln x` between table nodes.
    #[inline]
    pub fn allocation(&self, x: f64) -> f64 {
        let linear = self.model.consts.merton_fraction * x;
        if self.linear_pi || x <= 0.0 {
            return linear;
        }
        let pos = (x.ln() - self.u0) * self.inv_du_pi;
        if !(pos >= 0.0) || pos >= (self.ratio.len() - 1) as f64 {
            return linear;
        }
        let i = pos as usize;
        let t = pos - i as f64;
        linear * (self.ratio[i] + t * (self.ratio[i + 1] - self.ratio[i]))
    }

    /// Consumption from the table, or the expansion below its range.
    #[inline]
    pub fn consumption(&self, x: f64) -> f64 {
        if x >= self.x_star {
            return self.model.cap(x);
        }
        if x <= 0.0 {
            return 0.0;
        }
        let pos = (x.ln() - self.u0) * self.inv_du;
        if pos < 0.0 {
            let u = &self.umap;
            let kx = u.kappa * x;
            return kx * (1.0 + u.b * kx.powf(u.lambda) / x);
        }
        let i = (pos as usize).min(self.table.len() - 2);
        let t = pos - i as f64;
        let (q0, m0) = self.table[i];
        let (q1, m1) = self.table[i + 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let q = (2.0 * t3 - 3.0 * t2 + 1.0) * q0
            + (t3 - 2.0 * t2 + t) * self.du * m0
            + (3.0 * t2 - 2.0 * t3) * q1
            + (t3 - t2) * self.du * m1;
        (q * x).min(self.model.cap(x))
    }
}

impl FeedbackPolicy for OptimalPolicy {
    #[inline]
    fn controls(&self, x: f64) -> PolicyPoint {
        PolicyPoint {
            c: self.consumption(x),
            pi: self.allocation(x),
        }
    }
    fn label(&self) -> String {
        if self.linear_pi {
            "optimal[pi=linear]".into()
        } else {
            "optimal".into()
        }
    }
}

/// Scales another policy's controls; consumption is clamped to `[0, kx + l]`.
pub struct Scaled<'a> {
    pub inner: &'a dyn FeedbackPolicy,
    pub c_scale: f64,
    pub pi_scale: f64,
    pub k: f64,
    pub ell: f64,
}

impl<'a> Scaled<'a> {
    pub fn new(inner: &'a dyn FeedbackPolicy, model: &Model, c_scale: f64, pi_scale: f64) -> Self {
        Scaled {
            inner,
            c_scale,
            pi_scale,
            k: model.params.k,
            ell: model.params.ell,
        }
    }
}

impl FeedbackPolicy for Scaled<'_> {
    #[inline]
    fn controls(&self, x: f64) -> PolicyPoint {
        let base = self.inner.controls(x);
        PolicyPoint {
            c: (base.c * self.c_scale).clamp(0.0, self.k * x + self.ell),
            pi: base.pi * self.pi_scale,
        }
    }
    fn label(&self) -> String {
        format!(
            "{}[c*{},pi*{}]",
            self.inner.label(),
            self.c_scale,
            self.pi_scale
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        let bad = |what, value: f64, domain: &str| {
            Err(Error::Domain {
                what,
                value,
                domain: domain.into(),
            })
        };
        if !(self.x0 >= 0.0 && self.x0.is_finite()) {
            return bad("x0", self.x0, "[0, inf)");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", self.dt, "(0, inf)");
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return bad("horizon", self.horizon, "[dt, inf)");
        }
        if self.n_paths < 1 {
            return bad("n_paths", 0.0, "[1, inf)");
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Mean of `e^(-beta T) * merton_value(X_T)`, an upper bound on the
    /// truncated tail.
    pub truncation_bound: f64,
    pub absorbed_fraction: f64,
}

/// Paired difference `baseline - other` under common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub policy: String,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub estimates: Vec<SimEstimate>,
    /// Differences of the first policy against each of the others.
    pub differences: Vec<PairedDifference>,
}

/// Running mean and sum of squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct BlockStats {
    value: Vec<Moments>,
    diff: Vec<Moments>,
    tail: Vec<f64>,
    absorbed: Vec<usize>,
}

impl BlockStats {
    fn new(m: usize) -> Self {
        BlockStats {
            value: vec![Moments::default(); m],
            diff: vec![Moments::default(); m],
            tail: vec![0.0; m],
            absorbed: vec![0; m],
        }
    }

    fn merge(&mut self, o: &BlockStats) {
        for j in 0..self.value.len() {
            self.value[j].merge(&o.value[j]);
            self.diff[j].merge(&o.diff[j]);
            self.tail[j] += o.tail[j];
            self.absorbed[j] += o.absorbed[j];
        }
    }
}

/// Outcome of one path for one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathResult {
    pub utility: f64,
    pub x_final: f64,
    pub absorbed: bool,
}

struct Simulator<'a> {
    model: &'a Model,
    cfg: &'a SimConfig,
    policies: &'a [&'a dyn FeedbackPolicy],
}

impl Simulator<'_> {
    /// Runs path `path` for every policy on shared increments.
    fn path(&self, path: usize, out: &mut [PathResult]) -> Result<()> {
        let prm = &self.model.params;
        let (r, mu, sigma, beta, p) = (prm.r, prm.mu, prm.sigma, prm.beta, prm.p);
        let dt = self.cfg.dt;
        let sdt = dt.sqrt();
        let decay = (-beta * dt).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(path as u64);
        for o in out.iter_mut() {
            *o = PathResult {
                utility: 0.0,
                x_final: self.cfg.x0,
                absorbed: self.cfg.x0 == 0.0,
            };
        }
        let mut alive = out.iter().filter(|o| !o.absorbed).count();
        let mut disc = 1.0;
        let n_steps = self.cfg.n_steps();
        for step in 0..n_steps {
            if alive == 0 {
                break;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            let dw = sdt * z;
            for (o, policy) in out.iter_mut().zip(self.policies.iter()) {
                if o.absorbed {
                    continue;
                }
                let x = o.x_final;
                let PolicyPoint { c, pi } = policy.controls(x);
                let cap = prm.k * x + prm.ell;
                if !(c >= 0.0 && c <= cap * (1.0 + 1e-12)) {
                    return Err(Error::PolicyViolation {
                        t: step as f64 * dt,
                        x,
                        c,
                    });
                }
                if c > 0.0 {
                    o.utility += disc * pow_p(c, p) / p * dt;
                }
                let nx = x + (r * x + pi * mu - c) * dt + pi * sigma * dw;
                if nx <= 0.0 {
                    o.x_final = 0.0;
                    o.absorbed = true;
                    alive -= 1;
                } else {
                    o.x_final = nx;
                }
            }
            disc *= decay;
        }
        Ok(())
    }

    fn block(&self, b: usize) -> Result<BlockStats> {
        let m = self.policies.len();
        let mut stats = BlockStats::new(m);
        let mut out = vec![
            PathResult {
                utility: 0.0,
                x_final: 0.0,
                absorbed: false
            };
            m
        ];
        let end = ((b + 1) * BLOCK).min(self.cfg.n_paths);
        let kappa = self.model.consts.kappa;
        let p = self.model.params.p;
        let tail_coef =
            pow_p(kappa, p - 1.0) / p * (-self.model.params.beta * self.horizon()).exp();
        for path in b * BLOCK..end {
            self.path(path, &mut out)?;
            for j in 0..m {
                stats.value[j].push(out[j].utility);
                stats.diff[j].push(out[0].utility - out[j].utility);
                stats.tail[j] += tail_coef * pow_p(out[j].x_final, p);
                stats.absorbed[j] += out[j].absorbed as usize;
            }
        }
        Ok(stats)
    }

    fn horizon(&self) -> f64 {
        self.cfg.n_steps() as f64 * self.cfg.dt
    }

    fn run(&self) -> Result<BlockStats> {
        let n_blocks = self.cfg.n_paths.div_ceil(BLOCK);
        let blocks: Vec<BlockStats> = (0..n_blocks)
            .into_par_iter()
            .map(|b| self.block(b))
            .collect::<Result<_>>()?;
        let mut total = BlockStats::new(self.policies.len());
        for b in &blocks {
            total.merge(b);
        }
        Ok(total)
    }
}

fn check_policies(policies: &[&dyn FeedbackPolicy]) -> Result<()> {
    if policies.is_empty() {
        return Err(Error::Domain {
            what: "policy count",
            value: 0.0,
            domain: "[1, inf)".into(),
        });
    }
    Ok(())
}

/// Simulates several policies on common random numbers and reports each
/// estimate plus the paired differences of the first against the rest.
pub fn compare_policies(
    model: &Model,
    cfg: &SimConfig,
    policies: &[&dyn FeedbackPolicy],
) -> Result<Comparison> {
    cfg.validate()?;
    check_policies(policies)?;
    if model.consts.kappa <= 0.0 {
        return Err(Error::IllPosed {
            kappa: model.consts.kappa,
        });
    }
    let sim = Simulator {
        model,
        cfg,
        policies,
    };
    let total = sim.run()?;
    let n = cfg.n_paths as f64;
    let estimates = (0..policies.len())
        .map(|j| SimEstimate {
            mean: total.value[j].mean,
            std_error: total.value[j].std_error(),
            truncation_bound: total.tail[j] / n,
            absorbed_fraction: total.absorbed[j] as f64 / n,
        })
        .collect();
    let differences = (1..policies.len())
        .map(|j| PairedDifference {
            policy: policies[j].label(),
            mean: total.diff[j].mean,
            std_error: total.diff[j].std_error(),
        })
        .collect();
    Ok(Comparison {
        labels: policies.iter().map(|p| p.label()).collect(),
        estimates,
        differences,
    })
}

/// Expected discounted utility under one policy.
pub fn simulate(
    model: &Model,
    cfg: &SimConfig,
    policy: &dyn FeedbackPolicy,
) -> Result<SimEstimate> {
    Ok(compare_policies(model, cfg, &[policy])?.estimates[0])
}

/// Per-path discounted utilities in path order, for quantile reports.
pub fn simulate_paths(
    model: &Model,
    cfg: &SimConfig,
    policy: &dyn FeedbackPolicy,
) -> Result<Vec<PathResult>> {
    cfg.validate()?;
    let policies = [policy];
    let sim = Simulator {
        model,
        cfg,
        policies: &policies,
    };
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut out = [PathResult {
                utility: 0.0,
                x_final: 0.0,
                absorbed: false,
            }];
            sim.path(i, &mut out)?;
            Ok(out[0])
        })
        .collect()
}

/// Empirical quantiles (nearest rank) of `values`.
pub fn quantiles(values: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&q| {
            if sorted.is_empty() {
                return f64::NAN;
            }
            let rank = (q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).round() as usize;
            sorted[rank]
        })
        .collect()
}
