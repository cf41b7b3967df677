//! Market, preference and constraint inputs, and every constant derived from
//! them.
//!
//! The wealth dynamics are `dX = (rX + pi*mu - c) dt + pi*sigma dW` with CRRA
//! utility `c^p / p` discounted at rate `beta`, and consumption capped by
//! `0 <= c <= kX + l`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw model inputs. Rates are per unit time; `mu` is the excess return
/// `alpha - r` of the risky asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub p: f64,
    pub k: f64,
    pub ell: f64,
}

impl ModelParams {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Checks the admissibility invariants, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("r", self.r),
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("p", self.p),
            ("k", self.k),
            ("ell", self.ell),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite, got {value}"
                )));
            }
        }
        let checks: [(bool, &str); 8] = [
            (self.r > 0.0, "r > 0"),
            (self.sigma > 0.0, "sigma > 0"),
            (self.mu > 0.0, "mu > 0"),
            (self.beta > 0.0, "beta > 0"),
            (self.p > 0.0 && self.p < 1.0, "0 < p < 1"),
            (self.k >= 0.0, "k >= 0"),
            (self.ell >= 0.0, "ell >= 0"),
            (self.k + self.ell > 0.0, "k + ell > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, rule)) => Err(Error::InvalidParameter(format!(
                "violated invariant {rule}"
            ))),
            None => Ok(()),
        }
    }

    /// `theta = mu^2 / (2 sigma^2 (1-p))`.
    pub fn theta(&self) -> f64 {
        self.mu * self.mu / (2.0 * self.sigma * self.sigma * (1.0 - self.p))
    }

    /// `kappa = (beta - p (theta + r)) / (1-p)`, the Merton consumption rate.
    pub fn kappa(&self) -> f64 {
        (self.beta - self.p * (self.theta() + self.r)) / (1.0 - self.p)
    }

    /// Half squared Sharpe ratio `mu^2 / (2 sigma^2)`, the diffusion weight of
    /// the dual equation.
    pub fn half_sharpe_sq(&self) -> f64 {
        self.mu * self.mu / (2.0 * self.sigma * self.sigma)
    }

    pub fn derive(&self) -> Result<DerivedConstants> {
        self.validate()?;
        Ok(DerivedConstants::compute(self))
    }
}

/// Which qualitatively different problem a parameter set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// `kappa <= 0`: infinite value.
    IllPosed,
    /// `k >= kappa > 0`: the cap never binds, Merton solution.
    MertonEquivalent,
    /// `l = 0`, `0 < k < kappa`: proportional cap, closed form.
    Homogeneous,
    /// `kappa > k > 0`, `l > 0`, `kappa >= k + r`: free boundary.
    Main,
    /// `kappa < k + r`, or `k = 0 < l`: not solved.
    Unsupported,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::IllPosed => "ILL_POSED",
            Regime::MertonEquivalent => "MERTON_EQUIVALENT",
            Regime::Homogeneous => "HOMOGENEOUS",
            Regime::Main => "MAIN",
            Regime::Unsupported => "UNSUPPORTED",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Constants computed in closed form from [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub theta: f64,
    pub kappa: f64,
    /// Lower-bound consumption rate; defined when `k > 0` and `kappa > 0`.
    pub eta: Option<f64>,
    pub merton_fraction: f64,
    /// Larger root of `f(l) = theta l (l-1) + (r - beta + p theta) l + r (p-1)`.
    pub lambda_plus: f64,
    /// Smaller (negative) root of the same quadratic.
    pub lambda_minus: f64,
    /// Exception point `l / (r - k)`; present only when `r > k`.
    pub x_e: Option<f64>,
    /// Coefficient of `x^p` in the lower bound `k^p / (p (kappa (1-p) + k p))`;
    /// defined when `kappa > 0`.
    pub a_inf: Option<f64>,
    pub regime: Regime,
}

impl DerivedConstants {
    fn compute(params: &ModelParams) -> Self {
        let p = params.p;
        let theta = params.theta();
        let kappa = params.kappa();
        let merton_fraction = params.mu / (params.sigma * params.sigma * (1.0 - p));
        let (lambda_plus, lambda_minus) = characteristic_roots(params);
        let denom = kappa * (1.0 - p) + params.k * p;
        let eta = (params.k > 0.0 && kappa > 0.0)
            .then(|| (params.k / denom).powf(1.0 / (p - 1.0)) * kappa);
        let a_inf = (kappa > 0.0).then(|| params.k.powf(p) / (p * denom));
        let x_e = (params.r > params.k).then(|| params.ell / (params.r - params.k));
        let regime = classify(params, kappa);
        DerivedConstants {
            theta,
            kappa,
            eta,
            merton_fraction,
            lambda_plus,
            lambda_minus,
            x_e,
            a_inf,
            regime,
        }
    }
}

/// Roots of `theta l^2 + (r - beta + p theta - theta) l + r (p-1)`.
///
/// The discriminant is always positive since the constant term is negative.
/// The larger-magnitude root is formed first and the other from the product
/// `r (p-1) / theta`, so neither suffers cancellation when `theta` is small.
pub fn characteristic_roots(params: &ModelParams) -> (f64, f64) {
    let theta = params.theta();
    let a = theta;
    let b = params.r - params.beta + params.p * theta - theta;
    let c = params.r * (params.p - 1.0);
    let disc = (b * b - 4.0 * a * c).sqrt();
    let q = -0.5 * (b + b.signum() * disc);
    let q = if q == 0.0 { -0.5 * disc } else { q };
    let r1 = q / a;
    let r2 = c / q;
    (r1.max(r2), r1.min(r2))
}

/// Evaluates `f(l) = theta l (l-1) + (r - beta + p theta) l + r (p-1)`.
pub fn characteristic_poly(params: &ModelParams, lambda: f64) -> f64 {
    let theta = params.theta();
    theta * lambda * (lambda - 1.0)
        + (params.r - params.beta + params.p * theta) * lambda
        + params.r * (params.p - 1.0)
}

/// Regime tag. The branches are tested in order, so exactly one fires.
pub fn classify(params: &ModelParams, kappa: f64) -> Regime {
    let (k, ell, r) = (params.k, params.ell, params.r);
    if kappa <= 0.0 {
        Regime::IllPosed
    } else if k >= kappa {
        Regime::MertonEquivalent
    } else if ell == 0.0 {
        Regime::Homogeneous
    } else if k == 0.0 || kappa < k + r {
        Regime::Unsupported
    } else {
        Regime::Main
    }
}

/// Validated parameters bundled with their derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub consts: DerivedConstants,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        let consts = params.derive()?;
        Ok(Model { params, consts })
    }

    pub fn regime(&self) -> Regime {
        self.consts.regime
    }

    /// Consumption cap `kx + l`.
    pub fn cap(&self, x: f64) -> f64 {
        self.params.k * x + self.params.ell
    }

    /// Free-boundary bracket `[l/(eta-k), l/(kappa-k)]`, defined in the main regime.
    pub fn bracket(&self) -> Option<(f64, f64)> {
        if self.consts.regime != Regime::Main {
            return None;
        }
        let eta = self.consts.eta?;
        let (k, ell) = (self.params.k, self.params.ell);
        Some((ell / (eta - k), ell / (self.consts.kappa - k)))
    }

    /// Fails unless the regime is [`Regime::Main`], reporting why.
    pub fn require_main(&self, operation: &'static str) -> Result<()> {
        match self.consts.regime {
            Regime::Main => Ok(()),
            Regime::IllPosed => Err(Error::IllPosed {
                kappa: self.consts.kappa,
            }),
            Regime::Unsupported => Err(Error::Unsupported {
                kappa: self.consts.kappa,
                threshold: self.params.k + self.params.r,
            }),
            actual => Err(Error::RegimeMismatch {
                operation,
                expected: "MAIN",
                actual,
            }),
        }
    }
}
