//! Closed-form consumption-to-wealth map on the unconstrained region.
//!
//! Below the free boundary the optimal consumption `c` and wealth `x` are
//! related by `X(c) = c/kappa - B c^lambda` for `0 < c <= c*`, where
//! `c* = k x* + l` and `B = ((k - kappa) x* + l) / (kappa c*^lambda)`. The value
//! function and its derivatives follow from `V_x(X(c)) = c^(p-1)` and the HJB
//! equation written in the `c` variable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Model;

/// The map `X(c)` for one candidate free boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UMap {
    pub x_star: f64,
    pub c_star: f64,
    /// Coefficient of the `c^lambda` term.
    pub b: f64,
    pub lambda: f64,
    pub kappa: f64,
}

/// `(V, V_x, V_xx)` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueTriple {
    pub v: f64,
    pub vx: f64,
    pub vxx: f64,
}

impl UMap {
    /// Builds the map for a candidate boundary inside `[l/(eta-k), l/(kappa-k)]`.
    pub fn build(model: &Model, x_hat: f64) -> Result<Self> {
        model.require_main("build_umap")?;
        let (lo, hi) = model.bracket().expect("main regime has a bracket");
        let slack = 1e-12 * hi;
        if !(x_hat >= lo - slack && x_hat <= hi + slack) {
            return Err(Error::OutsideBracket { x_hat, lo, hi });
        }
        Ok(Self::build_unchecked(model, x_hat))
    }

    /// Builds the map without the bracket check. Used to probe candidates
    /// outside the proven interval.
    pub fn build_unchecked(model: &Model, x_hat: f64) -> Self {
        let kappa = model.consts.kappa;
        let lambda = model.consts.lambda_plus;
        let c_star = model.cap(x_hat);
        let gap = (model.params.k - kappa) * x_hat + model.params.ell;
        // Zero at the upper bracket end; snap the rounding residue of l/(kappa-k).
        let b = if gap.abs() <= 8.0 * f64::EPSILON * model.params.ell {
            0.0
        } else {
            gap / (kappa * c_star.powf(lambda))
        };
        UMap {
            x_star: x_hat,
            c_star,
            b,
            lambda,
            kappa,
        }
    }

    fn check_c(&self, c: f64) -> Result<()> {
        if c > 0.0 && c <= self.c_star * (1.0 + 1e-14) {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "consumption",
                value: c,
                domain: format!("(0, {}]", self.c_star),
            })
        }
    }

    #[inline]
    fn x_unchecked(&self, c: f64) -> f64 {
        if self.b == 0.0 {
            c / self.kappa
        } else if c == self.c_star {
            // Boundary identity X(c*) = x* holds exactly.
            self.x_star
        } else {
            c / self.kappa - self.b * c.powf(self.lambda)
        }
    }

    #[inline]
    fn dx_unchecked(&self, c: f64) -> f64 {
        1.0 / self.kappa - self.b * self.lambda * c.powf(self.lambda - 1.0)
    }

    /// `X(c) = c/kappa - B c^lambda` on `(0, c*]`.
    pub fn x_of_c(&self, c: f64) -> Result<f64> {
        self.check_c(c)?;
        Ok(self.x_unchecked(c))
    }

    /// Analytic derivative `X'(c) = 1/kappa - B lambda c^(lambda-1)`.
    pub fn dx_dc(&self, c: f64) -> Result<f64> {
        self.check_c(c)?;
        Ok(self.dx_unchecked(c))
    }

    /// Inverse map: the optimal consumption at wealth `0 < x <= x*`.
    ///
    /// Safeguarded Newton on the analytic bracket `[kappa x, min(kx + l, c*)]`.
    pub fn c_of_x(&self, x: f64, model: &Model) -> Result<f64> {
        if !(x > 0.0 && x <= self.x_star * (1.0 + 1e-14)) {
            return Err(Error::Domain {
                what: "wealth",
                value: x,
                domain: format!("(0, {}]", self.x_star),
            });
        }
        if x >= self.x_star {
            return Ok(self.c_star);
        }
        if self.b == 0.0 {
            return Ok(self.kappa * x);
        }
        let mut lo = (self.kappa * x * (1.0 - 1e-12)).min(self.c_star);
        let mut hi = model.cap(x).min(self.c_star);
        let g = |c: f64| self.x_unchecked(c) - x;
        if g(lo) > 0.0 {
            return Err(Error::Bracket("c_of_x lower end"));
        }
        if g(hi) < 0.0 {
            // Leave the cap bound and fall back to the full domain.
            hi = self.c_star;
            if g(hi) < 0.0 {
                return Err(Error::Bracket("c_of_x upper end"));
            }
        }
        let tol = 1e-10 * x.max(1.0);
        let mut c = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gc = g(c);
            if gc.abs() <= 4.0 * f64::EPSILON * x {
                return Ok(c);
            }
            if gc < 0.0 {
                lo = c;
            } else {
                hi = c;
            }
            let d = self.dx_unchecked(c);
            let newton = c - gc / d;
            c = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        if g(c).abs() <= tol {
            Ok(c)
        } else {
            Err(Error::Bracket("c_of_x did not converge"))
        }
    }

    /// Inverse of `X` beyond `x*`, on the increasing part of the map.
    ///
    /// Only needed when a stored switching point disagrees with the map.
    pub fn c_of_x_beyond(&self, x: f64) -> Result<f64> {
        if x <= self.x_star {
            return Err(Error::Domain {
                what: "wealth",
                value: x,
                domain: format!("({}, inf)", self.x_star),
            });
        }
        let g = |c: f64| self.x_unchecked(c) - x;
        let mut lo = self.c_star;
        let mut hi = self.c_star;
        while g(hi) < 0.0 {
            if self.dx_unchecked(hi) <= 0.0 || hi > 1e6 * self.c_star {
                return Err(Error::Bracket("c_of_x_beyond: map stops increasing"));
            }
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `(V, V_x, V_xx)` at wealth `X(c)`.
    ///
    /// `V_x = c^(p-1)`, `V_xx = (p-1) c^(p-2) / X'(c)` and
    /// `beta V = theta c^p X'(c) + r c^(p-1) X(c) - ((p-1)/p) c^p`.
    pub fn value_at(&self, c: f64, model: &Model) -> Result<ValueTriple> {
        self.check_c(c)?;
        Ok(self.value_at_unchecked(c, model))
    }

    /// [`UMap::value_at`] without the domain check on `c`.
    pub fn value_at_unchecked(&self, c: f64, model: &Model) -> ValueTriple {
        let p = model.params.p;
        let theta = model.consts.theta;
        let x = self.x_unchecked(c);
        let dx = self.dx_unchecked(c);
        let cp = c.powf(p);
        let vx = cp / c;
        let vxx = (p - 1.0) * vx / (c * dx);
        let v =
            (theta * cp * dx + model.params.r * vx * x - (p - 1.0) / p * cp) / model.params.beta;
        ValueTriple { v, vx, vxx }
    }
}

/// Residual of the unconstrained-region equation
/// `beta V + (mu^2/2sigma^2) V_x^2 / V_xx - r x V_x + (1 - 1/p) V_x^(p/(p-1))`.
pub fn unconstrained_residual(model: &Model, x: f64, t: &ValueTriple) -> f64 {
    let prm = &model.params;
    let p = prm.p;
    prm.beta * t.v + prm.half_sharpe_sq() * t.vx * t.vx / t.vxx - prm.r * x * t.vx
        + (1.0 - 1.0 / p) * t.vx.powf(p / (p - 1.0))
}
