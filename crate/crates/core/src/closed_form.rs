//! Exact value functions and policies for the regimes with closed-form
//! solutions: the unconstrained Merton problem and the proportional cap
//! `c <= kx`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Model, Regime};

/// Consumption rate and risky allocation at one wealth level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub c: f64,
    pub pi: f64,
}

/// `x^p` evaluated as `exp(p ln x)`, with `0^p = 0` exactly.
#[inline]
pub fn pow_p(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        (p * x.ln()).exp()
    }
}

/// CRRA utility `c^p / p`.
#[inline]
pub fn utility(c: f64, p: f64) -> f64 {
    pow_p(c, p) / p
}

fn check_wealth(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "wealth",
            value: x,
            domain: "[0, inf)".into(),
        })
    }
}

fn require_positive_kappa(model: &Model) -> Result<f64> {
    let kappa = model.consts.kappa;
    if kappa > 0.0 {
        Ok(kappa)
    } else {
        Err(Error::IllPosed { kappa })
    }
}

/// Unconstrained value `kappa^(p-1) x^p / p`, an upper bound in every regime.
pub fn merton_value(x: f64, model: &Model) -> Result<f64> {
    check_wealth(x)?;
    let kappa = require_positive_kappa(model)?;
    let p = model.params.p;
    Ok(pow_p(kappa, p - 1.0) * pow_p(x, p) / p)
}

/// Merton feedback policy `(kappa x, merton_fraction x)`.
pub fn merton_policy(x: f64, model: &Model) -> Result<PolicyPoint> {
    check_wealth(x)?;
    let kappa = require_positive_kappa(model)?;
    Ok(PolicyPoint {
        c: kappa * x,
        pi: model.consts.merton_fraction * x,
    })
}

/// Coefficient `m^p / (p (kappa (1-p) + m p))` with `m = min(kappa, k)`.
///
/// For `l = 0` this is the exact value coefficient; for `l > 0` it is the
/// lower bound used as the large-wealth asymptote.
pub fn homogeneous_coefficient(model: &Model) -> Result<f64> {
    let kappa = require_positive_kappa(model)?;
    let p = model.params.p;
    let m = kappa.min(model.params.k);
    Ok(pow_p(m, p) / (p * (kappa * (1.0 - p) + m * p)))
}

fn require_homogeneous(model: &Model, operation: &'static str) -> Result<()> {
    let params = &model.params;
    if model.consts.kappa <= 0.0 {
        return Err(Error::IllPosed {
            kappa: model.consts.kappa,
        });
    }
    if params.ell != 0.0 || params.k <= 0.0 {
        return Err(Error::RegimeMismatch {
            operation,
            expected: "l = 0, k > 0",
            actual: model.consts.regime,
        });
    }
    debug_assert!(matches!(
        model.consts.regime,
        Regime::Homogeneous | Regime::MertonEquivalent
    ));
    Ok(())
}

/// Value under the proportional cap `c <= kx` (requires `l = 0`).
pub fn homogeneous_value(x: f64, model: &Model) -> Result<f64> {
    check_wealth(x)?;
    require_homogeneous(model, "homogeneous_value")?;
    Ok(homogeneous_coefficient(model)? * pow_p(x, model.params.p))
}

/// Policy under the proportional cap: `(min(kappa, k) x, merton_fraction x)`.
pub fn homogeneous_policy(x: f64, model: &Model) -> Result<PolicyPoint> {
    check_wealth(x)?;
    require_homogeneous(model, "homogeneous_policy")?;
    Ok(PolicyPoint {
        c: model.consts.kappa.min(model.params.k) * x,
        pi: model.consts.merton_fraction * x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;

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

    #[test]
    fn merton_value_examples() {
        let m = model(p0());
        let v1 = merton_value(1.0, &m).unwrap();
        assert!((v1 - 2.0 / 0.1075f64.sqrt()).abs() < 1e-13);
        assert!((v1 - 6.09995).abs() < 1e-5);
        assert_eq!(merton_value(0.0, &m).unwrap(), 0.0);
        let v4 = merton_value(4.0, &m).unwrap();
        assert!((v4 - 2.0 * v1).abs() < 1e-12);
        assert!(merton_value(-1.0, &m).is_err());
    }

    #[test]
    fn merton_policy_examples() {
        let pol = merton_policy(10.0, &model(p0())).unwrap();
        assert!((pol.c - 1.075).abs() < 1e-13 && (pol.pi - 25.0).abs() < 1e-12);
        assert_eq!(
            merton_policy(0.0, &model(p0())).unwrap(),
            PolicyPoint { c: 0.0, pi: 0.0 }
        );
        let p1 = ModelParams {
            r: 0.06,
            k: 0.01,
            ..p0()
        };
        let pol = merton_policy(10.0, &model(p1)).unwrap();
        assert!((pol.c - 0.775).abs() < 1e-13 && (pol.pi - 25.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_examples() {
        let m = model(ModelParams { ell: 0.0, ..p0() });
        let v = homogeneous_value(1.0, &m).unwrap();
        // k^p / (p (kappa (1-p) + k p)) with k = 0.05
        let direct = 0.05f64.sqrt() / (0.5 * (0.1075 * 0.5 + 0.05 * 0.5));
        assert!((v - direct).abs() < 1e-13);
        // Quoted to five decimals.
        assert!((v - 5.67892).abs() < 5e-5);
        assert_eq!(homogeneous_value(0.0, &m).unwrap(), 0.0);
        let pol = homogeneous_policy(2.0, &m).unwrap();
        assert!((pol.c - 0.1).abs() < 1e-15 && (pol.pi - 5.0).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_equals_merton_when_cap_is_slack() {
        let m = model(ModelParams {
            k: 0.2,
            ell: 0.0,
            ..p0()
        });
        assert_eq!(m.regime(), Regime::MertonEquivalent);
        for x in [0.5, 1.0, 7.0, 123.0] {
            let h = homogeneous_value(x, &m).unwrap();
            let v = merton_value(x, &m).unwrap();
            assert!((h - v).abs() <= 1e-13 * v);
        }
    }

    #[test]
    fn homogeneous_rejects_positive_intercept() {
        assert!(matches!(
            homogeneous_value(1.0, &model(p0())),
            Err(Error::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn ill_posed_is_reported() {
        let mut params = p0();
        params.beta = 0.01;
        let m = model(params);
        assert!(matches!(merton_value(1.0, &m), Err(Error::IllPosed { .. })));
    }
}
