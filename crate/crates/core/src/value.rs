//! Global value function, region labels and the optimal feedback policy
//! assembled from a [`ValueSolution`].
//!
//! Below `x*` everything comes from the closed-form map `X(c)`. Above it the
//! stored dual trajectory is inverted: `x = -v_y(y)` is located by cubic
//! Hermite interpolation in `s = ln y` (node slopes are exact ODE
//! derivatives), then `V = v - y v_y`, `V_x = y`, `V_xx = -1 / v_yy`.

use serde::{Deserialize, Serialize};

use crate::closed_form::{pow_p, PolicyPoint};
use crate::error::{Error, Result};
use crate::free_boundary::{DualPoint, ValueSolution};
use crate::params::Model;
use crate::umap::ValueTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    U,
    C,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::U => "U",
            Region::C => "C",
        }
    }
}

/// `(V, V_x, V_xx)` at one wealth level with its region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: f64,
    pub region: Region,
    pub v: f64,
    pub vx: f64,
    pub vxx: f64,
    /// Set at the exception point `x_e`, where `V_xx` is the left limit.
    pub one_sided: bool,
}

impl Evaluation {
    pub fn triple(&self) -> ValueTriple {
        ValueTriple {
            v: self.v,
            vx: self.vx,
            vxx: self.vxx,
        }
    }
}

fn check_positive(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "wealth",
            value: x,
            domain: "(0, inf)".into(),
        })
    }
}

#[inline]
fn hermite(t: f64, h: f64, p0: f64, m0: f64, p1: f64, m1: f64) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let val = h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1;
    let d00 = 6.0 * t2 - 6.0 * t;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = -d00;
    let d11 = 3.0 * t2 - 2.0 * t;
    // d/dt; divide by h for d/ds.
    let der = d00 * p0 + d10 * h * m0 + d01 * p1 + d11 * h * m1;
    (val, der)
}

/// Interpolates the trajectory segment `[a, b]` at wealth `x`.
fn invert_segment(a: &DualPoint, b: &DualPoint, x: f64) -> (f64, f64, f64) {
    let (sa, sb) = (a.y.ln(), b.y.ln());
    let h = sb - sa;
    // dx/ds = -y v_yy, dv/ds = y v_y.
    let (xa, xb) = (a.x(), b.x());
    let (ma, mb) = (-a.y * a.v_yy, -b.y * b.v_yy);
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut t = ((x - xa) / (xb - xa)).clamp(0.0, 1.0);
    for _ in 0..60 {
        let (g, dg) = hermite(t, h, xa, ma, xb, mb);
        let r = g - x;
        if r.abs() <= 2.0 * f64::EPSILON * x {
            break;
        }
        if r < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let next = t - r / dg;
        t = if dg > 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    let s = sa + t * h;
    let y = s.exp();
    let (_, dxdt) = hermite(t, h, xa, ma, xb, mb);
    let v_yy = -(dxdt / h) / y;
    let (v, _) = hermite(t, h, a.v, a.y * a.v_y, b.v, b.y * b.v_y);
    (y, v, v_yy)
}

impl ValueSolution {
    /// `U` iff `x < x*`.
    pub fn region(&self, x: f64) -> Result<Region> {
        check_positive(x)?;
        Ok(if x < self.x_star {
            Region::U
        } else {
            Region::C
        })
    }

    /// Whether `x` coincides with the exception point `x_e` to 1e-9 relative.
    pub fn at_exception_point(&self, x: f64) -> bool {
        self.derived
            .x_e
            .is_some_and(|xe| (x - xe).abs() <= 1e-9 * xe)
    }

    /// `(V, V_x, V_xx)` at `x > 0`.
    pub fn evaluate(&self, x: f64) -> Result<Evaluation> {
        check_positive(x)?;
        let model = self.model();
        if x < self.x_star {
            let t = if x <= self.umap.x_star {
                let c = self.umap.c_of_x(x, &model)?;
                self.umap.value_at(c, &model)?
            } else {
                let c = self.umap.c_of_x_beyond(x)?;
                self.umap.value_at_unchecked(c, &model)
            };
            return Ok(Evaluation {
                x,
                region: Region::U,
                v: t.v,
                vx: t.vx,
                vxx: t.vxx,
                one_sided: false,
            });
        }
        let pts = &self.trajectory.points;
        let x_max = self.trajectory.x_max();
        if x > x_max {
            return Err(Error::Extrapolation {
                x,
                x_max,
                fallback: self.derived.a_inf.unwrap_or(0.0) * pow_p(x, self.params.p),
            });
        }
        let j = pts.partition_point(|p| p.x() < x);
        let (y, v, v_yy) = if j == 0 {
            (pts[0].y, pts[0].v, pts[0].v_yy)
        } else if pts[j].x() == x {
            (pts[j].y, pts[j].v, pts[j].v_yy)
        } else {
            invert_segment(&pts[j - 1], &pts[j], x)
        };
        Ok(Evaluation {
            x,
            region: Region::C,
            v: v + x * y,
            vx: y,
            vxx: -1.0 / v_yy,
            one_sided: self.at_exception_point(x),
        })
    }

    /// `V(x)`, with `V(0) = 0`.
    pub fn value(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(self.evaluate(x)?.v)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(self.evaluate(x)?.vx)
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        Ok(self.evaluate(x)?.vxx)
    }

    /// Optimal controls: `c = X^{-1}(x)` below `x*`, `kx + l` above, and the
    /// HJB maximiser `pi = -mu V_x / (sigma^2 V_xx)`.
    ///
    /// `pi` equals `merton_fraction x` only where `V` is locally a power of
    /// `x`; near `x*` it is smaller (down to 0.66 times that for P1). Past the
    /// stored trajectory `V` follows `a_inf x^p` and the linear rule is used.
    pub fn policy(&self, x: f64) -> PolicyPoint {
        let model = self.model();
        if x <= 0.0 {
            return PolicyPoint { c: 0.0, pi: 0.0 };
        }
        let c = if x >= self.x_star {
            model.cap(x)
        } else {
            match self.umap.c_of_x(x, &model) {
                Ok(c) => c.min(model.cap(x)),
                // Only reachable for subnormal wealth.
                Err(_) => self.derived.kappa * x,
            }
        };
        PolicyPoint {
            c,
            pi: self.allocation(x),
        }
    }

    /// Risky allocation `-mu V_x / (sigma^2 V_xx)`.
    pub fn allocation(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let prm = &self.params;
        match self.evaluate(x) {
            Ok(e) => -prm.mu * e.vx / (prm.sigma * prm.sigma * e.vxx),
            Err(_) => self.derived.merton_fraction * x,
        }
    }

    /// `count` rows at evenly spaced wealth levels on `[x_min, x_max]`.
    pub fn table(&self, x_min: f64, x_max: f64, count: usize) -> Result<Vec<TableRow>> {
        check_positive(x_min)?;
        if count == 0 || !(x_max >= x_min) || (count > 1 && x_max == x_min) {
            return Err(Error::Domain {
                what: "table range",
                value: x_max,
                domain: format!("x_max > x_min = {x_min} with points >= 1"),
            });
        }
        (0..count)
            .map(|i| {
                let x = if count == 1 {
                    x_min
                } else {
                    x_min + (x_max - x_min) * i as f64 / (count - 1) as f64
                };
                let e = self.evaluate(x)?;
                let pol = self.policy(x);
                Ok(TableRow {
                    x,
                    v: e.v,
                    vx: e.vx,
                    vxx: e.vxx,
                    c_star: pol.c,
                    pi_star: pol.pi,
                    region: e.region,
                })
            })
            .collect()
    }
}

/// One row of the `table` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub x: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "Vx")]
    pub vx: f64,
    #[serde(rename = "Vxx")]
    pub vxx: f64,
    pub c_star: f64,
    pub pi_star: f64,
    pub region: Region,
}

impl TableRow {
    pub const CSV_HEADER: &'static str = "x,V,Vx,Vxx,c_star,pi_star,region";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.x,
            self.v,
            self.vx,
            self.vxx,
            self.c_star,
            self.pi_star,
            self.region.as_str()
        )
    }
}

/// Residual of the full HJB equation
/// `beta V - max_pi(...) - r x V_x - max_{0<=c<=kx+l}(c^p/p - c V_x)`.
pub fn hjb_residual(model: &Model, x: f64, t: &ValueTriple) -> f64 {
    let prm = &model.params;
    let p = prm.p;
    let c = t.vx.powf(1.0 / (p - 1.0)).min(model.cap(x));
    prm.beta * t.v + prm.half_sharpe_sq() * t.vx * t.vx / t.vxx
        - prm.r * x * t.vx
        - (pow_p(c, p) / p - c * t.vx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_boundary::{solve_x_star, SolveOptions};
    use crate::params::ModelParams;

    fn p0_solution() -> ValueSolution {
        let m = Model::new(ModelParams {
            r: 0.03,
            mu: 0.05,
            sigma: 0.2,
            beta: 0.1,
            p: 0.5,
            k: 0.05,
            ell: 1.0,
        })
        .unwrap();
        solve_x_star(&m, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn region_examples() {
        let s = p0_solution();
        assert_eq!(s.region(s.x_star / 2.0).unwrap(), Region::U);
        assert_eq!(s.region(s.x_star).unwrap(), Region::C);
        assert_eq!(s.region(2.0 * s.x_star).unwrap(), Region::C);
        assert!(s.region(0.0).is_err());
        assert!(s.region(-1.0).is_err());
    }

    #[test]
    fn policy_examples() {
        let s = p0_solution();
        let m = s.model();
        for x in [s.x_star, 1.5 * s.x_star, 40.0] {
            assert_eq!(s.policy(x).c, m.cap(x));
        }
        let left = s.policy(s.x_star * (1.0 - 1e-12)).c;
        assert!((left - m.cap(s.x_star)).abs() <= 1e-8 * left);
        assert_eq!(s.policy(0.0), PolicyPoint { c: 0.0, pi: 0.0 });
        let x = 1e-6;
        assert!((s.policy(x).c / x - m.consts.kappa).abs() < 1e-5 * m.consts.kappa);
        let e = s.evaluate(7.0).unwrap();
        let pi = -0.05 * e.vx / (0.04 * e.vxx);
        assert!((s.policy(7.0).pi - pi).abs() < 1e-12 * pi);
        assert!(pi < 17.5);
    }

    #[test]
    fn node_values_round_trip() {
        let s = p0_solution();
        for p in s.trajectory.points.iter().step_by(37) {
            let e = s.evaluate(p.x()).unwrap();
            assert!((e.vx - p.y).abs() <= 1e-12 * p.y);
            assert!((e.v - (p.v + p.x() * p.y)).abs() <= 1e-12 * e.v);
        }
    }

    #[test]
    fn extrapolation_offers_fallback() {
        let s = p0_solution();
        let x = 2.0 * s.trajectory.x_max();
        match s.evaluate(x) {
            Err(Error::Extrapolation { fallback, .. }) => assert!(fallback > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_rows() {
        let s = p0_solution();
        let rows = s.table(s.x_star, s.x_star, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].region, Region::C);
        let rows = s.table(0.1, 100.0, 200).unwrap();
        assert!(rows.windows(2).all(|w| w[0].x < w[1].x));
        assert!(s.table(1.0, 0.5, 3).is_err());
    }
}
