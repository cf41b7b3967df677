//! Finite-difference policy iteration for the primal HJB equation on a
//! truncated wealth domain. Used only to cross-check [`ValueSolution`].
//!
//! [`ValueSolution`]: crate::free_boundary::ValueSolution

use serde::{Deserialize, Serialize};

use crate::closed_form::{homogeneous_coefficient, pow_p};
use crate::error::{Error, Result};
use crate::params::{Model, Regime};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FdOptions {
    pub n_nodes: usize,
    pub x_max: f64,
    /// Smallest positive node; the grid is geometric from here to `x_max`.
    pub x_min: f64,
    pub tol: f64,
    pub max_iterations: usize,
}

impl FdOptions {
    /// Defaults for a model: `x_max = 1000 l/(kappa-k)`, first positive node
    /// at `1e-4` times the lower bracket end.
    pub fn for_model(model: &Model, n_nodes: usize) -> Self {
        let (x_min, x_max) = match model.bracket() {
            Some((lo, hi)) => (1e-4 * lo, 1000.0 * hi),
            None => (1e-4, 1e4),
        };
        FdOptions {
            n_nodes,
            x_max,
            x_min,
            tol: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSolution {
    pub x_grid: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
    pub pi: Vec<f64>,
    pub iterations: usize,
    /// Max relative change of the last iteration.
    pub final_update: f64,
    pub update_history: Vec<f64>,
}

impl FdSolution {
    /// Central first derivative at interior nodes (zero at the ends).
    pub fn derivative(&self) -> Vec<f64> {
        let x = &self.x_grid;
        let n = x.len();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (self.v[i + 1] - self.v[i - 1]) / (x[i + 1] - x[i - 1]);
        }
        d
    }
}

fn grid(opts: &FdOptions) -> Vec<f64> {
    let n1 = opts.n_nodes - 1;
    let (a, b) = (opts.x_min.ln(), opts.x_max.ln());
    let mut x = Vec::with_capacity(opts.n_nodes);
    x.push(0.0);
    for i in 0..n1 {
        x.push((a + (b - a) * i as f64 / (n1 - 1) as f64).exp());
    }
    *x.last_mut().expect("non-empty") = opts.x_max;
    x
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Howard policy iteration on a geometric grid with Dirichlet data
/// `V(0) = 0` and `V(x_max) = a x_max^p`, where `a` is the homogeneous
/// coefficient.
///
/// First-order terms use central differences wherever the resulting matrix
/// stays monotone, and one-sided upwinding otherwise.
pub fn solve_fd(model: &Model, opts: &FdOptions) -> Result<FdSolution> {
    match model.regime() {
        Regime::Main | Regime::Homogeneous | Regime::MertonEquivalent => {}
        Regime::IllPosed => {
            return Err(Error::IllPosed {
                kappa: model.consts.kappa,
            })
        }
        Regime::Unsupported => {
            return Err(Error::Unsupported {
                kappa: model.consts.kappa,
                threshold: model.params.k + model.params.r,
            })
        }
    }
    if opts.n_nodes < 400 {
        return Err(Error::Domain {
            what: "n_nodes",
            value: opts.n_nodes as f64,
            domain: "[400, inf)".into(),
        });
    }
    if let Some((_, hi)) = model.bracket() {
        if opts.x_max < 5.0 * hi {
            return Err(Error::Domain {
                what: "x_max",
                value: opts.x_max,
                domain: format!("[{}, inf)", 5.0 * hi),
            });
        }
    }
    if !(opts.x_min > 0.0 && opts.x_min < opts.x_max) {
        return Err(Error::Domain {
            what: "x_min",
            value: opts.x_min,
            domain: format!("(0, {})", opts.x_max),
        });
    }

    let prm = model.params;
    let (p, beta, r, mu, k, ell) = (prm.p, prm.beta, prm.r, prm.mu, prm.k, prm.ell);
    let sig2 = prm.sigma * prm.sigma;
    let mf = model.consts.merton_fraction;
    let kappa = model.consts.kappa;
    let coef = homogeneous_coefficient(model)?;
    let pi_cap = 10.0 * mf * opts.x_max;

    let x = grid(opts);
    let n = x.len();
    let m = n - 2;
    let v_end = coef * pow_p(opts.x_max, p);
    let mut v: Vec<f64> = x.iter().map(|&xi| coef * pow_p(xi, p)).collect();
    let mut pi: Vec<f64> = x.iter().map(|&xi| mf * xi).collect();
    let mut c: Vec<f64> = x
        .iter()
        .map(|&xi| (kappa * xi).min(model.cap(xi)))
        .collect();
    c[0] = 0.0;
    pi[0] = 0.0;

    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut history = Vec::new();

    for iteration in 1..=opts.max_iterations {
        for j in 0..m {
            let i = j + 1;
            let hm = x[i] - x[i - 1];
            let hp = x[i + 1] - x[i];
            let d = 0.5 * sig2 * pi[i] * pi[i];
            let drift = r * x[i] + pi[i] * mu - c[i];
            let a_m = 2.0 * d / (hm * (hm + hp));
            let a_p = 2.0 * d / (hp * (hm + hp));
            let (mut b_m, mut b_p, mut b_0) = (
                -drift * hp / (hm * (hm + hp)),
                drift * hm / (hp * (hm + hp)),
                drift * (hp - hm) / (hm * hp),
            );
            if a_m + b_m < 0.0 || a_p + b_p < 0.0 {
                b_p = drift.max(0.0) / hp;
                b_m = (-drift).max(0.0) / hm;
                b_0 = -(b_p + b_m);
            }
            lower[j] = -(a_m + b_m);
            upper[j] = -(a_p + b_p);
            diag[j] = beta + a_m + a_p - b_0;
            rhs[j] = pow_p(c[i], p) / p;
        }
        rhs[m - 1] -= upper[m - 1] * v_end;
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);

        let mut update: f64 = 0.0;
        for j in 0..m {
            let new = rhs[j];
            update = update.max((new - v[j + 1]).abs() / new.abs().max(f64::MIN_POSITIVE));
            v[j + 1] = new;
        }
        v[0] = 0.0;
        v[n - 1] = v_end;
        history.push(update);

        // Policy improvement.
        for i in 1..n - 1 {
            let hm = x[i] - x[i - 1];
            let hp = x[i + 1] - x[i];
            let vx = (v[i + 1] - v[i - 1]) / (hm + hp);
            let vxx = 2.0 * ((v[i + 1] - v[i]) / hp - (v[i] - v[i - 1]) / hm) / (hm + hp);
            let opt = -mu * vx / (sig2 * vxx);
            pi[i] = if opt.is_finite() && vxx < 0.0 {
                opt.clamp(0.0, pi_cap)
            } else {
                pi_cap
            };
            let free = if vx > 0.0 {
                vx.powf(1.0 / (p - 1.0))
            } else {
                f64::INFINITY
            };
            c[i] = free.min(k * x[i] + ell);
        }

        if update <= opts.tol {
            for i in 1..n - 1 {
                let hm = x[i] - x[i - 1];
                let hp = x[i + 1] - x[i];
                let vxx = 2.0 * ((v[i + 1] - v[i]) / hp - (v[i] - v[i - 1]) / hm) / (hm + hp);
                if !(vxx < 0.0) {
                    return Err(Error::ConcavityLoss { node: i, x: x[i] });
                }
            }
            return Ok(FdSolution {
                x_grid: x,
                v,
                c,
                pi,
                iterations: iteration,
                final_update: update,
                update_history: history,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        last_update: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// The grid cell `[x_i, x_{i+1}]` where `V_x^(1/(p-1)) - (kx + l)` changes
/// sign.
pub fn extract_x_star_fd(model: &Model, fd: &FdSolution) -> Result<(f64, f64)> {
    let p = model.params.p;
    let vx = fd.derivative();
    let x = &fd.x_grid;
    let gap = |i: usize| vx[i].powf(1.0 / (p - 1.0)) - model.cap(x[i]);
    for i in 1..x.len() - 2 {
        let (g0, g1) = (gap(i), gap(i + 1));
        if g0 < 0.0 && g1 >= 0.0 {
            return Ok((x[i], x[i + 1]));
        }
    }
    Err(Error::NoCrossing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += lower[i] * x[i - 1];
            }
            if i < 3 {
                b[i] += upper[i] * x[i + 1];
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut b);
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_shape() {
        let opts = FdOptions {
            n_nodes: 400,
            x_max: 100.0,
            x_min: 1e-3,
            tol: 1e-10,
            max_iterations: 10,
        };
        let x = grid(&opts);
        assert_eq!(x.len(), 400);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[399], 100.0);
        assert!(x.windows(2).all(|w| w[0] < w[1]));
    }
}
