//! Box-constrained Levenberg–Marquardt with forward-difference Jacobians.
//!
//! Iterates are kept feasible by projection. Parameters sitting on a bound
//! whose gradient pushes further outward are frozen for the step, so the
//! damped normal equations are solved only over the free set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iter: usize,
    pub max_fevals: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Stop when an accepted step reduces the cost by less than `ftol * cost`.
    pub ftol: f64,
    /// Stop when the projected step is below `xtol * (|x| + xtol)`.
    pub xtol: f64,
    /// Stop when the projected gradient's max-norm is below `gtol`.
    pub gtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            max_fevals: 5000,
            fd_step: 1e-6,
            ftol: 1e-12,
            xtol: 1e-10,
            gtol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmStatus {
    CostConverged,
    StepConverged,
    GradientConverged,
    MaxIterations,
    MaxFunctionEvaluations,
    /// The damping grew without finding a decrease.
    NoProgress,
}

impl LmStatus {
    pub fn converged(self) -> bool {
        matches!(
            self,
            LmStatus::CostConverged | LmStatus::StepConverged | LmStatus::GradientConverged
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub fevals: usize,
    pub status: LmStatus,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Forward-difference Jacobian at `x` (rows = residuals, columns = params).
///
/// Steps that would leave the box, or whose evaluation fails, are taken
/// backwards instead.
pub fn forward_jacobian<F>(
    f: &F,
    x: &[f64],
    r0: &[f64],
    lo: &[f64],
    hi: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let mut h = rel_step * x[j].abs().max(1.0);
        if x[j] + h > hi[j] {
            h = -h;
        }
        if x[j] + h < lo[j] {
            // box narrower than the step; nothing sensible to do
            h = 0.0;
        }
        if h == 0.0 {
            continue;
        }
        xp[j] = x[j] + h;
        let r = match f(&xp) {
            Ok(r) => r,
            Err(e) => {
                // retry on the other side before giving up
                h = -h;
                xp[j] = x[j] + h;
                if xp[j] < lo[j] || xp[j] > hi[j] {
                    return Err(e);
                }
                f(&xp)?
            }
        };
        for i in 0..m {
            jac[(i, j)] = (r[i] - r0[i]) / h;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

/// Minimises `||f(x)||²` subject to `lo <= x <= hi`.
///
/// A residual evaluation that fails at a trial point is treated as a rejected
/// step; a failure at the starting point is returned as an error.
pub fn minimize<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &LmConfig) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n, "bound length mismatch");
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut r = f(&x)?;
    let mut cost = sum_sq(&r);
    let mut fevals = 1;
    let mut mu: Option<f64> = None;
    let mut nu = 2.0;

    let finish = |x: Vec<f64>, r: Vec<f64>, cost, iterations, fevals, status| LmOutcome {
        params: x,
        residuals: r,
        cost,
        iterations,
        fevals,
        status,
    };

    if cost == 0.0 {
        return Ok(finish(x, r, cost, 0, fevals, LmStatus::CostConverged));
    }

    for iter in 1..=cfg.max_iter {
        let jac = forward_jacobian(&f, &x, &r, lo, hi, cfg.fd_step)?;
        fevals += n;
        let rv = DVector::from_column_slice(&r);
        let g = jac.tr_mul(&rv);
        let a = jac.tr_mul(&jac);

        let free: Vec<usize> = (0..n)
            .filter(|&j| !((x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0)))
            .collect();
        let pg = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        if free.is_empty() || pg <= cfg.gtol {
            return Ok(finish(x, r, cost, iter, fevals, LmStatus::GradientConverged));
        }

        let k = free.len();
        let mut af = DMatrix::zeros(k, k);
        let mut gf = DVector::zeros(k);
        for (p, &i) in free.iter().enumerate() {
            gf[p] = g[i];
            for (q, &j) in free.iter().enumerate() {
                af[(p, q)] = a[(i, j)];
            }
        }
        let diag: Vec<f64> = (0..k).map(|p| af[(p, p)].max(1e-12)).collect();
        let mut damping = mu.unwrap_or_else(|| 1e-3 * diag.iter().cloned().fold(0.0, f64::max));

        loop {
            let mut sys = af.clone();
            for p in 0..k {
                sys[(p, p)] += damping * diag[p];
            }
            let rhs = -&gf;
            let step = match sys.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match sys.lu().solve(&rhs) {
                    Some(s) => s,
                    None => {
                        damping *= nu;
                        nu *= 2.0;
                        if damping > 1e30 {
                            return Ok(finish(x, r, cost, iter, fevals, LmStatus::NoProgress));
                        }
                        continue;
                    }
                },
            };
            let mut x_new = x.clone();
            for (p, &j) in free.iter().enumerate() {
                x_new[j] += step[p];
            }
            project(&mut x_new, lo, hi);

            let dx: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let small = dx
                .iter()
                .zip(&x)
                .all(|(d, v)| d.abs() <= cfg.xtol * (v.abs() + cfg.xtol));
            if small {
                return Ok(finish(x, r, cost, iter, fevals, LmStatus::StepConverged));
            }

            if fevals >= cfg.max_fevals {
                return Ok(finish(x, r, cost, iter, fevals, LmStatus::MaxFunctionEvaluations));
            }
            fevals += 1;
            let trial = f(&x_new).ok().filter(|r| r.iter().all(|v| v.is_finite()));
            let accepted = trial.and_then(|r_new| {
                let c = sum_sq(&r_new);
                (c < cost).then_some((r_new, c))
            });
            match accepted {
                Some((r_new, cost_new)) => {
                    let dxv = DVector::from_vec(dx);
                    let predicted = -(2.0 * g.dot(&dxv) + dxv.dot(&(&a * &dxv)));
                    let actual = cost - cost_new;
                    let rho = if predicted > 0.0 { actual / predicted } else { 0.0 };
                    damping *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    mu = Some(damping);
                    x = x_new;
                    r = r_new;
                    let prev = cost;
                    cost = cost_new;
                    if actual <= cfg.ftol * prev {
                        return Ok(finish(x, r, cost, iter, fevals, LmStatus::CostConverged));
                    }
                    break;
                }
                None => {
                    damping *= nu;
                    nu *= 2.0;
                    if damping > 1e30 {
                        return Ok(finish(x, r, cost, iter, fevals, LmStatus::NoProgress));
                    }
                }
            }
        }
    }
    Ok(finish(x, r, cost, cfg.max_iter, fevals, LmStatus::MaxIterations))
}
