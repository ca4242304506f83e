//! Adaptive Dormand–Prince 5(4) integration of the scalar prevalence ODE.
//!
//! Steps are accepted when the embedded error estimate satisfies
//! `|err| <= atol + rtol * max(|x_n|, |x_{n+1}|)`. Values at observation
//! times falling inside an accepted step come from the method's 4th-order
//! continuous extension. The integration is split
//! at the utility law's breakpoints so that no step straddles a kink or jump.

use serde::{Deserialize, Serialize};

use crate::model::{rhs_unchecked, CountryParams, UniversalParams, UtilityModel};
use crate::{Error, Result};

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;
const MAX_STEPS: usize = 1_000_000;

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Shampine's 4th-order continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step, in years.
    pub h_init: f64,
    /// Maximum step, in years.
    pub h_max: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-9,
            h_init: 0.1,
            h_max: 5.0,
        }
    }
}

impl IntegratorConfig {
    /// Tolerances used inside the least-squares fits, where finite-difference
    /// Jacobians need the solution to be smooth in the parameters.
    pub fn fitting() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.h_init > 0.0
            && self.h_init <= self.h_max
            && self.h_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "bad integrator config: {self:?}"
            )))
        }
    }
}

/// Model prevalence at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

/// Solves the contagion ODE from `(params.t0, params.x0)` and reports the
/// solution at `eval_times`.
pub fn integrate(
    params: &CountryParams,
    universal: &UniversalParams,
    utility: &UtilityModel,
    eval_times: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let (a, b) = (params.a, universal.b);
    if !(a.is_finite() && b.is_finite() && params.x0.is_finite() && params.t0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite parameters: {params:?} {universal:?}"
        )));
    }
    let t_end = eval_times.last().copied().unwrap_or(params.t0);
    let breaks = utility.breakpoints(params.t0, t_end);
    let values = solve_scalar(
        |t, x, piece_mid| rhs_unchecked(x, utility.utility_on_piece(t, piece_mid), a, b),
        params.t0,
        params.x0,
        eval_times,
        &breaks,
        config,
    )?;
    Ok(Trajectory {
        times: eval_times.to_vec(),
        values,
    })
}

/// Generic adaptive solve of `x' = f(t, x)` on pieces separated by
/// `breakpoints`. The closure's third argument is the midpoint of the piece
/// being integrated, letting piecewise-defined fields pick the correct side
/// of a discontinuity.
pub fn solve_scalar<F>(
    f: F,
    t0: f64,
    x0: f64,
    eval_times: &[f64],
    breakpoints: &[f64],
    config: &IntegratorConfig,
) -> Result<Vec<f64>>
where
    F: Fn(f64, f64, f64) -> f64,
{
    config.validate()?;
    let Some(&t_end) = eval_times.last() else {
        return Err(Error::InvalidArgument("no evaluation times".into()));
    };
    if eval_times[0] < t0 {
        return Err(Error::InvalidArgument(format!(
            "first evaluation time {} precedes t0 = {t0}",
            eval_times[0]
        )));
    }
    if eval_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "evaluation times must be strictly increasing".into(),
        ));
    }

    let mut out = Vec::with_capacity(eval_times.len());
    let mut next_eval = 0;
    while next_eval < eval_times.len() && eval_times[next_eval] <= t0 {
        out.push(x0);
        next_eval += 1;
    }

    let mut knots: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&s| s > t0 && s < t_end)
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots.push(t_end);

    let mut t = t0;
    let mut x = x0;
    let mut h = config.h_init.min(config.h_max);
    let mut steps = 0usize;

    for &piece_end in &knots {
        if piece_end <= t {
            continue;
        }
        let mid = 0.5 * (t + piece_end);
        let field = |tt: f64, xx: f64| f(tt, xx, mid);
        let mut k1 = field(t, x);
        let mut last_failed = false;

        while t < piece_end {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integration {
                    t,
                    msg: "step budget exhausted".into(),
                });
            }
            let min_h = 16.0 * f64::EPSILON * t.abs().max(1.0);
            let remaining = piece_end - t;
            let mut last = false;
            if h >= remaining || remaining - h < min_h {
                h = remaining;
                last = true;
            }
            if h < min_h && !last {
                return Err(Error::Integration {
                    t,
                    msg: format!("step size underflow (h = {h:e})"),
                });
            }

            let k2 = field(t + C2 * h, x + h * A21 * k1);
            let k3 = field(t + C3 * h, x + h * (A31 * k1 + A32 * k2));
            let k4 = field(t + C4 * h, x + h * (A41 * k1 + A42 * k2 + A43 * k3));
            let k5 = field(
                t + C5 * h,
                x + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
            );
            let k6 = field(
                t + h,
                x + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
            );
            let x_new = x + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
            let k7 = field(t + h, x_new);
            let err_abs =
                (h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).abs();
            let scale = config.atol + config.rtol * x.abs().max(x_new.abs());
            let err = err_abs / scale;

            if !x_new.is_finite() || !err.is_finite() {
                return Err(Error::Integration {
                    t,
                    msg: "non-finite state".into(),
                });
            }

            if err <= 1.0 {
                let t_new = if last { piece_end } else { t + h };
                if next_eval < eval_times.len() && eval_times[next_eval] <= t_new {
                    let dense = DenseStep::new(
                        t,
                        h,
                        x,
                        x_new,
                        h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7),
                        k1,
                        k7,
                    );
                    while next_eval < eval_times.len() && eval_times[next_eval] <= t_new {
                        let te = eval_times[next_eval];
                        out.push(if te == t_new { x_new } else { dense.eval(te) });
                        next_eval += 1;
                    }
                }
                t = t_new;
                x = x_new;
                k1 = k7;
                let mut factor = if err == 0.0 {
                    MAX_SCALE
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
                };
                if last_failed {
                    factor = factor.min(1.0);
                }
                last_failed = false;
                if !last {
                    h = (h * factor).min(config.h_max);
                }
            } else {
                let factor = (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, 1.0);
                h *= factor;
                last_failed = true;
                if h < min_h {
                    return Err(Error::Integration {
                        t,
                        msg: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
    }
    debug_assert_eq!(out.len(), eval_times.len());
    Ok(out)
}

/// Continuous extension of one accepted step.
struct DenseStep {
    t: f64,
    h: f64,
    r: [f64; 5],
}

impl DenseStep {
    fn new(t: f64, h: f64, x: f64, x_new: f64, dk: f64, k1: f64, k7: f64) -> Self {
        let diff = x_new - x;
        let bspl = h * k1 - diff;
        Self {
            t,
            h,
            r: [x, diff, bspl, diff - h * k7 - bspl, dk],
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let s = (t - self.t) / self.h;
        let s1 = 1.0 - s;
        let r = &self.r;
        r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic(x0: f64, r: f64, dt: f64) -> f64 {
        let e = (r * dt).exp();
        x0 * e / (1.0 - x0 + x0 * e)
    }

    #[test]
    fn equilibria_stay_put() {
        let u = UtilityModel::Constant { u: 0.7 };
        let uni = UniversalParams::new(1.0, 0.99);
        let times: Vec<f64> = (0..50).map(|k| 1920.0 + f64::from(k)).collect();
        for x0 in [0.0, 1.0] {
            let p = CountryParams::new(1.3, x0, 0.7, 0.7, 1920.0);
            let tr = integrate(&p, &uni, &u, &times, &IntegratorConfig::default()).unwrap();
            assert!(tr.values.iter().all(|&v| v == x0));
        }
    }

    #[test]
    fn logistic_special_case() {
        let u = 0.6;
        let b = 1.049;
        let p = CountryParams::new(1.0, 0.05, u, u, 1920.0);
        let times: Vec<f64> = (0..=100).map(|k| 1920.0 + f64::from(k)).collect();
        let tr = integrate(
            &p,
            &UniversalParams::new(b, 1.0),
            &UtilityModel::Constant { u },
            &times,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let r = b * (2.0 * u - 1.0);
        for (t, v) in tr.iter() {
            assert!((v - logistic(0.05, r, t - 1920.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_output_between_steps() {
        // large h_max so many evaluation times fall inside single steps
        let cfg = IntegratorConfig {
            h_max: 20.0,
            ..IntegratorConfig::default()
        };
        let times: Vec<f64> = (0..400).map(|k| 0.05 + 0.1 * f64::from(k)).collect();
        let vals = solve_scalar(|_, x, _| 0.3 * x * (1.0 - x), 0.0, 0.1, &times, &[], &cfg).unwrap();
        for (t, v) in times.iter().zip(&vals) {
            assert!((v - logistic(0.1, 0.3, *t)).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn rejects_bad_eval_times() {
        let cfg = IntegratorConfig::default();
        let f = |_: f64, x: f64, _: f64| -x;
        assert!(solve_scalar(f, 0.0, 1.0, &[], &[], &cfg).is_err());
        assert!(solve_scalar(f, 0.0, 1.0, &[-1.0, 1.0], &[], &cfg).is_err());
        assert!(solve_scalar(f, 0.0, 1.0, &[1.0, 1.0], &[], &cfg).is_err());
        let bad = IntegratorConfig {
            h_init: 10.0,
            h_max: 1.0,
            ..cfg
        };
        assert!(solve_scalar(f, 0.0, 1.0, &[1.0], &[], &bad).is_err());
    }

    #[test]
    fn blow_up_reports_failure_time() {
        // x' = x^2 from x(0)=1 blows up at t=1
        let err = solve_scalar(
            |_, x, _| x * x,
            0.0,
            1.0,
            &[2.0],
            &[],
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Integration { t, .. } => assert!(t > 0.9 && t < 1.01, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_discontinuity_is_respected() {
        // x' = u(t) with u jumping from 1 to 0 at t=0.5
        let util = UtilityModel::Step {
            u0: 1.0,
            u_inf: 0.0,
            t_star: 0.5,
        };
        let vals = solve_scalar(
            |t, _, mid| util.utility_on_piece(t, mid),
            0.0,
            0.0,
            &[0.25, 0.5, 1.0],
            &util.breakpoints(0.0, 1.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!((vals[0] - 0.25).abs() < 1e-12);
        assert!((vals[1] - 0.5).abs() < 1e-12);
        assert!((vals[2] - 0.5).abs() < 1e-12);
    }
}
