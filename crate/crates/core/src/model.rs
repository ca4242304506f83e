//! Contagion vector field and individual-utility laws.
//!
//! Prevalence `x` evolves as
//!
//! ```text
//! dx/dt = b [ (1 - x) x^a u_x  -  x (1 - x)^a (1 - u_x) ]
//! ```
//!
//! where `u_x(t)` is the individual utility of smoking. The utility of not
//! smoking is the complement `1 - u_x` and is never stored separately.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-country ("local") parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountryParams {
    /// Relative-conformity exponent.
    pub a: f64,
    /// Prevalence at `t0`.
    pub x0: f64,
    /// Individual utility with no knowledge of health effects.
    pub u0: f64,
    /// Individual utility with perfect knowledge of health effects.
    pub u_inf: f64,
    /// First year of the estimated prevalence record.
    pub t0: f64,
    /// Switch year for the step utility law; unused by the other laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
}

impl CountryParams {
    pub fn new(a: f64, x0: f64, u0: f64, u_inf: f64, t0: f64) -> Self {
        Self {
            a,
            x0,
            u0,
            u_inf,
            t0,
            t_star: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("a", self.a)?;
        check_finite("x0", self.x0)?;
        check_finite("u0", self.u0)?;
        check_finite("u_inf", self.u_inf)?;
        check_finite("t0", self.t0)?;
        check_range("a", self.a, 0.0, 2.0)?;
        check_range("x0", self.x0, 0.0, 1.0)?;
        check_range("u0", self.u0, 0.0, 1.0)?;
        check_range("u_inf", self.u_inf, 0.0, 1.0)?;
        if let Some(ts) = self.t_star {
            check_finite("t_star", ts)?;
        }
        Ok(())
    }
}

/// Parameters shared by every country.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalParams {
    /// Timescale constant (1/year).
    pub b: f64,
    /// Per-article discount factor.
    pub delta: f64,
}

impl UniversalParams {
    pub fn new(b: f64, delta: f64) -> Self {
        Self { b, delta }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("b", self.b)?;
        check_finite("delta", self.delta)?;
        check_range("b", self.b, 0.0, 2.0)?;
        check_range("delta", self.delta, 0.0, 1.0)
    }
}

/// Annual and cumulative publication counts on the health effects of smoking.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticleSeries {
    years: Vec<i32>,
    annual: Vec<u64>,
    cumulative: Vec<u64>,
}

impl ArticleSeries {
    /// Builds a series, checking that years increase strictly and that each
    /// cumulative entry equals the previous one plus that year's count.
    ///
    /// On a consistency failure the returned error carries the offending
    /// *row index* in `line` (1-based); parsers translate it to file lines.
    pub fn new(years: Vec<i32>, annual: Vec<u64>, cumulative: Vec<u64>) -> Result<Self> {
        if years.is_empty() {
            return Err(Error::InvalidArgument("article series is empty".into()));
        }
        if years.len() != annual.len() || years.len() != cumulative.len() {
            return Err(Error::InvalidArgument(
                "article series columns differ in length".into(),
            ));
        }
        for k in 1..years.len() {
            if years[k] <= years[k - 1] {
                return Err(Error::Validation {
                    line: k + 1,
                    msg: format!("year {} does not follow {}", years[k], years[k - 1]),
                });
            }
            if cumulative[k] != cumulative[k - 1] + annual[k] {
                return Err(Error::Validation {
                    line: k + 1,
                    msg: format!(
                        "cumulative count inconsistent at year {}: {} + {} != {}",
                        years[k],
                        cumulative[k - 1],
                        annual[k],
                        cumulative[k]
                    ),
                });
            }
        }
        Ok(Self {
            years,
            annual,
            cumulative,
        })
    }

    /// Builds a series from annual counts, accumulating from zero.
    pub fn from_annual(years: Vec<i32>, annual: Vec<u64>) -> Result<Self> {
        let cumulative = annual
            .iter()
            .scan(0u64, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect();
        Self::new(years, annual, cumulative)
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn annual(&self) -> &[u64] {
        &self.annual
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    /// Cumulative count `n(t)` at a real-valued year.
    ///
    /// Linear interpolation between records, zero before the first record and
    /// constant extrapolation after the last.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        let first = f64::from(self.years[0]);
        if t < first {
            return 0.0;
        }
        let last = self.years.len() - 1;
        if t >= f64::from(self.years[last]) {
            return self.cumulative[last] as f64;
        }
        // first k with years[k] > t; k >= 1 here
        let k = self.years.partition_point(|&y| f64::from(y) <= t);
        let (y0, y1) = (f64::from(self.years[k - 1]), f64::from(self.years[k]));
        let (n0, n1) = (self.cumulative[k - 1] as f64, self.cumulative[k] as f64);
        n0 + (n1 - n0) * (t - y0) / (y1 - y0)
    }
}

/// `n(t)` for a series; rejects non-finite `t`.
pub fn cumulative_articles(series: &ArticleSeries, t: f64) -> Result<f64> {
    check_finite("t", t)?;
    if series.is_empty() {
        return Err(Error::InvalidArgument("article series is empty".into()));
    }
    Ok(series.cumulative_at(t))
}

/// The three individual-utility laws.
#[derive(Debug, Clone)]
pub enum UtilityModel {
    /// `u_inf + delta^n(t) (u0 - u_inf)`.
    Discounted {
        u0: f64,
        u_inf: f64,
        delta: f64,
        articles: Arc<ArticleSeries>,
    },
    Constant {
        u: f64,
    },
    /// `u0` before `t_star`, `u_inf` from `t_star` on.
    Step {
        u0: f64,
        u_inf: f64,
        t_star: f64,
    },
}

impl UtilityModel {
    pub fn utility_at(&self, t: f64) -> f64 {
        match self {
            UtilityModel::Discounted {
                u0,
                u_inf,
                delta,
                articles,
            } => {
                let n = articles.cumulative_at(t);
                u_inf + discount_factor(*delta, n) * (u0 - u_inf)
            }
            UtilityModel::Constant { u } => *u,
            UtilityModel::Step { u0, u_inf, t_star } => {
                if t < *t_star {
                    *u0
                } else {
                    *u_inf
                }
            }
        }
    }

    /// Utility at `t` on the integration piece whose midpoint is `piece_mid`.
    ///
    /// Identical to [`utility_at`](Self::utility_at) except at a step
    /// discontinuity, where the side is chosen by the piece rather than by `t`.
    #[inline]
    pub fn utility_on_piece(&self, t: f64, piece_mid: f64) -> f64 {
        match self {
            UtilityModel::Step { u0, u_inf, t_star } => {
                if piece_mid < *t_star {
                    *u0
                } else {
                    *u_inf
                }
            }
            _ => self.utility_at(t),
        }
    }

    /// Times in the open interval `(t_start, t_end)` where `u_x` is not smooth.
    ///
    /// Integrators restart at these points so that each step sees a smooth
    /// right-hand side.
    pub fn breakpoints(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        match self {
            UtilityModel::Discounted { articles, .. } => articles
                .years()
                .iter()
                .map(|&y| f64::from(y))
                .filter(|&y| y > t_start && y < t_end)
                .collect(),
            UtilityModel::Constant { .. } => Vec::new(),
            UtilityModel::Step { t_star, .. } => {
                if *t_star > t_start && *t_star < t_end {
                    vec![*t_star]
                } else {
                    Vec::new()
                }
            }
        }
    }
}

/// Utility at `t`, rejecting non-finite times.
pub fn utility_at(model: &UtilityModel, t: f64) -> Result<f64> {
    check_finite("t", t)?;
    Ok(model.utility_at(t))
}

/// `delta^n` evaluated as `exp(n ln delta)`, with `0^0 = 1`.
pub fn discount_factor(delta: f64, n: f64) -> f64 {
    if n == 0.0 || delta == 1.0 {
        1.0
    } else if delta == 0.0 {
        0.0
    } else {
        (n * delta.ln()).exp()
    }
}

/// Contagion vector field without argument checks; `x` is clamped to `[0, 1]`.
#[inline]
pub fn rhs_unchecked(x: f64, u_x: f64, a: f64, b: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let y = 1.0 - x;
    b * (y * x.powf(a) * u_x - x * y.powf(a) * (1.0 - u_x))
}

/// Rate of change of prevalence.
pub fn rhs(x: f64, u_x: f64, a: f64, b: f64) -> Result<f64> {
    check_finite("x", x)?;
    check_finite("u_x", u_x)?;
    check_finite("a", a)?;
    check_finite("b", b)?;
    if a < 0.0 || b < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "a and b must be non-negative (a = {a}, b = {b})"
        )));
    }
    Ok(rhs_unchecked(x, u_x, a, b))
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} is not finite ({v})")))
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} = {v} outside [{lo}, {hi}]"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series() -> ArticleSeries {
        ArticleSeries::new(vec![1950, 1951, 1953], vec![100, 10, 4], vec![100, 110, 114]).unwrap()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(rhs(0.0, 0.7, 1.2, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(rhs(0.5, 0.5, 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rhs(0.1, 0.55, 1.0, 1.0).unwrap(), 0.009, epsilon = 1e-15);
    }

    #[test]
    fn rhs_matches_high_precision_reference() {
        let reference: f64 = include_str!("../tests/data/rhs_reference.txt")
            .trim()
            .parse()
            .unwrap();
        let got = rhs(0.25, 0.6, 1.5, 1.049).unwrap();
        assert!((got - reference).abs() <= 1e-15 * reference.abs().max(1.0));
    }

    #[test]
    fn rhs_rejects_non_finite() {
        assert!(matches!(
            rhs(f64::NAN, 0.5, 1.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(rhs(0.5, f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn rhs_clamps_outside_unit_interval() {
        assert_eq!(rhs(1.0 + 1e-12, 0.3, 1.5, 1.0).unwrap(), 0.0);
        assert_eq!(rhs(-1e-12, 0.3, 1.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn discounted_utility_examples() {
        let art = Arc::new(series());
        let m = UtilityModel::Discounted {
            u0: 0.51,
            u_inf: 0.49,
            delta: 0.9,
            articles: art.clone(),
        };
        assert_eq!(m.utility_at(1900.0), 0.51);
        let one = UtilityModel::Discounted {
            u0: 0.51,
            u_inf: 0.49,
            delta: 1.0,
            articles: art.clone(),
        };
        assert_eq!(one.utility_at(1953.0), 0.51);
        let zero = UtilityModel::Discounted {
            u0: 0.51,
            u_inf: 0.49,
            delta: 0.0,
            articles: art,
        };
        assert_eq!(zero.utility_at(1953.0), 0.49);
        assert_eq!(zero.utility_at(1900.0), 0.51);

        let ten = Arc::new(ArticleSeries::new(vec![2000], vec![10], vec![10]).unwrap());
        let m = UtilityModel::Discounted {
            u0: 0.51,
            u_inf: 0.49,
            delta: 0.9,
            articles: ten,
        };
        assert_abs_diff_eq!(
            m.utility_at(2000.0),
            0.49 + 0.9f64.powi(10) * 0.02,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(m.utility_at(2000.0), 0.496974, epsilon = 1e-6);
    }

    #[test]
    fn step_and_constant_utility() {
        let s = UtilityModel::Step {
            u0: 0.6,
            u_inf: 0.4,
            t_star: 1960.0,
        };
        assert_eq!(s.utility_at(1959.999), 0.6);
        assert_eq!(s.utility_at(1960.0), 0.4);
        assert_eq!(s.breakpoints(1900.0, 2000.0), vec![1960.0]);
        assert!(s.breakpoints(1960.0, 2000.0).is_empty());
        assert_eq!(UtilityModel::Constant { u: 0.3 }.utility_at(1.0), 0.3);
        assert!(utility_at(&s, f64::NAN).is_err());
    }

    #[test]
    fn interpolation() {
        let s = series();
        assert_eq!(cumulative_articles(&s, 1951.0).unwrap(), 110.0);
        assert_eq!(cumulative_articles(&s, 1950.5).unwrap(), 105.0);
        assert_eq!(cumulative_articles(&s, 1952.0).unwrap(), 112.0);
        assert_eq!(cumulative_articles(&s, 1949.9).unwrap(), 0.0);
        assert_eq!(cumulative_articles(&s, 2020.0).unwrap(), 114.0);
        assert!(cumulative_articles(&s, f64::NAN).is_err());
    }

    #[test]
    fn series_validation() {
        let err = ArticleSeries::new(vec![1950, 1951], vec![10, 5], vec![100, 110]).unwrap_err();
        assert!(err.to_string().contains("1951"));
        assert!(ArticleSeries::new(vec![], vec![], vec![]).is_err());
        let s = ArticleSeries::from_annual(vec![1, 2, 3], vec![1, 2, 3]).unwrap();
        assert_eq!(s.cumulative(), &[1, 3, 6]);
    }

    #[test]
    fn log_space_discount_matches_repeated_multiplication() {
        for &delta in &[0.4, 0.6, 0.8, 0.9, 0.99, 0.998, 0.9995] {
            let mut prod = 1.0f64;
            for n in 1..=1000u32 {
                prod *= delta;
                if prod < f64::MIN_POSITIVE {
                    // subnormal: relative error is no longer meaningful
                    break;
                }
                let got = discount_factor(delta, f64::from(n));
                assert!(
                    ((got - prod) / prod).abs() < 1e-12,
                    "delta={delta} n={n} got={got} prod={prod}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn equilibria_at_boundaries(u in 0.0..=1.0f64, a in 1e-3..2.0f64, b in 0.0..2.0f64) {
            prop_assert_eq!(rhs_unchecked(0.0, u, a, b), 0.0);
            prop_assert_eq!(rhs_unchecked(1.0, u, a, b), 0.0);
        }

        #[test]
        fn swap_symmetry(x in 0.0..=1.0f64, u in 0.0..=1.0f64, a in 0.0..2.0f64, b in 0.0..2.0f64) {
            let lhs = rhs_unchecked(x, u, a, b);
            let rhs_ = -rhs_unchecked(1.0 - x, 1.0 - u, a, b);
            prop_assert!((lhs - rhs_).abs() <= 1e-14);
        }

        #[test]
        fn increasing_in_utility(x in 1e-3..0.999f64, u in 0.0..0.99f64, du in 1e-3..0.01f64,
                                 a in 0.0..2.0f64, b in 1e-2..2.0f64) {
            prop_assert!(rhs_unchecked(x, u + du, a, b) > rhs_unchecked(x, u, a, b));
        }

        #[test]
        fn discounted_utility_bounded_and_monotone(u0 in 0.0..=1.0f64, u_inf in 0.0..=1.0f64,
                                                   delta in 0.0..=1.0f64, t in 1940.0..1960.0f64,
                                                   dt in 0.0..5.0f64) {
            let m = UtilityModel::Discounted { u0, u_inf, delta, articles: Arc::new(series()) };
            let (lo, hi) = (u0.min(u_inf), u0.max(u_inf));
            let v = m.utility_at(t);
            prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
            if u0 >= u_inf {
                prop_assert!(m.utility_at(t + dt) <= v + 1e-15);
            }
        }
    }
}
