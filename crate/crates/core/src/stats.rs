//! Ordinary least squares, Pearson correlation and the Grubbs outlier test.

use serde::{Deserialize, Serialize};

pub use crate::special::{student_t_cdf, student_t_quantile};
use crate::special::student_t_upper;
use crate::{Error, Result};

/// Simple linear regression `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub ci95_slope: f64,
    /// Half-width of the 95% confidence interval on the intercept.
    pub ci95_intercept: f64,
    pub r2: f64,
    /// Two-tailed p-value of the slope (equal to the correlation p-value).
    pub p: f64,
    pub n_obs: usize,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    /// Two-tailed p-value.
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrubbsOutlier {
    pub index: usize,
    /// Studentized maximum deviation `G`.
    pub statistic: f64,
    pub critical: f64,
    /// Bonferroni-bounded two-sided p-value.
    pub p: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_pairs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }
    Ok(())
}

/// Centered sums `(Sxx, Syy, Sxy)`.
fn moments(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (mx, my, sxx, syy, sxy)
}

/// Two-tailed p-value of a correlation coefficient with `n - 2` degrees of freedom.
fn correlation_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    (2.0 * student_t_upper(t, df)).min(1.0)
}

/// Least-squares regression of `ys` on `xs`.
///
/// When `ys` is constant the fit is exact with zero slope; this is reported
/// as `r2 = 0`, `p = 1` (no linear association).
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<RegressionResult> {
    check_pairs(xs, ys)?;
    let n = xs.len();
    let (mx, my, sxx, syy, sxy) = moments(xs, ys);
    if sxx <= 0.0 {
        return Err(Error::Degenerate("regressor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let df = (n - 2) as f64;
    let s2 = sse / df;
    let se_slope = (s2 / sxx).sqrt();
    let sum_x2: f64 = xs.iter().map(|x| x * x).sum();
    let se_intercept = (s2 * sum_x2 / (n as f64 * sxx)).sqrt();
    let t_crit = student_t_quantile(0.975, df);

    let (r2, p) = if syy <= 0.0 {
        (0.0, 1.0)
    } else {
        let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
        (rho * rho, correlation_p(rho, n))
    };
    Ok(RegressionResult {
        slope,
        intercept,
        ci95_slope: t_crit * se_slope,
        ci95_intercept: t_crit * se_intercept,
        r2,
        p,
        n_obs: n,
    })
}

/// Sample Pearson correlation with its two-tailed p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check_pairs(xs, ys)?;
    let (_, _, sxx, syy, sxy) = moments(xs, ys);
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined for a constant series".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        rho,
        p: correlation_p(rho, xs.len()),
        n: xs.len(),
    })
}

/// Two-sided critical value of the Grubbs statistic.
pub fn grubbs_critical(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    let df = nf - 2.0;
    let t = student_t_quantile(1.0 - alpha / (2.0 * nf), df);
    if t.is_infinite() {
        return (nf - 1.0) / nf.sqrt();
    }
    (nf - 1.0) / nf.sqrt() * (t * t / (df + t * t)).sqrt()
}

/// Two-sided single-outlier Grubbs test.
///
/// Returns the most extreme observation when its studentized deviation
/// exceeds the critical value at level `alpha`.
pub fn grubbs(values: &[f64], alpha: f64) -> Result<Option<GrubbsOutlier>> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "Grubbs test needs at least 3 values, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(
            "non-finite value or alpha outside [0, 1]".into(),
        ));
    }
    let Some((index, statistic)) = grubbs_statistic(values) else {
        return Ok(None);
    };
    if alpha == 0.0 {
        return Ok(None);
    }
    let critical = grubbs_critical(n, alpha);
    if statistic <= critical {
        return Ok(None);
    }
    Ok(Some(GrubbsOutlier {
        index,
        statistic,
        critical,
        p: grubbs_p_value(statistic, n),
    }))
}

/// Index and value of `max |v - mean| / s`, or `None` when `s = 0`.
pub fn grubbs_statistic(values: &[f64]) -> Option<(usize, f64)> {
    let n = values.len() as f64;
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let s = var.sqrt();
    if !(s > 0.0) {
        return None;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.iter().enumerate() {
        let g = (v - m).abs() / s;
        if g > best.1 {
            best = (i, g);
        }
    }
    Some(best)
}

/// Upper bound on the two-sided p-value of a Grubbs statistic.
pub fn grubbs_p_value(g: f64, n: usize) -> f64 {
    let nf = n as f64;
    let denom = (nf - 1.0).powi(2) - nf * g * g;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = (nf * (nf - 2.0) * g * g / denom).sqrt();
    (2.0 * nf * student_t_upper(t, nf - 2.0)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_line() {
        let xs = [0.0, 1.0, 2.0, 3.5, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let r = ols(&xs, &ys).unwrap();
        assert_abs_diff_eq!(r.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.r2, 1.0, epsilon = 1e-14);
        assert_eq!(r.p, 0.0);
        assert_eq!(r.n_obs, 5);
        let c = pearson(&xs, &ys).unwrap();
        assert_abs_diff_eq!(c.rho, 1.0, epsilon = 1e-14);
        assert_eq!(c.p, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            ols(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(ols(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        let flat = ols(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((flat.slope, flat.r2, flat.p), (0.0, 0.0, 1.0));
    }

    #[test]
    fn regression_p_equals_correlation_p() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [1.3, 1.9, 3.4, 3.8, 5.5, 5.2];
        let r = ols(&xs, &ys).unwrap();
        let c = pearson(&xs, &ys).unwrap();
        assert_abs_diff_eq!(r.p, c.p, epsilon = 1e-15);
        assert_abs_diff_eq!(r.r2, c.rho * c.rho, epsilon = 1e-15);
    }

    #[test]
    fn grubbs_degenerate_and_small() {
        assert!(grubbs(&[3.0; 6], 0.05).unwrap().is_none());
        assert!(matches!(
            grubbs(&[1.0, 2.0], 0.05),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grubbs_flags_obvious_outlier() {
        let out = grubbs(&[0.0, 0.0, 0.0, 0.0, 10.0], 0.05).unwrap().unwrap();
        assert_eq!(out.index, 4);
        assert!(out.p < 0.05);
        assert!(grubbs(&[0.0, 0.0, 0.0, 0.0, 10.0], 0.0).unwrap().is_none());
    }

    #[test]
    fn grubbs_critical_table_values() {
        // Published two-sided critical values at alpha = 0.05.
        for (n, g) in [(5, 1.715), (10, 2.290), (20, 2.709), (30, 2.908)] {
            assert_abs_diff_eq!(grubbs_critical(n, 0.05), g, epsilon = 1e-3);
        }
    }

    #[test]
    fn decision_matches_p_value() {
        let v = [2.1, 2.3, 1.9, 2.0, 2.2, 3.1, 2.05];
        for alpha in [0.01, 0.05, 0.1, 0.2] {
            let got = grubbs(&v, alpha).unwrap();
            let (_, g) = grubbs_statistic(&v).unwrap();
            let p = grubbs_p_value(g, v.len());
            assert_eq!(got.is_some(), p < alpha, "alpha={alpha} p={p}");
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-100.0..100.0f64, 4..30),
            noise in proptest::collection::vec(-1.0..1.0f64, 30),
            scale in 0.1..10.0f64,
            shift in -50.0..50.0f64,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.3 * x + 10.0 * e).collect();
            prop_assume!(pearson(&xs, &ys).is_ok());
            let base = pearson(&xs, &ys).unwrap();
            let xs2: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let moved = pearson(&xs2, &ys).unwrap();
            prop_assert!((base.rho - moved.rho).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((pearson(&xs, &neg).unwrap().rho + base.rho).abs() < 1e-12);
        }

        #[test]
        fn ols_residuals_orthogonal(
            xs in proptest::collection::vec(-10.0..10.0f64, 3..40),
            noise in proptest::collection::vec(-1.0..1.0f64, 40),
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 1.5 - 0.7 * x + e).collect();
            prop_assume!(ols(&xs, &ys).is_ok());
            let r = ols(&xs, &ys).unwrap();
            let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - r.predict(*x)).collect();
            let scale: f64 = ys.iter().map(|y| y.abs()).sum::<f64>().max(1.0);
            let xscale: f64 = xs.iter().zip(&ys).map(|(x, y)| (x * y).abs()).sum::<f64>().max(1.0);
            prop_assert!(res.iter().sum::<f64>().abs() < 1e-9 * scale);
            prop_assert!(res.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-9 * xscale);
            prop_assert!((0.0..=1.0).contains(&r.r2));
            prop_assert!((0.0..=1.0).contains(&r.p));
        }

        #[test]
        fn grubbs_reports_max_deviation(values in proptest::collection::vec(-5.0..5.0f64, 3..25),
                                        alpha in 0.0..0.5f64) {
            if let Some(out) = grubbs(&values, alpha).unwrap() {
                let (idx, _) = grubbs_statistic(&values).unwrap();
                prop_assert_eq!(out.index, idx);
            }
            prop_assert!(grubbs(&values, 0.0).unwrap().is_none());
        }

        #[test]
        fn t_cdf_symmetric_and_monotone(t in -50.0..50.0f64, dt in 0.0..5.0f64, df in 0.3..200.0f64) {
            let c = student_t_cdf(t, df);
            prop_assert!((c + student_t_cdf(-t, df) - 1.0).abs() < 1e-12);
            prop_assert!(student_t_cdf(t + dt, df) >= c);
        }
    }
}
