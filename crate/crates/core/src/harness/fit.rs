//! Log-log least squares.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `(log x, log y)` pairs.
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% confidence interval of the slope (Student t).
    pub slope_ci: (f64, f64),
    pub r2: f64,
    pub n_points: usize,
}

impl RateFit {
    pub fn contains_slope_in(&self, lo: f64, hi: f64) -> bool {
        self.slope >= lo && self.slope <= hi
    }
}

/// Ordinary least squares of `log y` against `log x`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    check_pairs(pairs)?;
    if let Some(&(x, _)) = pairs.iter().find(|(x, _)| !(*x > 0.0)) {
        return Err(Error::Fit(format!("non-positive abscissa {x}")));
    }
    ols(pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect())
}

/// Least squares of `log y` against `x` (exponential decay rates).
pub fn fit_exponential(pairs: &[(f64, f64)]) -> Result<RateFit> {
    check_pairs(pairs)?;
    ols(pairs.iter().map(|&(x, y)| (x, y.ln())).collect())
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", pairs.len())));
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !(*y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit(format!("non-positive or non-finite pair ({x}, {y})")));
    }
    Ok(())
}

fn ols(logs: Vec<(f64, f64)>) -> Result<RateFit> {
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        .max(0.0);
    let dof = n - 2.0;
    let slope_se = (sse / dof / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Fit(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        pairs: logs.clone(),
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - t * slope_se, slope + t * slope_se),
        r2,
        n_points: logs.len(),
    })
}
