//! Log-log regression for convergence rates.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Least-squares fit of `y ≈ C x^q` on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub constant: f64,
    pub r_squared: f64,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.constant * x.powf(self.exponent)
    }
}

pub fn power_law(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(format!("need at least two paired samples, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit("samples must be positive and finite".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let q = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(PowerFit { exponent: q, constant: (my - q * mx).exp(), r_squared })
}

/// Power-law fit after subtracting a constant floor from every sample.
/// Samples that do not rise above twice the floor are dropped.
pub fn power_law_above_floor(x: &[f64], y: &[f64], floor: f64) -> Result<PowerFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(_, &v)| v > 2.0 * floor).map(|(&a, &b)| (a, b - floor)).unzip();
    power_law(&xs, &ys)
}

/// Observed order from two refinement levels with ratio `refinement`.
pub fn observed_order(coarse_error: f64, fine_error: f64, refinement: f64) -> f64 {
    (coarse_error / fine_error).ln() / refinement.ln()
}
