//! Closed-form scalar profiles on `[0, 1]` given by coefficient tables.
//!
//! A profile evaluates
//! `c + Σ_k poly[k] z^k + Σ_k sin[k] sin((k+1)πz) + Σ_k cos[k] cos((k+1)πz)`
//! together with its first two derivatives.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profile {
    pub constant: f64,
    pub poly: Vec<f64>,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }

    /// `c0 + c1 z + c2 z^2 + ...`
    pub fn polynomial(coeffs: &[f64]) -> Self {
        Self { poly: coeffs.to_vec(), ..Self::default() }
    }

    pub fn with_sin(mut self, coeffs: &[f64]) -> Self {
        self.sin = coeffs.to_vec();
        self
    }

    pub fn with_cos(mut self, coeffs: &[f64]) -> Self {
        self.cos = coeffs.to_vec();
        self
    }

    pub fn value(&self, z: f64) -> f64 {
        self.eval(z).0
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.eval(z).1
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        self.eval(z).2
    }

    /// Value, first and second derivative.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        // Horner for the polynomial and its derivatives.
        let (mut p, mut dp, mut d2p) = (0.0, 0.0, 0.0);
        for &c in self.poly.iter().rev() {
            d2p = d2p * z + 2.0 * dp;
            dp = dp * z + p;
            p = p * z + c;
        }
        let mut f = self.constant + p;
        let mut df = dp;
        let mut d2f = d2p;
        for (k, &s) in self.sin.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            f += s * (w * z).sin();
            df += s * w * (w * z).cos();
            d2f -= s * w * w * (w * z).sin();
        }
        for (k, &c) in self.cos.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            f += c * (w * z).cos();
            df -= c * w * (w * z).sin();
            d2f -= c * w * w * (w * z).cos();
        }
        (f, df, d2f)
    }

    pub fn is_constant(&self) -> bool {
        self.poly.iter().skip(1).all(|&c| c == 0.0)
            && self.sin.iter().all(|&c| c == 0.0)
            && self.cos.iter().all(|&c| c == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_derivatives() {
        let p = Profile::polynomial(&[1.0, 2.0, 3.0]);
        let (f, df, d2f) = p.eval(2.0);
        assert_eq!(f, 1.0 + 4.0 + 12.0);
        assert_eq!(df, 2.0 + 12.0);
        assert_eq!(d2f, 6.0);
    }

    #[test]
    fn constant_offset_combines_with_polynomial() {
        let p = Profile { constant: 0.5, poly: vec![1.0, 1.0], ..Default::default() };
        let (f, df, d2f) = p.eval(3.0);
        assert_eq!(f, 4.5);
        assert_eq!(df, 1.0);
        assert_eq!(d2f, 0.0);
    }

    #[test]
    fn trig_terms_match_finite_differences() {
        let p = Profile::constant(1.0).with_sin(&[0.3, 0.1]).with_cos(&[0.0, 0.2]);
        let z = 0.37;
        let h = 1e-5;
        let fd1 = (p.value(z + h) - p.value(z - h)) / (2.0 * h);
        let fd2 = (p.value(z + h) - 2.0 * p.value(z) + p.value(z - h)) / (h * h);
        assert!((p.derivative(z) - fd1).abs() < 1e-8);
        assert!((p.second_derivative(z) - fd2).abs() < 1e-4);
    }
}
