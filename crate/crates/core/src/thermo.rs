//! Barotropic pressure laws, the pressure potential and the relative
//! energy integrand.

use crate::error::{Error, Result};
use crate::quadrature;
use serde::{Deserialize, Serialize};

/// Monotone cubic (Fritsch–Carlson) interpolant, constant beyond its knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneSpline {
    pub fn new(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Domain("a spline factor needs at least two knots".into()));
        }
        let x: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let y: Vec<f64> = knots.iter().map(|k| k.1).collect();
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("spline knots must be strictly increasing in density".into()));
        }
        if y.iter().any(|&v| !(v > 0.0)) || y.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("spline factor values must be positive and non-decreasing".into()));
        }
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut m = vec![0.0; n];
        // zero end slopes keep the factor C¹ with its constant extension
        for i in 1..n - 1 {
            m[i] = if delta[i - 1] * delta[i] > 0.0 { 0.5 * (delta[i - 1] + delta[i]) } else { 0.0 };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
            } else {
                let a = m[i] / delta[i];
                let b = m[i + 1] / delta[i];
                let s = a * a + b * b;
                if s > 9.0 {
                    let t = 3.0 / s.sqrt();
                    m[i] = t * a * delta[i];
                    m[i + 1] = t * b * delta[i];
                }
            }
        }
        Ok(Self { x, y, slopes: m })
    }

    /// Value and derivative.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let n = self.x.len();
        if s <= self.x[0] {
            return (self.y[0], 0.0);
        }
        if s >= self.x[n - 1] {
            return (self.y[n - 1], 0.0);
        }
        let i = self.x.partition_point(|&v| v <= s) - 1;
        let h = self.x[i + 1] - self.x[i];
        let t = (s - self.x[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * self.y[i] + h10 * h * self.slopes[i] + h01 * self.y[i + 1] + h11 * h * self.slopes[i + 1];
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let d = d00 * self.y[i] + d10 * self.slopes[i] + d01 * self.y[i + 1] + d11 * self.slopes[i + 1];
        (v, d)
    }
}

/// `p(ϱ) = κ ϱ^γ · f(ϱ)` with an optional monotone factor `f` (`f ≡ 1`
/// for the isentropic law).
#[derive(Debug, Clone, PartialEq)]
pub struct PressureLaw {
    gamma: f64,
    kappa: f64,
    factor: Option<MonotoneSpline>,
}

impl PressureLaw {
    pub fn power_law(gamma: f64, kappa: f64) -> Result<Self> {
        Self::validate(gamma, kappa)?;
        Ok(Self { gamma, kappa, factor: None })
    }

    /// Power law times a monotone spline factor given by `(ϱ, f)` knots.
    pub fn with_factor(gamma: f64, kappa: f64, knots: &[(f64, f64)]) -> Result<Self> {
        Self::validate(gamma, kappa)?;
        Ok(Self { gamma, kappa, factor: Some(MonotoneSpline::new(knots)?) })
    }

    fn validate(gamma: f64, kappa: f64) -> Result<()> {
        if !(gamma > 1.5) || !gamma.is_finite() {
            return Err(Error::Domain(format!(
                "pressure growth exponent must exceed 3/2 (gamma = {gamma})"
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("pressure coefficient must be positive (kappa = {kappa})")));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_power_law(&self) -> bool {
        self.factor.is_none()
    }

    /// `(p, p')` at `ϱ ≥ 0`.
    pub fn eval(&self, rho: f64) -> Result<(f64, f64)> {
        if !(rho >= 0.0) {
            return Err(Error::Domain(format!("density must be non-negative (rho = {rho})")));
        }
        Ok(self.eval_unchecked(rho))
    }

    pub(crate) fn eval_unchecked(&self, rho: f64) -> (f64, f64) {
        let base = self.kappa * rho.powf(self.gamma);
        let dbase = if rho > 0.0 { self.gamma * base / rho } else { 0.0 };
        match &self.factor {
            None => (base, dbase),
            Some(f) => {
                let (v, d) = f.eval(rho);
                (base * v, dbase * v + base * d)
            }
        }
    }

    pub fn pressure(&self, rho: f64) -> f64 {
        self.eval_unchecked(rho.max(0.0)).0
    }

    /// Sound speed `√p'(ϱ)`.
    pub fn sound_speed(&self, rho: f64) -> f64 {
        self.eval_unchecked(rho.max(0.0)).1.sqrt()
    }

    /// `∫₁^ϱ p(s)/s² ds`.
    fn potential_integral(&self, rho: f64) -> f64 {
        match &self.factor {
            None => self.kappa * (rho.powf(self.gamma - 1.0) - 1.0) / (self.gamma - 1.0),
            Some(_) => {
                let f = |s: f64| if s > 0.0 { self.pressure(s) / (s * s) } else { 0.0 };
                let scale = (self.pressure(rho.max(1.0)) / rho.max(1.0)).max(1.0);
                quadrature::adaptive(f, 1.0, rho, 1e-14 * scale)
            }
        }
    }

    /// Pressure potential `H(ϱ) = ϱ ∫₁^ϱ p(s)/s² ds`, continuously extended
    /// by `H(0) = 0`.
    pub fn potential(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match &self.factor {
            None => self.kappa * (rho.powf(self.gamma) - rho) / (self.gamma - 1.0),
            Some(_) => rho * self.potential_integral(rho),
        }
    }

    /// Same as [`potential`](Self::potential) but always by quadrature.
    pub fn potential_by_quadrature(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let f = |s: f64| if s > 0.0 { self.pressure(s) / (s * s) } else { 0.0 };
        rho * quadrature::adaptive(f, 1.0, rho, 1e-14)
    }

    /// `H'(ϱ) = ∫₁^ϱ p/s² + p(ϱ)/ϱ` for `ϱ > 0`.
    pub fn potential_derivative(&self, rho: f64) -> f64 {
        self.potential_integral(rho) + self.pressure(rho) / rho
    }

    /// Relative energy integrand
    /// `½ϱ|u−U|² + H(ϱ) − H'(r)(ϱ−r) − H(r)`.
    pub fn relative_energy_density(&self, rho: f64, u: &[f64], r: f64, big_u: &[f64]) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("reference density must be positive (r = {r})")));
        }
        if !(rho >= 0.0) {
            return Err(Error::Domain(format!("density must be non-negative (rho = {rho})")));
        }
        let w2: f64 = u.iter().zip(big_u).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(0.5 * rho * w2 + self.bregman(rho, r))
    }

    /// `H(ϱ) − H'(r)(ϱ−r) − H(r)`.
    pub fn bregman(&self, rho: f64, r: f64) -> f64 {
        self.potential(rho) - self.potential_derivative(r) * (rho - r) - self.potential(r)
    }
}

/// Fitted pinching constants of the relative energy integrand.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoercivityConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Samples the relative energy integrand on grids to fit
/// `C₁(|w|² + |ϱ−r|²) ≤ e ≤ C₂(|w|² + |ϱ−r|²)` for `ϱ, r ∈ K` and
/// `e ≥ C₃(1 + ϱ|w|² + ϱ^γ)` for `r ∈ K`, `ϱ ∉ K̃`.
pub fn coercivity_check(law: &PressureLaw, k: (f64, f64), k_tilde: (f64, f64)) -> Result<CoercivityConstants> {
    if !(k.0 > 0.0 && k.1 >= k.0 && k_tilde.0 > 0.0 && k_tilde.0 < k.0 && k_tilde.1 > k.1) {
        return Err(Error::Domain("need 0 < K̃⁻ < K⁻ ≤ K⁺ < K̃⁺".into()));
    }
    let n = 41;
    let lin = |a: f64, b: f64, i: usize, n: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    let speeds = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0];
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let rho = lin(k.0, k.1, i, n);
        for j in 0..n {
            let r = lin(k.0, k.1, j, n);
            for &w in &speeds {
                let q = w * w + (rho - r) * (rho - r);
                if q == 0.0 {
                    continue;
                }
                let e = law.relative_energy_density(rho, &[w], r, &[0.0])?;
                let ratio = e / q;
                c1 = c1.min(ratio);
                c2 = c2.max(ratio);
            }
        }
    }
    if !(c1 > 0.0) || !c2.is_finite() {
        return Err(Error::CoercivityViolation(format!(
            "integrand not pinched on K = [{}, {}]: C1 = {c1:.3e}, C2 = {c2:.3e}",
            k.0, k.1
        )));
    }
    let mut outside = Vec::new();
    for i in 0..n {
        outside.push(lin(0.0, k_tilde.0 * 0.999, i, n));
        outside.push(k_tilde.1 * (1.001 + 100.0 * i as f64 / (n - 1) as f64));
    }
    let mut c3 = f64::INFINITY;
    for j in 0..n {
        let r = lin(k.0, k.1, j, n);
        for &rho in &outside {
            for &w in &speeds {
                let e = law.relative_energy_density(rho, &[w], r, &[0.0])?;
                let q = 1.0 + rho * w * w + rho.powf(law.gamma());
                c3 = c3.min(e / q);
            }
        }
    }
    if !(c3 > 0.0) {
        return Err(Error::CoercivityViolation(format!(
            "integrand not dominating outside K̃ = [{}, {}]: C3 = {c3:.3e}",
            k_tilde.0, k_tilde.1
        )));
    }
    Ok(CoercivityConstants { c1, c2, c3 })
}

/// Smooth cutoff equal to one on `[ϱ̲/2, 2ϱ̄]` and vanishing below `ϱ̲/4`
/// and above `4ϱ̄`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EssResCutoff {
    pub rho_lower: f64,
    pub rho_upper: f64,
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(t);
    a / (a + f(1.0 - t))
}

impl EssResCutoff {
    pub fn new(rho_lower: f64, rho_upper: f64) -> Result<Self> {
        if !(rho_lower > 0.0 && rho_upper >= rho_lower) {
            return Err(Error::Domain("cutoff needs 0 < lower ≤ upper".into()));
        }
        Ok(Self { rho_lower, rho_upper })
    }

    pub fn chi(&self, rho: f64) -> f64 {
        let (lo, hi) = (self.rho_lower, self.rho_upper);
        if rho < 0.5 * lo {
            smooth_step((rho - 0.25 * lo) / (0.25 * lo))
        } else if rho > 2.0 * hi {
            smooth_step((4.0 * hi - rho) / (2.0 * hi))
        } else {
            1.0
        }
    }

    /// `(χ(ϱ)h, h − χ(ϱ)h)` pointwise.
    pub fn split(&self, h: &[f64], rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ess: Vec<f64> = h.iter().zip(rho).map(|(&v, &r)| self.chi(r) * v).collect();
        let res = h.iter().zip(&ess).map(|(&v, &e)| v - e).collect();
        (ess, res)
    }
}
