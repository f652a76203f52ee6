//! Relative energy between axisymmetric thin-channel solutions and tilted
//! extensions of quasi-1D reference solutions.
//!
//! A quasi-1D pair `[r, v]` is lifted to the channel as
//! `U = [V_{h,ε}, 1] v`, which is tangent to the lateral wall and solves
//! the continuity equation with `r` whenever the 1D pair does. For the
//! circular channels of the axisymmetric solver `V_{h,ε}(x_h, z) = g x_h`
//! with `g = ∂_zR/R`, so `U = (g r v, v)` in `(r, z)` components.
//!
//! Everything here evaluates integrals by cell-center quadrature on the
//! solver grid with the exact body-of-revolution cell volumes.

use crate::error::{Error, Result};
use crate::fit::{self, PowerFit};
use crate::geometry::{self, ChannelGeometry, ScaledTilt};
use crate::polygon::Point;
use crate::profile::Profile;
use crate::solver1d::{self, Grid1D, Limiter, RunOptions1D, Scheme1D, State1D, System1D, Trajectory1D, Visc1DParams};
use crate::solver_axi::{self, stress_tensor, AxiGradient, AxiGrid, AxiOptions, AxiState, BcMode, ViscParams3D};
use crate::thermo::PressureLaw;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Step used for the second derivative of the radial tilt coefficient.
const TILT_FD_STEP: f64 = 1e-4;

/// Interpolated reference values and derivatives at one `(t, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RefSample {
    pub r: f64,
    pub r_t: f64,
    pub r_z: f64,
    pub v: f64,
    pub v_t: f64,
    pub v_z: f64,
    pub v_zz: f64,
}

/// Reference pair `[r, v]` stored on uniformly spaced snapshots of a
/// cell-centered 1D grid. Values are interpolated with cubic Lagrange
/// polynomials in time and linearly in `z`; `z`-derivatives are central
/// differences with even extension of `r` and odd extension of `v`
/// across the walls, so `v(t, 0) = v(t, 1) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePair {
    t0: f64,
    dt: f64,
    dz: f64,
    rho: Vec<Vec<f64>>,
    vel: Vec<Vec<f64>>,
}

impl ReferencePair {
    /// Builds a pair from snapshots at `times` (uniformly spaced, at
    /// least four) with cell values `(r, v)` on `n` uniform cells.
    pub fn new(times: &[f64], rho: Vec<Vec<f64>>, vel: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 4 || rho.len() != times.len() || vel.len() != times.len() {
            return Err(Error::Domain("a reference pair needs at least four matching snapshots".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1e-300) + 1e-12 * w[1].abs())
        {
            return Err(Error::Domain("reference snapshots must be uniformly spaced in time".into()));
        }
        let n = rho[0].len();
        if n < 4 || rho.iter().chain(&vel).any(|s| s.len() != n) {
            return Err(Error::Domain("reference snapshots need a common length of at least four cells".into()));
        }
        for (k, snap) in rho.iter().enumerate() {
            if let Some((i, &v)) = snap.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::Domain(format!(
                    "reference density must be positive (r = {v} in cell {i} at t = {})",
                    times[k]
                )));
            }
        }
        Ok(Self { t0: times[0], dt, dz: 1.0 / n as f64, rho, vel })
    }

    /// Pair made of the snapshots of a 1D trajectory.
    pub fn from_trajectory(grid: &Grid1D, traj: &Trajectory1D) -> Result<Self> {
        if traj.states.iter().any(|s| s.rho.len() != grid.n_cells) {
            return Err(Error::Domain("trajectory and grid sizes differ".into()));
        }
        let rho = traj.states.iter().map(|s| s.rho.clone()).collect();
        let vel = traj.states.iter().map(|s| s.velocity()).collect();
        Self::new(&traj.times, rho, vel)
    }

    /// Pair sampled from closed-form `(r, v)(t, z)` at cell centers.
    pub fn from_fn(times: &[f64], n_cells: usize, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let dz = 1.0 / n_cells as f64;
        let mut rho = Vec::with_capacity(times.len());
        let mut vel = Vec::with_capacity(times.len());
        for &t in times {
            let (r, v): (Vec<f64>, Vec<f64>) = (0..n_cells).map(|i| f(t, (i as f64 + 0.5) * dz)).unzip();
            rho.push(r);
            vel.push(v);
        }
        Self::new(times, rho, vel)
    }

    pub fn n_cells(&self) -> usize {
        self.rho[0].len()
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn snapshot_spacing(&self) -> f64 {
        self.dt
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.t0 + self.dt * (self.rho.len() - 1) as f64
    }

    /// `(min r, max r)` over all snapshots.
    pub fn density_bounds(&self) -> (f64, f64) {
        self.rho.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// `max |∂²_z v|` over all snapshots and cells.
    pub fn max_second_derivative(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.vel {
            for i in 0..v.len() {
                worst = worst.max(self.v_zz(v, i as isize, 1).abs());
            }
        }
        worst
    }

    /// Whether second differences of `v` stay small against `v` itself;
    /// fails for discontinuous or under-resolved references.
    pub fn has_bounded_second_derivative(&self) -> bool {
        let vmax = self.vel.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()));
        self.max_second_derivative() * self.dz * self.dz <= 0.1 * vmax + 1e-300
    }

    #[inline]
    fn r_at(&self, s: &[f64], i: isize) -> f64 {
        let n = s.len() as isize;
        let j = if i < 0 { -1 - i } else if i >= n { 2 * n - 1 - i } else { i };
        s[j as usize]
    }

    #[inline]
    fn v_at(&self, s: &[f64], i: isize) -> f64 {
        let n = s.len() as isize;
        if i < 0 {
            -s[(-1 - i) as usize]
        } else if i >= n {
            -s[(2 * n - 1 - i) as usize]
        } else {
            s[i as usize]
        }
    }

    fn r_z(&self, s: &[f64], i: isize, stride: isize) -> f64 {
        (self.r_at(s, i + stride) - self.r_at(s, i - stride)) / (2.0 * stride as f64 * self.dz)
    }

    fn v_z(&self, s: &[f64], i: isize, stride: isize) -> f64 {
        (self.v_at(s, i + stride) - self.v_at(s, i - stride)) / (2.0 * stride as f64 * self.dz)
    }

    fn v_zz(&self, s: &[f64], i: isize, stride: isize) -> f64 {
        let h = stride as f64 * self.dz;
        (self.v_at(s, i + stride) - 2.0 * self.v_at(s, i) + self.v_at(s, i - stride)) / (h * h)
    }

    /// Nodal values `[r, r_z, v, v_z, v_zz]` of snapshot `m` at cell `i`.
    fn nodal(&self, m: usize, i: isize, stride: isize) -> [f64; 5] {
        let (r, v) = (&self.rho[m], &self.vel[m]);
        [self.r_at(r, i), self.r_z(r, i, stride), self.v_at(v, i), self.v_z(v, i, stride), self.v_zz(v, i, stride)]
    }

    /// First snapshot index and cubic Lagrange weights (values and time
    /// derivatives) for snapshots spaced by `stride`.
    fn time_stencil(&self, t: f64, stride: usize) -> (usize, [f64; 4], [f64; 4]) {
        let last = self.rho.len() - 1;
        let span = 3 * stride;
        let h = self.dt * stride as f64;
        let x = (t - self.t0) / h;
        let m0 = ((x.floor() as isize - 1).max(0) as usize * stride).min(last.saturating_sub(span));
        let x = (t - self.t0 - m0 as f64 * self.dt) / h;
        let mut w = [0.0; 4];
        let mut dw = [0.0; 4];
        for j in 0..4 {
            let mut denom = 1.0;
            for k in 0..4 {
                if k != j {
                    denom *= j as f64 - k as f64;
                }
            }
            let mut prod = 1.0;
            let mut deriv = 0.0;
            for k in 0..4 {
                if k == j {
                    continue;
                }
                let mut p = 1.0;
                for l in 0..4 {
                    if l != j && l != k {
                        p *= x - l as f64;
                    }
                }
                deriv += p;
                prod *= x - k as f64;
            }
            w[j] = prod / denom;
            dw[j] = deriv / denom / h;
        }
        (m0, w, dw)
    }

    fn sample_stencil(&self, t: f64, z: f64, stride: usize) -> RefSample {
        let s = (z / self.dz - 0.5).clamp(-0.5, self.n_cells() as f64 - 0.5);
        let i = s.floor() as isize;
        let a = s - i as f64;
        let (m0, w, dw) = self.time_stencil(t, stride);
        let st = stride as isize;
        let mut val = [0.0; 5];
        let mut der = [0.0; 5];
        for j in 0..4 {
            let m = m0 + j * stride;
            let lo = self.nodal(m, i, st);
            let hi = self.nodal(m, i + 1, st);
            for q in 0..5 {
                let x = (1.0 - a) * lo[q] + a * hi[q];
                val[q] += w[j] * x;
                der[q] += dw[j] * x;
            }
        }
        RefSample { r: val[0], r_t: der[0], r_z: val[1], v: val[2], v_t: der[2], v_z: val[3], v_zz: val[4] }
    }

    /// Values and derivatives at `(t, z)`.
    pub fn sample(&self, t: f64, z: f64) -> RefSample {
        self.sample_stencil(t, z, 1)
    }
}

/// Tilted extension `U_ε = [V_{h,ε}, 1] v` of a reference pair.
#[derive(Debug, Clone)]
pub struct ExtendedReference<'a> {
    pub pair: &'a ReferencePair,
    pub tilt: ScaledTilt,
    radius: Option<Profile>,
}

/// Reference quantities shared by all cells of one grid row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowSample {
    pub z: f64,
    pub reference: RefSample,
    /// Radial tilt coefficient `g = ∂_zR/R` and its first two derivatives.
    pub g: [f64; 3],
}

impl RowSample {
    /// `(U_r, U_z)` at radius `r`.
    pub fn velocity(&self, r: f64) -> (f64, f64) {
        (r * self.g[0] * self.reference.v, self.reference.v)
    }

    /// `∂_t U` at radius `r`.
    pub fn time_derivative(&self, r: f64) -> (f64, f64) {
        (r * self.g[0] * self.reference.v_t, self.reference.v_t)
    }

    /// `(g v)'` and `(g v)''`.
    fn gv_derivatives(&self) -> (f64, f64) {
        let s = &self.reference;
        let [g, g1, g2] = self.g;
        (g1 * s.v + g * s.v_z, g2 * s.v + 2.0 * g1 * s.v_z + g * s.v_zz)
    }

    /// `∇U` at radius `r`.
    pub fn gradient(&self, r: f64) -> AxiGradient {
        let gv = self.g[0] * self.reference.v;
        AxiGradient { a: gv, b: r * self.gv_derivatives().0, c: 0.0, d: self.reference.v_z, h: gv }
    }

    /// `div S(∇U) = μΔU + (μ/3 + η)∇ div U` at radius `r`.
    pub fn stress_divergence(&self, r: f64, mu: f64, eta: f64) -> (f64, f64) {
        let (d1, d2) = self.gv_derivatives();
        let s = &self.reference;
        // vector Laplacian of (g v r, v) and gradient of div U = 2gv + v'
        let lap = (r * d2, s.v_zz);
        let grad_div = (0.0, 2.0 * d1 + s.v_zz);
        (mu * lap.0 + (mu / 3.0 + eta) * grad_div.0, mu * lap.1 + (mu / 3.0 + eta) * grad_div.1)
    }
}

/// Lifts `pair` to the channel with the scaled tilt field.
pub fn extend_reference<'a>(pair: &'a ReferencePair, tilt: &ScaledTilt) -> ExtendedReference<'a> {
    let geom = tilt.field.geometry();
    let radius = if geom.is_axisymmetric() { geom.radius_profile().cloned() } else { None };
    ExtendedReference { pair, tilt: tilt.clone(), radius }
}

impl ExtendedReference<'_> {
    pub fn epsilon(&self) -> f64 {
        self.tilt.epsilon
    }

    pub fn geometry(&self) -> &ChannelGeometry {
        self.tilt.field.geometry()
    }

    /// `U_ε(x_h, z, t)` in Cartesian components.
    pub fn eval(&self, x: Point, z: f64, t: f64) -> [f64; 3] {
        let v = self.pair.sample(t, z).v;
        let h = self.tilt.eval(x, z);
        [h[0] * v, h[1] * v, v]
    }

    /// `g = ∂_zR/R` with its derivatives; needs a circular channel with
    /// straight centerline.
    pub fn radial_tilt(&self, z: f64) -> Result<[f64; 3]> {
        let radius = self.radius.as_ref().ok_or_else(|| {
            Error::UnsupportedKind("axisymmetric evaluation needs a circular channel with straight centerline".into())
        })?;
        let g1 = |z: f64| {
            let (r, dr, d2r) = radius.eval(z);
            d2r / r - (dr / r).powi(2)
        };
        let (r, dr, _) = radius.eval(z);
        let h = TILT_FD_STEP;
        Ok([dr / r, g1(z), (g1(z + h) - g1(z - h)) / (2.0 * h)])
    }

    pub fn row(&self, t: f64, z: f64) -> Result<RowSample> {
        Ok(RowSample { z, reference: self.pair.sample(t, z), g: self.radial_tilt(z)? })
    }

    fn rows(&self, grid: &AxiGrid, t: f64) -> Result<Vec<RowSample>> {
        (0..grid.n_z).map(|k| self.row(t, (k as f64 + 0.5) * grid.dz)).collect()
    }
}

/// Samples `U_ε` on the grid as an axisymmetric state with density `r`.
pub fn extended_state(ext: &ExtendedReference, grid: &AxiGrid, t: f64) -> Result<AxiState> {
    let rows = ext.rows(grid, t)?;
    let n = grid.n_cells();
    let mut s = AxiState { rho: vec![0.0; n], mom_r: vec![0.0; n], mom_z: vec![0.0; n] };
    for c in 0..n {
        let row = &rows[c / grid.n_r];
        let (ur, uz) = row.velocity(grid.center(c).0);
        let r = row.reference.r;
        s.rho[c] = r;
        s.mom_r[c] = r * ur;
        s.mom_z[c] = r * uz;
    }
    Ok(s)
}

/// `∂_t r + div(r U_ε)` at one reference sample; `U_ε` has
/// `div U_ε = 2g v + ∂_z v` and `r` does not depend on `x_h`.
fn continuity_integrand(s: &RefSample, g: f64) -> f64 {
    s.r_t + s.v * s.r_z + s.r * (2.0 * g * s.v + s.v_z)
}

fn continuity_residual_stride(ext: &ExtendedReference, t: f64, stride: usize) -> Result<f64> {
    let pair = ext.pair;
    let mut worst: f64 = 0.0;
    for i in 0..pair.n_cells() {
        let z = (i as f64 + 0.5) * pair.dz;
        let s = pair.sample_stencil(t, z, stride);
        worst = worst.max(continuity_integrand(&s, ext.radial_tilt(z)?[0]).abs());
    }
    Ok(worst)
}

/// `max |∂_t r + div_x(r U_ε)|` over the channel at time `t`. Both `r`
/// and the residual are independent of `x_h`, so the maximum is taken
/// over the reference cell centers.
pub fn continuity_residual(ext: &ExtendedReference, t: f64) -> Result<f64> {
    continuity_residual_stride(ext, t, 1)
}

/// Richardson estimate of the truncation error carried by
/// [`continuity_residual`]: the residual is re-evaluated with difference
/// stencils twice as wide in `t` and `z`, and `max |R_2h − R_h| / 3` is
/// returned.
pub fn continuity_truncation_estimate(ext: &ExtendedReference, t: f64) -> Result<f64> {
    let pair = ext.pair;
    if pair.rho.len() < 7 {
        return Err(Error::Domain("the truncation estimate needs at least seven snapshots".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..pair.n_cells() {
        let z = (i as f64 + 0.5) * pair.dz;
        let g = ext.radial_tilt(z)?[0];
        let fine = continuity_integrand(&pair.sample_stencil(t, z, 1), g);
        let coarse = continuity_integrand(&pair.sample_stencil(t, z, 2), g);
        worst = worst.max((coarse - fine).abs() / 3.0);
    }
    Ok(worst)
}

/// Setup of a continuity refinement study: a one-dimensional Euler reference
/// on `radius` is extended into the channel at each resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityStudy {
    pub radius: Profile,
    pub epsilon: f64,
    pub density: Profile,
    pub velocity: Profile,
    pub gamma: f64,
    pub kappa: f64,
    /// Axial cell counts, coarse to fine.
    pub resolutions: Vec<usize>,
    /// Reference horizon; the residual is evaluated at its midpoint.
    pub horizon: f64,
    /// Snapshot spacing and solver step bound as multiples of `Δz`.
    pub snapshot_ratio: f64,
    pub limiter: Limiter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub n_z: Vec<usize>,
    pub residual: Vec<f64>,
    pub truncation: Vec<f64>,
    /// Observed orders of the residual between consecutive resolutions.
    pub orders: Vec<f64>,
}

impl ContinuityReport {
    /// Largest ratio of residual to truncation estimate.
    pub fn worst_ratio(&self) -> f64 {
        self.residual.iter().zip(&self.truncation).map(|(r, e)| r / e).fold(0.0, f64::max)
    }

    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates [`continuity_residual`] and [`continuity_truncation_estimate`]
/// for solver-produced references at each resolution.
pub fn continuity_study(study: &ContinuityStudy) -> Result<ContinuityReport> {
    if study.resolutions.len() < 2 {
        return Err(Error::Domain("a refinement study needs at least two resolutions".into()));
    }
    if !(study.horizon > 0.0 && study.snapshot_ratio > 0.0) {
        return Err(Error::Domain("horizon and snapshot ratio must be positive".into()));
    }
    let law = PressureLaw::power_law(study.gamma, study.kappa)?;
    let mut rep = ContinuityReport { n_z: vec![], residual: vec![], truncation: vec![], orders: vec![] };
    for &n in &study.resolutions {
        let geom = ChannelGeometry::axisymmetric(study.radius.clone(), study.epsilon, n.max(16))?;
        let grid = Grid1D::new(&geom, n)?;
        let spacing = study.snapshot_ratio * grid.dz;
        let n_snap = ((study.horizon / spacing).ceil() as usize).max(8);
        let times: Vec<f64> = (0..=n_snap).map(|k| study.horizon * k as f64 / n_snap as f64).collect();
        let initial = State1D::from_profiles(&grid, &study.density, &study.velocity)?;
        let opts = RunOptions1D { scheme: Scheme1D { limiter: study.limiter, ..Default::default() }, dt_max: Some(spacing) };
        let traj = solver1d::run_1d(&System1D::Euler, &grid, &law, &initial, &times, &opts)?;
        let pair = ReferencePair::from_trajectory(&grid, &traj)?;
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom)?, study.epsilon)?;
        let ext = extend_reference(&pair, &tilt);
        let t = 0.5 * study.horizon;
        rep.n_z.push(n);
        rep.residual.push(continuity_residual(&ext, t)?);
        rep.truncation.push(continuity_truncation_estimate(&ext, t)?);
    }
    let h: Vec<f64> = rep.n_z.iter().map(|&n| 1.0 / n as f64).collect();
    rep.orders = (1..h.len()).map(|k| (rep.residual[k - 1] / rep.residual[k]).ln() / (h[k - 1] / h[k]).ln()).collect();
    Ok(rep)
}

/// The five integrals of the rewritten remainder and two evaluations of
/// their total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Remainder {
    /// `∫ϱ(∂_tU + U·∇U)·(U − u)`.
    pub material: f64,
    /// `∫ϱ((u − U)·∇U)·(U − u)`.
    pub quadratic: f64,
    /// `λ∫S(∇U) : ∇(U − u)`.
    pub viscous: f64,
    /// `∫(r − ϱ)∂_tH'(r) + ∇H'(r)·(rU − ϱu)`.
    pub potential: f64,
    /// `−∫div U (p(ϱ) − p(r))`.
    pub pressure: f64,
    /// Sum of the five terms.
    pub total: f64,
    /// The remainder evaluated from its original form
    /// `∫ϱ(∂_tU + u·∇U)·(U − u) + λ∫S(∇U):∇(U − u) + … `.
    pub direct: f64,
}

/// Error terms of the remainder and the quantities bounding them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTerms {
    /// `∫ϱ(∂_tU − ∂_tu_1 + U·∇U − u_1·∇u_1)·(U − u)` with `u_1 = (0, v)`.
    pub e1: f64,
    /// `∫(ν∂²v + (μ/3+η)∂(∂ ln A v))(v − u_z) − ∫div S(∇U)·(U − u)`;
    /// zero outside viscous mode.
    pub e2: f64,
    /// `∫ϱ|U − u|`.
    pub weighted_l1: f64,
    /// `∫|U − u|`.
    pub l1: f64,
    /// `|E₁| / (ε∫ϱ|U − u|)`.
    pub c1: f64,
    /// `|E₂| / (ε∫|U − u|)`.
    pub c2: f64,
    /// Whether the reference has bounded discrete second derivatives.
    pub smooth_reference: bool,
}

/// All relative-energy quantities of one state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Instant {
    pub t: f64,
    pub relative_energy: f64,
    /// `λ∫(S(∇u) − S(∇U)) : (∇u − ∇U)`.
    pub relative_dissipation: f64,
    pub remainder: Remainder,
    pub errors: ErrorTerms,
}

fn check_sizes(state: &AxiState, grid: &AxiGrid) -> Result<()> {
    if state.rho.len() != grid.n_cells() {
        return Err(Error::Domain("state and grid sizes differ".into()));
    }
    Ok(())
}

fn diff(a: &AxiGradient, b: &AxiGradient) -> AxiGradient {
    AxiGradient { a: a.a - b.a, b: a.b - b.b, c: a.c - b.c, d: a.d - b.d, h: a.h - b.h }
}

/// `(w·∇)U · y` for swirl-free fields with gradient `G` of `U`.
#[inline]
fn convect(w: (f64, f64), g: &AxiGradient, y: (f64, f64)) -> f64 {
    (w.0 * g.a + w.1 * g.b) * y.0 + (w.0 * g.c + w.1 * g.d) * y.1
}

/// Evaluates every relative-energy quantity of `state` against the
/// extended reference at time `t`. `viscous` selects whether `E₂` is
/// computed.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    state: &AxiState,
    ext: &ExtendedReference,
    t: f64,
    law: &PressureLaw,
    visc: &ViscParams3D,
    grid: &AxiGrid,
    bc: BcMode,
    viscous: bool,
) -> Result<Instant> {
    check_sizes(state, grid)?;
    let rows = ext.rows(grid, t)?;
    let grads = solver_axi::velocity_gradients(state, grid, bc);
    let (mu, eta, lam) = (visc.mu, visc.eta, visc.lambda);
    let nu = 4.0 * mu / 3.0 + eta;
    let mut out = Instant { t, ..Default::default() };
    let (mut rem, mut err) = (Remainder::default(), ErrorTerms::default());
    for c in 0..grid.n_cells() {
        let row = &rows[c / grid.n_r];
        let s = &row.reference;
        let vol = grid.volume[c];
        let rr = grid.center(c).0;
        let rho = state.rho[c];
        let u = state.velocity(c);
        let big_u = row.velocity(rr);
        let w = (big_u.0 - u.0, big_u.1 - u.1);
        let gu = row.gradient(rr);
        let dt_u = row.time_derivative(rr);
        let (p, _) = law.eval(rho)?;
        let (pr, dpr) = law.eval(s.r)?;
        out.relative_energy += law.relative_energy_density(rho, &[u.0, u.1], s.r, &[big_u.0, big_u.1])? * vol;

        let g_rel = diff(&grads[c], &gu);
        let s_rel = stress_tensor(&g_rel, mu, eta);
        out.relative_dissipation += lam * s_rel.contract(&g_rel) * vol;

        // rewritten form
        let accel = (dt_u.0 + big_u.0 * gu.a + big_u.1 * gu.b, dt_u.1 + big_u.0 * gu.c + big_u.1 * gu.d);
        let material = rho * (accel.0 * w.0 + accel.1 * w.1);
        let quadratic = rho * convect((-w.0, -w.1), &gu, w);
        let s_u = stress_tensor(&gu, mu, eta);
        let viscous_term = lam * s_u.contract(&diff(&gu, &grads[c]));
        let h2 = dpr / s.r;
        let potential = (s.r - rho) * h2 * s.r_t + h2 * s.r_z * (s.r * big_u.1 - rho * u.1);
        let pressure = -gu.divergence() * (p - pr);
        rem.material += material * vol;
        rem.quadratic += quadratic * vol;
        rem.viscous += viscous_term * vol;
        rem.potential += potential * vol;
        rem.pressure += pressure * vol;
        // original form with u·∇U
        let orig = rho * ((dt_u.0 * w.0 + dt_u.1 * w.1) + convect(u, &gu, w)) + viscous_term + potential + pressure;
        rem.direct += orig * vol;

        // E₁ with the untilted lift u₁ = (0, v)
        let bracket = (accel.0 - 0.0, accel.1 - (s.v_t + s.v * s.v_z));
        err.e1 += rho * (bracket.0 * w.0 + bracket.1 * w.1) * vol;
        let wn = (w.0 * w.0 + w.1 * w.1).sqrt();
        err.weighted_l1 += rho * wn * vol;
        err.l1 += wn * vol;
        if viscous {
            let drift = 2.0 * row.g[0];
            let drift_z = 2.0 * row.g[1];
            let one_d = nu * s.v_zz + (mu / 3.0 + eta) * (drift_z * s.v + drift * s.v_z);
            let ds = row.stress_divergence(rr, mu, eta);
            err.e2 += (one_d * (s.v - u.1) - (ds.0 * w.0 + ds.1 * w.1)) * vol;
        }
    }
    rem.total = rem.material + rem.quadratic + rem.viscous + rem.potential + rem.pressure;
    let eps = ext.epsilon();
    err.c1 = if err.weighted_l1 > 0.0 { err.e1.abs() / (eps * err.weighted_l1) } else { 0.0 };
    err.c2 = if err.l1 > 0.0 { err.e2.abs() / (eps * err.l1) } else { 0.0 };
    err.smooth_reference = ext.pair.has_bounded_second_derivative();
    if !err.smooth_reference {
        log::warn!("reference velocity has unbounded discrete second derivatives; error-term bounds do not apply");
    }
    out.remainder = rem;
    out.errors = err;
    Ok(out)
}

/// `E_ε(ϱ, u | r, U_ε)` by cell quadrature.
pub fn relative_energy(state: &AxiState, ext: &ExtendedReference, t: f64, law: &PressureLaw, grid: &AxiGrid) -> Result<f64> {
    check_sizes(state, grid)?;
    let rows = ext.rows(grid, t)?;
    let mut e = 0.0;
    for c in 0..grid.n_cells() {
        let row = &rows[c / grid.n_r];
        let u = state.velocity(c);
        let big_u = row.velocity(grid.center(c).0);
        e += law.relative_energy_density(state.rho[c], &[u.0, u.1], row.reference.r, &[big_u.0, big_u.1])? * grid.volume[c];
    }
    Ok(e)
}

/// The remainder split into its five integrals plus the direct value.
#[allow(clippy::too_many_arguments)]
pub fn remainder(
    state: &AxiState,
    ext: &ExtendedReference,
    t: f64,
    law: &PressureLaw,
    visc: &ViscParams3D,
    grid: &AxiGrid,
    bc: BcMode,
) -> Result<Remainder> {
    Ok(evaluate(state, ext, t, law, visc, grid, bc, false)?.remainder)
}

/// `E₁`, `E₂` (when `viscous`) and the constants of their `ε` bounds.
#[allow(clippy::too_many_arguments)]
pub fn error_terms(
    state: &AxiState,
    ext: &ExtendedReference,
    t: f64,
    law: &PressureLaw,
    visc: &ViscParams3D,
    grid: &AxiGrid,
    bc: BcMode,
    viscous: bool,
) -> Result<ErrorTerms> {
    Ok(evaluate(state, ext, t, law, visc, grid, bc, viscous)?.errors)
}

/// Relative energy inequality residual at `tau`:
/// `E(τ) + ∫₀^τ D_rel − E(0) − ∫₀^τ R`, with trapezoidal time integrals
/// over the supplied instants (every solver step). Instants after `tau`
/// are ignored.
pub fn rei_residual(instants: &[Instant], tau: f64) -> f64 {
    let mut integral = 0.0;
    let mut last = match instants.first() {
        Some(i) => i,
        None => return 0.0,
    };
    for i in &instants[1..] {
        if i.t > tau * (1.0 + 1e-12) {
            break;
        }
        let dt = i.t - last.t;
        integral += 0.5 * dt * (i.relative_dissipation + last.relative_dissipation);
        integral -= 0.5 * dt * (i.remainder.total + last.remainder.total);
        last = i;
    }
    last.relative_energy + integral - instants[0].relative_energy
}

/// Per-step relative-energy history of one axisymmetric run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackedRun {
    pub instants: Vec<Instant>,
    pub trajectory: solver_axi::AxiTrajectory,
    /// Largest accepted time step.
    pub max_dt: f64,
}

/// Runs the axisymmetric solver and evaluates [`evaluate`] after every step.
#[allow(clippy::too_many_arguments)]
pub fn track(
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    bc: BcMode,
    ext: &ExtendedReference,
    initial: &AxiState,
    outputs: &[f64],
    opts: &AxiOptions,
    viscous: bool,
) -> Result<TrackedRun> {
    if let Some(&t) = outputs.last() {
        if t > ext.pair.horizon() * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "comparison horizon {t} exceeds the reference horizon {}",
                ext.pair.horizon()
            )));
        }
    }
    let mut instants = Vec::new();
    let mut max_dt: f64 = 0.0;
    let trajectory = solver_axi::run_axi_observed(grid, law, visc, bc, initial, outputs, opts, &mut |t, dt, s| {
        max_dt = max_dt.max(dt);
        instants.push(evaluate(s, ext, t, law, visc, grid, bc, viscous)?);
        Ok(())
    })?;
    Ok(TrackedRun { instants, trajectory, max_dt })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Vanishing viscosity `λ → 0` with slip caps against the Euler reference.
    Inviscid,
    /// `λ = 1`, no-slip caps, against the Navier–Stokes reference with drift.
    Viscous,
}

/// One `(ε, λ)` cell of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub epsilon: f64,
    pub lambda: f64,
}

/// Inputs of a convergence study.
/// Averaged viscous operator of the one-dimensional reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceModel {
    /// `ν∂²u + (μ/3+η)∂(au)`.
    #[default]
    Drift,
    /// `ν∂²u + (η − 2μ/3)∂(au) + 2μ a∂u − μa²u`, the cross-section average
    /// of the slip-wall stress divergence.
    SlipAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub mode: StudyMode,
    /// Averaged viscous operator used by the reference in the viscous limit.
    pub reference_model: ReferenceModel,
    pub radius: Profile,
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub eta: f64,
    pub cells: Vec<StudyCell>,
    /// Initial reference density and velocity.
    pub density: Profile,
    pub velocity: Profile,
    pub horizon: f64,
    /// Number of equispaced report times in `(0, T]`.
    pub n_outputs: usize,
    pub n_r: usize,
    pub n_z: usize,
    /// Reference snapshots per unit time.
    pub snapshots_per_unit_time: usize,
    /// Upper bound on the reference solver's time step.
    pub reference_dt_max: Option<f64>,
    pub limiter: Limiter,
    /// Also run the finest cell with a deliberately broken flux and
    /// report whether the residual guard catches it.
    pub check_fault: bool,
}

impl StudyConfig {
    /// Checks the hypotheses of the requested limit; collects every problem.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 1.5) {
            problems.push(format!("pressure growth exponent must exceed 3/2 (gamma = {})", self.gamma));
        }
        if !(self.kappa > 0.0) {
            problems.push(format!("pressure coefficient must be positive (kappa = {})", self.kappa));
        }
        if !(self.mu > 0.0) {
            problems.push(format!("shear viscosity must be positive (mu = {})", self.mu));
        }
        if self.mode == StudyMode::Viscous && !(self.eta > 0.0) {
            problems.push(format!("the viscous limit requires strictly positive bulk viscosity (eta = {})", self.eta));
        } else if !(self.eta >= 0.0) {
            problems.push(format!("bulk viscosity must be non-negative (eta = {})", self.eta));
        }
        if !(self.horizon > 0.0) {
            problems.push(format!("horizon must be positive (T = {})", self.horizon));
        }
        if self.n_outputs == 0 {
            problems.push("at least one output time is needed".into());
        }
        for c in &self.cells {
            if !(c.epsilon > 0.0) || !(c.lambda > 0.0) {
                problems.push(format!("epsilon and lambda must be positive (got {}, {})", c.epsilon, c.lambda));
            }
            if self.mode == StudyMode::Viscous && c.lambda != 1.0 {
                problems.push(format!("the viscous limit is taken at lambda = 1 (got {})", c.lambda));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Configuration(problems.join("; ")))
        }
    }

    pub fn law(&self) -> Result<PressureLaw> {
        PressureLaw::power_law(self.gamma, self.kappa)
    }

    fn bc(&self) -> BcMode {
        match self.mode {
            StudyMode::Inviscid => BcMode::SlipOnly,
            StudyMode::Viscous => BcMode::SlipPlusNoSlipCaps,
        }
    }

    /// Rate abscissa: `ε + λ` for the inviscid limit, `ε` for the viscous one.
    pub fn abscissa(&self, cell: &StudyCell) -> f64 {
        match self.mode {
            StudyMode::Inviscid => cell.epsilon + cell.lambda,
            StudyMode::Viscous => cell.epsilon,
        }
    }
}

/// Results of one `(ε, λ)` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub epsilon: f64,
    pub lambda: f64,
    pub n_r: usize,
    pub n_z: usize,
    pub volume: f64,
    /// Horizon actually compared (shortened on reference breakdown).
    pub horizon: f64,
    pub times: Vec<f64>,
    pub relative_energy: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `∫₀^τ D_rel`.
    pub dissipation: Vec<f64>,
    pub remainder: Vec<f64>,
    pub rei_residual: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// `max_τ E_ε(τ)/|Ω_ε|` over every step.
    pub sup_normalized: f64,
    pub max_rei_residual: f64,
    pub max_c1: f64,
    pub max_c2: f64,
    pub max_dt: f64,
    /// Largest physical cell size.
    pub h: f64,
    pub n_steps: usize,
    /// `max |mass − mass(0)| / (n_steps · mass(0))`.
    pub mass_drift_per_step: f64,
    /// Largest `E + D − E(0)` of the plain energy balance.
    pub max_energy_residual: f64,
    /// Largest gap between the summed and the direct remainder.
    pub remainder_path_gap: f64,
}

impl CellReport {
    /// `Δt + h²` scale of the residual tolerance.
    pub fn tolerance_scale(&self) -> f64 {
        self.max_dt + self.h * self.h
    }
}

/// Safety factor on the guard constant fitted from the coarse run.
const GUARD_SAFETY: f64 = 2.0;
/// Residual per unit volume accepted as round-off when a coarse run has none.
const GUARD_ROUNDOFF: f64 = 1e-12;

/// Relative-energy inequality guard fitted from one refinement per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuardReport {
    /// Per-cell `C` in `residual ≤ C(Δt + h²)`, fitted from the cell's
    /// half-resolution companion.
    pub constants: Vec<f64>,
    /// Per-cell pass flags in study order.
    pub passed: Vec<bool>,
    /// `Some(true)` when the faulted run tripped the guard.
    pub fault_tripped: Option<bool>,
    /// Residual of the faulted run (`None` when it broke down).
    pub fault_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelativeEnergyReport {
    pub mode: StudyMode,
    pub cells: Vec<CellReport>,
    /// Coarse companion of the finest cell, used for the floor.
    pub refinement: Option<CellReport>,
    pub abscissa: Vec<f64>,
    pub sup_normalized: Vec<f64>,
    /// Scheme-error floor subtracted before the fit.
    pub floor: f64,
    pub fit: Option<PowerFit>,
    /// `sup E/|Ω|` never grows by more than the floor as the abscissa shrinks.
    pub monotone: bool,
    pub guard: Option<GuardReport>,
}

impl RelativeEnergyReport {
    pub fn fitted_q(&self) -> Option<f64> {
        self.fit.map(|f| f.exponent)
    }
}

fn reference_run(cfg: &StudyConfig, grid: &Grid1D, law: &PressureLaw, horizon: f64) -> Result<(Trajectory1D, f64)> {
    let n_snap = ((cfg.snapshots_per_unit_time as f64 * horizon).ceil() as usize).max(8);
    let times: Vec<f64> = (0..=n_snap).map(|k| horizon * k as f64 / n_snap as f64).collect();
    let system = match cfg.mode {
        StudyMode::Inviscid => System1D::Euler,
        StudyMode::Viscous => {
            let v = Visc1DParams::new(cfg.mu, cfg.eta)?;
            match cfg.reference_model {
                ReferenceModel::Drift => System1D::NsDrift(v),
                ReferenceModel::SlipAveraged => System1D::NsSlipAveraged(v),
            }
        }
    };
    let initial = State1D::from_profiles(grid, &cfg.density, &cfg.velocity)?;
    let opts = RunOptions1D { scheme: Scheme1D { limiter: cfg.limiter, ..Default::default() }, dt_max: cfg.reference_dt_max };
    match solver1d::run_1d(&system, grid, law, &initial, &times, &opts) {
        Ok(t) => Ok((t, horizon)),
        Err(Error::Breakdown { time, .. }) if time > 0.0 => {
            let shorter = 0.9 * time;
            log::warn!("reference breaks down at t = {time:.4}; comparing up to t = {shorter:.4}");
            reference_run(cfg, grid, law, shorter)
        }
        Err(e) => Err(e),
    }
}

/// Runs one `(ε, λ)` cell at the given resolution.
pub fn run_cell(cfg: &StudyConfig, cell: &StudyCell, n_r: usize, n_z: usize, opts: &AxiOptions) -> Result<CellReport> {
    let law = cfg.law()?;
    let geom = ChannelGeometry::axisymmetric(cfg.radius.clone(), cell.epsilon, n_z.max(16))?;
    let grid1 = Grid1D::new(&geom, n_z)?;
    let (traj, horizon) = reference_run(cfg, &grid1, &law, cfg.horizon)?;
    let pair = ReferencePair::from_trajectory(&grid1, &traj)?;
    let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom)?, cell.epsilon)?;
    let ext = extend_reference(&pair, &tilt);
    let grid = AxiGrid::new(&geom, n_r, n_z)?;
    let visc = ViscParams3D::new(cfg.mu, cfg.eta, cell.lambda)?;
    let bc = cfg.bc();
    let initial = extended_state(&ext, &grid, 0.0)?;
    let outputs: Vec<f64> = (1..=cfg.n_outputs).map(|k| horizon * k as f64 / cfg.n_outputs as f64).collect();
    let viscous = cfg.mode == StudyMode::Viscous;
    let run = track(&grid, &law, &visc, bc, &ext, &initial, &outputs, opts, viscous)?;
    let volume = grid.total_volume();
    let mut rep = CellReport {
        epsilon: cell.epsilon,
        lambda: cell.lambda,
        n_r,
        n_z,
        volume,
        horizon,
        times: outputs.clone(),
        relative_energy: vec![],
        normalized: vec![],
        dissipation: vec![],
        remainder: vec![],
        rei_residual: vec![],
        e1: vec![],
        e2: vec![],
        sup_normalized: run.instants.iter().map(|i| i.relative_energy).fold(0.0, f64::max) / volume,
        max_rei_residual: f64::NEG_INFINITY,
        max_c1: run.instants.iter().map(|i| i.errors.c1).fold(0.0, f64::max),
        max_c2: run.instants.iter().map(|i| i.errors.c2).fold(0.0, f64::max),
        max_dt: run.max_dt,
        h: grid.dz.max(cell.epsilon * max_radius(&cfg.radius) / n_r as f64),
        n_steps: run.trajectory.n_steps,
        mass_drift_per_step: run.trajectory.max_mass_drift
            / (run.trajectory.n_steps.max(1) as f64 * initial.mass(&grid)),
        max_energy_residual: run.trajectory.energy.iter().map(|e| e.residual).fold(f64::NEG_INFINITY, f64::max),
        remainder_path_gap: run
            .instants
            .iter()
            .map(|i| (i.remainder.total - i.remainder.direct).abs())
            .fold(0.0, f64::max),
    };
    let mut dissipated = 0.0;
    let mut integrated = 0.0;
    let mut next = 0;
    for (k, i) in run.instants.iter().enumerate() {
        if k > 0 {
            let prev = &run.instants[k - 1];
            let dt = i.t - prev.t;
            dissipated += 0.5 * dt * (i.relative_dissipation + prev.relative_dissipation);
            integrated += 0.5 * dt * (i.remainder.total + prev.remainder.total);
        }
        let residual = i.relative_energy + dissipated - run.instants[0].relative_energy - integrated;
        rep.max_rei_residual = rep.max_rei_residual.max(residual);
        if next < outputs.len() && (i.t - outputs[next]).abs() <= 1e-12 * outputs[next].max(1.0) {
            rep.relative_energy.push(i.relative_energy);
            rep.normalized.push(i.relative_energy / volume);
            rep.dissipation.push(dissipated);
            rep.remainder.push(i.remainder.total);
            rep.rei_residual.push(residual);
            rep.e1.push(i.errors.e1);
            rep.e2.push(i.errors.e2);
            next += 1;
        }
    }
    log::info!(
        "eps = {}, lambda = {}: sup E/|Omega| = {:.4e}, {} steps",
        cell.epsilon,
        cell.lambda,
        rep.sup_normalized,
        rep.n_steps
    );
    Ok(rep)
}

fn max_radius(radius: &Profile) -> f64 {
    (0..=64).map(|k| radius.value(k as f64 / 64.0)).fold(0.0, f64::max)
}

/// Runs every cell, fits `sup E/|Ω| ≈ C x^q` above the scheme-error
/// floor and checks the relative energy inequality guard.
///
/// The floor comes from a coarse companion run of the cell with the
/// smallest abscissa at half the resolution (`n_r` is kept at 8 or more):
/// with `S_h` and `S_{2h}` the two sup values, `floor = 4/3 |S_{2h} − S_h|`.
/// The guard constant is `C = 2 max |residual| / (Δt + h²)` over the same
/// pair.
pub fn convergence_study(cfg: &StudyConfig) -> Result<RelativeEnergyReport> {
    cfg.validate()?;
    let opts = AxiOptions { limiter: cfg.limiter, ..Default::default() };
    let mut report = RelativeEnergyReport {
        mode: cfg.mode,
        cells: vec![],
        refinement: None,
        abscissa: vec![],
        sup_normalized: vec![],
        floor: 0.0,
        fit: None,
        monotone: true,
        guard: None,
    };
    if cfg.cells.is_empty() {
        return Ok(report);
    }
    report.cells =
        cfg.cells.par_iter().map(|c| run_cell(cfg, c, cfg.n_r, cfg.n_z, &opts)).collect::<Result<Vec<_>>>()?;
    report.abscissa = cfg.cells.iter().map(|c| cfg.abscissa(c)).collect();
    report.sup_normalized = report.cells.iter().map(|c| c.sup_normalized).collect();

    let finest = (0..cfg.cells.len())
        .min_by(|&a, &b| report.abscissa[a].total_cmp(&report.abscissa[b]))
        .unwrap();
    // half-resolution companion of every cell: fits that cell's guard
    // constant, and the finest one also sets the floor
    let mut coarse = cfg
        .cells
        .par_iter()
        .map(|c| run_cell(cfg, c, (cfg.n_r / 2).max(8), (cfg.n_z / 2).max(32), &opts))
        .collect::<Result<Vec<_>>>()?;
    let fine = &report.cells[finest];
    report.floor = 4.0 / 3.0 * (coarse[finest].sup_normalized - fine.sup_normalized).abs();

    let mut order: Vec<usize> = (0..cfg.cells.len()).collect();
    order.sort_by(|&a, &b| report.abscissa[b].total_cmp(&report.abscissa[a]));
    report.monotone =
        order.windows(2).all(|w| report.sup_normalized[w[1]] <= report.sup_normalized[w[0]] + report.floor);
    report.fit = match fit::power_law_above_floor(&report.abscissa, &report.sup_normalized, report.floor) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("rate fit failed: {e}");
            None
        }
    };

    let constants: Vec<f64> =
        coarse.iter().map(|c| GUARD_SAFETY * c.max_rei_residual.max(0.0) / c.tolerance_scale()).collect();
    let passed = report
        .cells
        .iter()
        .zip(&constants)
        .map(|(c, &k)| c.max_rei_residual <= k * c.tolerance_scale() + GUARD_ROUNDOFF * c.volume)
        .collect();
    let mut guard = GuardReport { constants, passed, fault_tripped: None, fault_residual: None };
    if cfg.check_fault {
        let faulty = AxiOptions { fault_flip_dissipation: true, ..opts };
        match run_cell(cfg, &cfg.cells[finest], cfg.n_r, cfg.n_z, &faulty) {
            Ok(c) => {
                guard.fault_residual = Some(c.max_rei_residual);
                guard.fault_tripped = Some(
                    c.max_rei_residual > guard.constants[finest] * c.tolerance_scale() + GUARD_ROUNDOFF * c.volume,
                );
            }
            Err(e) => {
                log::info!("faulted run broke down: {e}");
                guard.fault_tripped = Some(true);
            }
        }
    }
    report.guard = Some(guard);
    report.refinement = Some(coarse.swap_remove(finest));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn law() -> PressureLaw {
        PressureLaw::power_law(2.0, 1.0).unwrap()
    }

    fn cone(eps: f64) -> ChannelGeometry {
        ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]), eps, 16).unwrap()
    }

    fn times(n: usize, t: f64) -> Vec<f64> {
        (0..=n).map(|k| t * k as f64 / n as f64).collect()
    }

    fn pair(f: impl Fn(f64, f64) -> (f64, f64)) -> ReferencePair {
        ReferencePair::from_fn(&times(20, 0.2), 64, f).unwrap()
    }

    #[test]
    fn rejects_bad_snapshots() {
        assert!(ReferencePair::new(&[0.0, 0.1, 0.2], vec![vec![1.0; 4]; 3], vec![vec![0.0; 4]; 3]).is_err());
        assert!(ReferencePair::new(&[0.0, 0.1, 0.3, 0.4], vec![vec![1.0; 4]; 4], vec![vec![0.0; 4]; 4]).is_err());
        let mut rho = vec![vec![1.0; 4]; 4];
        rho[2][1] = 0.0;
        assert!(ReferencePair::new(&[0.0, 0.1, 0.2, 0.3], rho, vec![vec![0.0; 4]; 4]).is_err());
    }

    #[test]
    fn interpolation_reproduces_cubic_time_and_linear_space() {
        let p = pair(|t, z| (1.0 + t * t * t + 0.5 * t, (PI * z).sin() * (1.0 + t)));
        let s = p.sample(0.137, 0.5);
        assert!((s.r - (1.0 + 0.137f64.powi(3) + 0.5 * 0.137)).abs() < 1e-12);
        assert!((s.r_t - (3.0 * 0.137f64.powi(2) + 0.5)).abs() < 1e-10);
        // odd extension makes the velocity vanish at the walls
        assert!(p.sample(0.1, 0.0).v.abs() < 1e-14);
        assert!(p.sample(0.1, 1.0).v.abs() < 1e-14);
        // second-order derivatives in z
        let s = p.sample(0.0, 0.5 + 0.5 / 64.0);
        assert!((s.v_z - PI * (PI * (0.5 + 0.5 / 64.0)).cos()).abs() < 2e-3);
        assert!((s.v_zz + PI * PI * (PI * (0.5 + 0.5 / 64.0)).sin()).abs() < 2e-2);
    }

    #[test]
    fn extension_is_tangent_and_vanishes_at_caps() {
        let geom = cone(0.1);
        let p = pair(|_, z| (1.0, 0.3 * (PI * z).sin()));
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), 0.1).unwrap();
        let ext = extend_reference(&p, &tilt);
        let mut worst: f64 = 0.0;
        for k in 1..40 {
            let z = k as f64 / 40.0;
            let (r, dr, _) = geom.radius_profile().unwrap().eval(z);
            for j in 0..12 {
                let th = 2.0 * PI * j as f64 / 12.0;
                let x = [0.1 * r * th.cos(), 0.1 * r * th.sin()];
                let u = ext.eval(x, z, 0.05);
                // outward normal ∝ (x_h/|x_h|, −ε R')
                let n = [th.cos(), th.sin(), -0.1 * dr];
                worst = worst.max((u[0] * n[0] + u[1] * n[1] + u[2] * n[2]).abs());
            }
        }
        assert!(worst < 1e-14, "{worst:.3e}");
        for z in [0.0, 1.0] {
            let u = ext.eval([0.05, 0.0], z, 0.1);
            assert!(u.iter().all(|c| c.abs() < 1e-14));
        }
        // sup |U − (0, v)| shrinks linearly in ε
        let dev = |eps: f64| {
            let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&cone(eps)).unwrap(), eps).unwrap();
            let ext = extend_reference(&p, &tilt);
            (1..40)
                .map(|k| {
                    let z = k as f64 / 40.0;
                    let u = ext.eval([eps * geom.radius_profile().unwrap().value(z), 0.0], z, 0.0);
                    u[0].hypot(u[1])
                })
                .fold(0.0, f64::max)
        };
        assert!((dev(0.1) / dev(0.05) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn straight_channel_extension_is_untilted() {
        let geom = ChannelGeometry::axisymmetric(Profile::constant(1.0), 0.2, 16).unwrap();
        let p = pair(|_, z| (1.0, (PI * z).sin()));
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), 0.2).unwrap();
        let u = extend_reference(&p, &tilt).eval([0.1, 0.05], 0.3, 0.0);
        assert_eq!([u[0], u[1]], [0.0, 0.0]);
    }

    #[test]
    fn manufactured_stationary_pair_has_truncation_level_residual() {
        // r = 1/A, v = 0 solves the continuity equation exactly
        let geom = cone(0.1);
        let p = pair(|_, z| (1.0 / (PI * (1.0 + 0.5 * z).powi(2)), 0.0));
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), 0.1).unwrap();
        let ext = extend_reference(&p, &tilt);
        assert!(continuity_residual(&ext, 0.1).unwrap() < 1e-12);
        let q = pair(|_, _| (2.0, 0.0));
        assert!(continuity_residual(&extend_reference(&q, &tilt), 0.05).unwrap() < 1e-12);
    }

    fn setup(eps: f64) -> (AxiGrid, ReferencePair, ScaledTilt) {
        let geom = cone(eps);
        let grid = AxiGrid::new(&geom, 8, 32).unwrap();
        let p = ReferencePair::from_fn(&times(20, 0.2), 32, |t, z| {
            (1.0 + 0.1 * (PI * z).cos() * (1.0 - t), 0.2 * (PI * z).sin() * (1.0 + t))
        })
        .unwrap();
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), eps).unwrap();
        (grid, p, tilt)
    }

    #[test]
    fn relative_energy_of_the_reference_vanishes() {
        let (grid, p, tilt) = setup(0.1);
        let ext = extend_reference(&p, &tilt);
        let s = extended_state(&ext, &grid, 0.07).unwrap();
        assert!(relative_energy(&s, &ext, 0.07, &law(), &grid).unwrap() < 1e-30);
        let visc = ViscParams3D::new(1.0, 1.0, 0.5).unwrap();
        let i = evaluate(&s, &ext, 0.07, &law(), &visc, &grid, BcMode::SlipOnly, true).unwrap();
        for v in [i.errors.e1, i.errors.e2, i.remainder.material, i.remainder.quadratic] {
            assert!(v.abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn axial_shift_gives_kinetic_relative_energy() {
        let (grid, p, tilt) = setup(0.1);
        let ext = extend_reference(&p, &tilt);
        let mut s = extended_state(&ext, &grid, 0.0).unwrap();
        let delta = 0.03;
        for c in 0..grid.n_cells() {
            s.mom_z[c] += s.rho[c] * delta;
        }
        let e = relative_energy(&s, &ext, 0.0, &law(), &grid).unwrap();
        let exact = 0.5 * delta * delta * s.mass(&grid);
        assert!((e - exact).abs() < 1e-14 * exact.max(1.0), "{e} vs {exact}");
    }

    #[test]
    fn normalized_energy_is_independent_of_epsilon_for_straight_channels() {
        let f = |eps: f64| {
            let geom = ChannelGeometry::axisymmetric(Profile::constant(1.0), eps, 16).unwrap();
            let grid = AxiGrid::new(&geom, 8, 32).unwrap();
            let p = ReferencePair::from_fn(&times(8, 0.1), 32, |_, z| (1.0, 0.1 * (PI * z).sin())).unwrap();
            let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), eps).unwrap();
            let ext = extend_reference(&p, &tilt);
            let s = AxiState::from_fn(&grid, |_, z| (1.1 + 0.05 * z, 0.0, 0.0)).unwrap();
            relative_energy(&s, &ext, 0.0, &law(), &grid).unwrap() / grid.total_volume()
        };
        assert!((f(0.2) / f(0.05) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rest_reference_gives_zero_remainder() {
        let (grid, _, tilt) = setup(0.1);
        let p = ReferencePair::from_fn(&times(8, 0.1), 32, |_, _| (1.3, 0.0)).unwrap();
        let ext = extend_reference(&p, &tilt);
        let s = extended_state(&ext, &grid, 0.05).unwrap();
        let visc = ViscParams3D::new(1.0, 1.0, 1.0).unwrap();
        let r = remainder(&s, &ext, 0.05, &law(), &visc, &grid, BcMode::SlipOnly).unwrap();
        assert_eq!(r, Remainder::default());
    }

    #[test]
    fn remainder_paths_agree_and_quadratic_term_is_bounded() {
        let (grid, p, tilt) = setup(0.1);
        let ext = extend_reference(&p, &tilt);
        let visc = ViscParams3D::new(1.0, 0.5, 0.3).unwrap();
        let rows = ext.rows(&grid, 0.1).unwrap();
        let grad_sup = (0..grid.n_cells())
            .map(|c| {
                let g = rows[c / grid.n_r].gradient(grid.center(c).0);
                (g.a * g.a + g.b * g.b + g.c * g.c + g.d * g.d).sqrt()
            })
            .fold(0.0, f64::max);
        for seed in 0..5u32 {
            let h = |c: usize, k: u32| ((c as f64 * 12.9898 + (seed * 7 + k) as f64 * 78.233).sin() * 43758.5453).fract();
            let mut s = extended_state(&ext, &grid, 0.1).unwrap();
            for c in 0..grid.n_cells() {
                s.rho[c] *= 1.0 + 0.1 * h(c, 0);
                s.mom_r[c] += s.rho[c] * 0.05 * h(c, 1);
                s.mom_z[c] += s.rho[c] * 0.05 * h(c, 2);
            }
            let r = remainder(&s, &ext, 0.1, &law(), &visc, &grid, BcMode::SlipOnly).unwrap();
            assert!((r.total - r.direct).abs() <= 1e-10 * r.direct.abs().max(1e-12), "{r:?}");
            let kinetic: f64 = (0..grid.n_cells())
                .map(|c| {
                    let u = s.velocity(c);
                    let big = rows[c / grid.n_r].velocity(grid.center(c).0);
                    0.5 * s.rho[c] * ((u.0 - big.0).powi(2) + (u.1 - big.1).powi(2)) * grid.volume[c]
                })
                .sum();
            assert!(r.quadratic.abs() <= 2.0 * grad_sup * kinetic * (1.0 + 1e-12));
        }
    }

    #[test]
    fn straight_channel_has_no_inviscid_error_term() {
        let geom = ChannelGeometry::axisymmetric(Profile::constant(1.0), 0.1, 16).unwrap();
        let grid = AxiGrid::new(&geom, 8, 32).unwrap();
        let p = ReferencePair::from_fn(&times(20, 0.2), 32, |t, z| (1.0, 0.2 * (PI * z).sin() * (1.0 + t))).unwrap();
        let tilt = geometry::scale_to_epsilon(&geometry::tilt_field_circular(&geom).unwrap(), 0.1).unwrap();
        let ext = extend_reference(&p, &tilt);
        let s = AxiState::from_fn(&grid, |rh, z| (1.05, 0.02 * rh, 0.1 * z)).unwrap();
        let visc = ViscParams3D::new(1.0, 1.0, 1.0).unwrap();
        let e = error_terms(&s, &ext, 0.1, &law(), &visc, &grid, BcMode::SlipOnly, false).unwrap();
        assert!(e.e1.abs() <= 1e-12, "{}", e.e1);
    }

    #[test]
    fn error_terms_scale_with_epsilon() {
        let mut e1 = Vec::new();
        let mut e2 = Vec::new();
        let eps = [0.2, 0.1, 0.05];
        for &eps in &eps {
            let (grid, p, tilt) = setup(eps);
            let ext = extend_reference(&p, &tilt);
            let mut s = extended_state(&ext, &grid, 0.1).unwrap();
            // fixed radial perturbation of unit direction r̂
            for c in 0..grid.n_cells() {
                s.mom_r[c] -= s.rho[c] * 0.05;
            }
            let visc = ViscParams3D::new(1.0, 1.0, 1.0).unwrap();
            let e = error_terms(&s, &ext, 0.1, &law(), &visc, &grid, BcMode::SlipOnly, true).unwrap();
            e1.push(e.e1.abs() / grid.total_volume());
            e2.push(e.e2.abs() / grid.total_volume());
            assert!(e.smooth_reference);
        }
        let q1 = fit::power_law(&eps, &e1).unwrap().exponent;
        let q2 = fit::power_law(&eps, &e2).unwrap().exponent;
        assert!(q1 >= 0.9, "E1 exponent {q1}");
        assert!(q2 >= 0.9, "E2 exponent {q2}");
    }

    #[test]
    fn rei_residual_of_rest_is_zero() {
        let (grid, _, tilt) = setup(0.1);
        let p = ReferencePair::from_fn(&times(8, 0.1), 32, |_, _| (1.0, 0.0)).unwrap();
        let ext = extend_reference(&p, &tilt);
        let s = AxiState::rest(&grid, 1.0).unwrap();
        let visc = ViscParams3D::new(1.0, 1.0, 1.0).unwrap();
        let run =
            track(&grid, &law(), &visc, BcMode::SlipOnly, &ext, &s, &[0.01], &AxiOptions::default(), false).unwrap();
        assert!(rei_residual(&run.instants, 0.01).abs() < 1e-25);
    }

    #[test]
    fn viscous_config_rejects_zero_bulk_viscosity() {
        let cfg = StudyConfig {
            mode: StudyMode::Viscous,
            radius: Profile::polynomial(&[1.0, 0.25]),
            gamma: 2.0,
            kappa: 1.0,
            mu: 1.0,
            eta: 0.0,
            cells: vec![StudyCell { epsilon: 0.1, lambda: 1.0 }],
            density: Profile::constant(1.0),
            velocity: Profile::constant(0.0),
            horizon: 0.1,
            n_outputs: 2,
            n_r: 8,
            n_z: 32,
            snapshots_per_unit_time: 200,
            reference_dt_max: None,
            reference_model: ReferenceModel::Drift,
            limiter: Limiter::Minmod,
            check_fault: false,
        };
        match convergence_study(&cfg) {
            Err(Error::Configuration(m)) => assert!(m.contains("bulk viscosity")),
            other => panic!("{other:?}"),
        }
        let empty = StudyConfig { eta: 1.0, cells: vec![], ..cfg };
        let r = convergence_study(&empty).unwrap();
        assert!(r.cells.is_empty() && r.fit.is_none());
    }
}
