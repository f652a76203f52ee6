//! Finite-volume solvers for the nozzle Euler system and the
//! Navier–Stokes system with drift on `z ∈ (0,1)`.
//!
//! The conservative variables are `(ϱA, ϱuA)`. Fluxes are Rusanov with
//! MUSCL reconstruction of `(ϱ, u)`, time stepping is SSP-RK2, and the
//! geometric pressure source `p ∂_zA` is discretized with the same face
//! areas as the flux, so rest states are exact fixed points and
//! `Σ ϱ_i A_i Δz` is conserved to round-off.

use crate::error::{Error, Result};
use crate::geometry::{ChannelGeometry, GeometryKind};
use crate::linalg::solve_tridiagonal;
use crate::profile::Profile;
use crate::thermo::PressureLaw;
use serde::{Deserialize, Serialize};

/// Largest admissible Courant number.
pub const CFL_LIMIT: f64 = 0.45;
/// `max |u|` above which a run is declared broken down.
pub const BREAKDOWN_VELOCITY: f64 = 1e3;

/// Uniform cell-centered grid on `(0,1)` with cross-section areas.
#[derive(Debug, Clone)]
pub struct Grid1D {
    pub n_cells: usize,
    pub dz: f64,
    /// Cell centers.
    pub z: Vec<f64>,
    /// `A(z_i)` at cell centers.
    pub area: Vec<f64>,
    /// `A(z_{i±1/2})` at the `n_cells + 1` faces.
    pub face_area: Vec<f64>,
    /// `∂_zA/A` at cell centers.
    pub drift: Vec<f64>,
}

impl Grid1D {
    pub fn new(geom: &ChannelGeometry, n_cells: usize) -> Result<Self> {
        if n_cells < 16 {
            return Err(Error::Domain(format!("need at least 16 cells, got {n_cells}")));
        }
        let dz = 1.0 / n_cells as f64;
        let z: Vec<f64> = (0..n_cells).map(|i| (i as f64 + 0.5) * dz).collect();
        let area = z.iter().map(|&s| geom.area(s)).collect::<Result<Vec<_>>>()?;
        let face_area = (0..=n_cells).map(|i| geom.area(i as f64 * dz)).collect::<Result<Vec<_>>>()?;
        let drift = match geom.kind() {
            GeometryKind::Circular => {
                z.iter().zip(&area).map(|(&s, a)| geom.area_derivative_analytic(s).map(|d| d / a)).collect::<Result<_>>()?
            }
            GeometryKind::Tabulated => (0..n_cells).map(|i| (face_area[i + 1] - face_area[i]) / (dz * area[i])).collect(),
        };
        Ok(Self { n_cells, dz, z, area, face_area, drift })
    }

    /// Grid of a straight channel with `A ≡ area`.
    pub fn uniform(n_cells: usize, area: f64) -> Result<Self> {
        if !(area > 0.0) {
            return Err(Error::Domain(format!("area must be positive (got {area})")));
        }
        let r = (area / std::f64::consts::PI).sqrt();
        let g = ChannelGeometry::axisymmetric(Profile::constant(r), 1.0, n_cells.max(2))?;
        let mut grid = Self::new(&g, n_cells)?;
        grid.area.iter_mut().chain(grid.face_area.iter_mut()).for_each(|a| *a = area);
        Ok(grid)
    }
}

/// Cell values of density and momentum `m = ϱu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State1D {
    pub rho: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl State1D {
    pub fn new(rho: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        if rho.len() != momentum.len() {
            return Err(Error::Domain("density and momentum lengths differ".into()));
        }
        if let Some((i, &v)) = rho.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Positivity { cell: i, value: v });
        }
        Ok(Self { rho, momentum })
    }

    pub fn from_primitive(rho: Vec<f64>, u: &[f64]) -> Result<Self> {
        let m = rho.iter().zip(u).map(|(r, v)| r * v).collect();
        Self::new(rho, m)
    }

    /// Point values of closed-form profiles at cell centers.
    pub fn from_profiles(grid: &Grid1D, rho: &Profile, u: &Profile) -> Result<Self> {
        let r: Vec<f64> = grid.z.iter().map(|&z| rho.value(z)).collect();
        let v: Vec<f64> = grid.z.iter().map(|&z| u.value(z)).collect();
        Self::from_primitive(r, &v)
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.rho.iter().zip(&self.momentum).map(|(r, m)| m / r).collect()
    }

    /// `Σ ϱ_i A_i Δz`.
    pub fn mass(&self, grid: &Grid1D) -> f64 {
        self.rho.iter().zip(&grid.area).map(|(r, a)| r * a).sum::<f64>() * grid.dz
    }

    /// `Σ (½ϱ_iu_i² + H(ϱ_i)) A_i Δz`.
    pub fn energy(&self, grid: &Grid1D, law: &PressureLaw) -> f64 {
        (0..self.rho.len())
            .map(|i| (0.5 * self.momentum[i].powi(2) / self.rho[i] + law.potential(self.rho[i])) * grid.area[i])
            .sum::<f64>()
            * grid.dz
    }

    pub fn max_speed(&self) -> f64 {
        self.rho.iter().zip(&self.momentum).map(|(r, m)| (m / r).abs()).fold(0.0, f64::max)
    }
}

/// `μ > 0`, `η ≥ 0`; `ν = 4μ/3 + η` and drift coefficient `μ/3 + η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visc1DParams {
    pub mu: f64,
    pub eta: f64,
}

impl Visc1DParams {
    pub fn new(mu: f64, eta: f64) -> Result<Self> {
        if !(mu > 0.0) || !(eta >= 0.0) {
            return Err(Error::Domain(format!("viscosities need mu > 0 and eta >= 0 (got mu = {mu}, eta = {eta})")));
        }
        Ok(Self { mu, eta })
    }

    pub fn nu(&self) -> f64 {
        4.0 * self.mu / 3.0 + self.eta
    }

    pub fn drift_coefficient(&self) -> f64 {
        self.mu / 3.0 + self.eta
    }
}

/// Slope limiter for the piecewise-linear reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limiter {
    #[default]
    Minmod,
    /// Monotonized central: sharper than minmod at smooth extrema.
    MonotonizedCentral,
    /// Plain central slopes (no limiting); for smooth reference runs.
    Unlimited,
}

impl Limiter {
    fn slope(self, l: f64, c: f64, r: f64) -> f64 {
        let (a, b) = (c - l, r - c);
        match self {
            Limiter::Minmod => {
                if a * b <= 0.0 {
                    0.0
                } else if a.abs() < b.abs() {
                    a
                } else {
                    b
                }
            }
            Limiter::MonotonizedCentral => {
                if a * b <= 0.0 {
                    0.0
                } else {
                    let m = (2.0 * a.abs()).min(2.0 * b.abs()).min(0.5 * (a + b).abs());
                    m.copysign(a)
                }
            }
            Limiter::Unlimited => 0.5 * (a + b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme1D {
    pub limiter: Limiter,
    /// Courant number used by [`run_1d`] to pick time steps.
    pub cfl: f64,
}

impl Default for Scheme1D {
    fn default() -> Self {
        Self { limiter: Limiter::Minmod, cfl: 0.4 }
    }
}

/// Largest time step allowed by the CFL condition `Δt ≤ 0.45 Δz / max(|u| + c)`.
pub fn max_stable_dt(state: &State1D, grid: &Grid1D, law: &PressureLaw) -> f64 {
    CFL_LIMIT * grid.dz / max_wave_speed(state, law)
}

fn max_wave_speed(state: &State1D, law: &PressureLaw) -> f64 {
    state
        .rho
        .iter()
        .zip(&state.momentum)
        .map(|(&r, &m)| (m / r).abs() + law.sound_speed(r))
        .fold(0.0, f64::max)
}

fn check_positive(rho: &[f64]) -> Result<()> {
    match rho.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        Some((i, &v)) => Err(Error::Positivity { cell: i, value: v }),
        None => Ok(()),
    }
}

/// Time derivative of `(ϱ, m)` from the convective part.
fn convective_rhs(rho: &[f64], mom: &[f64], grid: &Grid1D, law: &PressureLaw, limiter: Limiter) -> (Vec<f64>, Vec<f64>) {
    let n = rho.len();
    // primitives with two reflective ghosts on each side
    let mut r = vec![0.0; n + 4];
    let mut u = vec![0.0; n + 4];
    for i in 0..n {
        r[i + 2] = rho[i];
        u[i + 2] = mom[i] / rho[i];
    }
    for g in 0..2 {
        r[1 - g] = r[2 + g];
        u[1 - g] = -u[2 + g];
        r[n + 2 + g] = r[n + 1 - g];
        u[n + 2 + g] = -u[n + 1 - g];
    }
    let mut sr = vec![0.0; n + 4];
    let mut su = vec![0.0; n + 4];
    for k in 1..n + 3 {
        sr[k] = limiter.slope(r[k - 1], r[k], r[k + 1]);
        su[k] = limiter.slope(u[k - 1], u[k], u[k + 1]);
    }
    let p: Vec<f64> = rho.iter().map(|&v| law.pressure(v)).collect();
    // face f sits between padded cells f+1 and f+2
    let mut f_mass = vec![0.0; n + 1];
    let mut f_mom = vec![0.0; n + 1];
    for f in 0..=n {
        let (kl, kr) = (f + 1, f + 2);
        let rl = r[kl] + 0.5 * sr[kl];
        let ul = u[kl] + 0.5 * su[kl];
        let rr = r[kr] - 0.5 * sr[kr];
        let ur = u[kr] - 0.5 * su[kr];
        let (pl, dpl) = law.eval_unchecked(rl);
        let (pr, dpr) = law.eval_unchecked(rr);
        let s = (ul.abs() + dpl.max(0.0).sqrt()).max(ur.abs() + dpr.max(0.0).sqrt());
        f_mass[f] = 0.5 * (rl * ul + rr * ur) - 0.5 * s * (rr - rl);
        f_mom[f] = 0.5 * (rl * ul * ul + pl + rr * ur * ur + pr) - 0.5 * s * (rr * ur - rl * ul);
    }
    let mut dr = vec![0.0; n];
    let mut dm = vec![0.0; n];
    for i in 0..n {
        let wl = grid.face_area[i] / grid.area[i];
        let wr = grid.face_area[i + 1] / grid.area[i];
        dr[i] = -(wr * f_mass[i + 1] - wl * f_mass[i]) / grid.dz;
        // A(ϱu²+p) flux balanced against p_i ∂_zA, written so that a
        // uniform pressure cancels exactly
        dm[i] = -(wr * (f_mom[i + 1] - p[i]) - wl * (f_mom[i] - p[i])) / grid.dz;
    }
    (dr, dm)
}

fn convective_step(state: &State1D, grid: &Grid1D, law: &PressureLaw, limiter: Limiter, dt: f64) -> Result<State1D> {
    if state.rho.len() != grid.n_cells {
        return Err(Error::Domain("state and grid sizes differ".into()));
    }
    let limit = max_stable_dt(state, grid, law);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Timestep { dt, limit });
    }
    let (k1r, k1m) = convective_rhs(&state.rho, &state.momentum, grid, law, limiter);
    let r1: Vec<f64> = state.rho.iter().zip(&k1r).map(|(a, b)| a + dt * b).collect();
    let m1: Vec<f64> = state.momentum.iter().zip(&k1m).map(|(a, b)| a + dt * b).collect();
    check_positive(&r1)?;
    let (k2r, k2m) = convective_rhs(&r1, &m1, grid, law, limiter);
    let rho: Vec<f64> = (0..grid.n_cells).map(|i| 0.5 * (state.rho[i] + r1[i] + dt * k2r[i])).collect();
    let momentum: Vec<f64> = (0..grid.n_cells).map(|i| 0.5 * (state.momentum[i] + m1[i] + dt * k2m[i])).collect();
    check_positive(&rho)?;
    Ok(State1D { rho, momentum })
}

/// One step of the nozzle Euler system with the default (minmod) scheme.
pub fn euler_step(state: &State1D, grid: &Grid1D, law: &PressureLaw, dt: f64) -> Result<State1D> {
    convective_step(state, grid, law, Limiter::Minmod, dt)
}

pub fn euler_step_with(state: &State1D, grid: &Grid1D, law: &PressureLaw, scheme: &Scheme1D, dt: f64) -> Result<State1D> {
    convective_step(state, grid, law, scheme.limiter, dt)
}

/// Averaged viscous operator `Lu = ν∂²u + c∂(au) + b a∂u − d a²u` with
/// `a = ∂_zA/A`.
#[derive(Debug, Clone, Copy)]
struct ViscousOperator {
    nu: f64,
    drift: f64,
    advect: f64,
    damping: f64,
}

impl ViscousOperator {
    /// `ν∂²u + (μ/3+η)∂(au)`: the drift model.
    fn drift(visc: &Visc1DParams) -> Self {
        Self { nu: visc.nu(), drift: visc.drift_coefficient(), advect: 0.0, damping: 0.0 }
    }

    /// Cross-section average of the slip-wall stress divergence:
    /// `ν∂²u + (η − 2μ/3)∂(au) + 2μ a∂u − μa²u`.
    fn slip_averaged(visc: &Visc1DParams) -> Self {
        Self { nu: visc.nu(), drift: visc.eta - 2.0 * visc.mu / 3.0, advect: 2.0 * visc.mu, damping: visc.mu }
    }
}

/// Implicit viscous update `ϱ(u − u*)/Δt = Lu` with `u = 0` at both ends.
/// Returns the new state and the discrete dissipation rate
/// `−Σ A_i u_i (Lu)_i Δz`.
fn viscous_update(state: &State1D, grid: &Grid1D, op: &ViscousOperator, dt: f64) -> Result<(State1D, f64)> {
    let n = grid.n_cells;
    let h = grid.dz;
    let ViscousOperator { nu, drift: c, advect: b, damping: d } = *op;
    let a = &grid.drift;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        diag[i] = state.rho[i] / dt + 2.0 * nu / (h * h) + d * a[i] * a[i];
        rhs[i] = state.momentum[i] / dt;
        if i > 0 {
            lower[i] = -nu / (h * h) + c * a[i - 1] / (2.0 * h) + b * a[i] / (2.0 * h);
        }
        if i + 1 < n {
            upper[i] = -nu / (h * h) - c * a[i + 1] / (2.0 * h) - b * a[i] / (2.0 * h);
        }
    }
    // antisymmetric ghosts: u_{-1} = -u_0, (au)_{-1} = -(au)_0, same at the top
    diag[0] += nu / (h * h) - c * a[0] / (2.0 * h) - b * a[0] / (2.0 * h);
    diag[n - 1] += nu / (h * h) + c * a[n - 1] / (2.0 * h) + b * a[n - 1] / (2.0 * h);
    let u = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let ghost = |i: isize| -> (f64, f64) {
        if i < 0 {
            (-u[0], -a[0] * u[0])
        } else if i as usize >= n {
            (-u[n - 1], -a[n - 1] * u[n - 1])
        } else {
            (u[i as usize], a[i as usize] * u[i as usize])
        }
    };
    let mut dissipation = 0.0;
    for i in 0..n {
        let (um, aum) = ghost(i as isize - 1);
        let (up, aup) = ghost(i as isize + 1);
        let lap = (up - 2.0 * u[i] + um) / (h * h);
        let div = (aup - aum) / (2.0 * h);
        let grad = a[i] * (up - um) / (2.0 * h);
        let lu = nu * lap + c * div + b * grad - d * a[i] * a[i] * u[i];
        dissipation -= grid.area[i] * u[i] * lu * h;
    }
    let momentum = state.rho.iter().zip(&u).map(|(r, v)| r * v).collect();
    Ok((State1D { rho: state.rho.clone(), momentum }, dissipation))
}

/// One step of the Navier–Stokes system with drift: explicit convection
/// followed by an implicit viscous solve.
pub fn ns_drift_step(state: &State1D, grid: &Grid1D, law: &PressureLaw, visc: &Visc1DParams, dt: f64) -> Result<State1D> {
    ns_drift_step_with(state, grid, law, visc, &Scheme1D::default(), dt).map(|(s, _)| s)
}

fn ns_drift_step_with(
    state: &State1D,
    grid: &Grid1D,
    law: &PressureLaw,
    visc: &Visc1DParams,
    scheme: &Scheme1D,
    dt: f64,
) -> Result<(State1D, f64)> {
    let conv = convective_step(state, grid, law, scheme.limiter, dt)?;
    viscous_update(&conv, grid, &ViscousOperator::drift(visc), dt)
}

/// Convection followed by an implicit solve with the slip-averaged operator.
fn ns_slip_step_with(
    state: &State1D,
    grid: &Grid1D,
    law: &PressureLaw,
    visc: &Visc1DParams,
    scheme: &Scheme1D,
    dt: f64,
) -> Result<(State1D, f64)> {
    let conv = convective_step(state, grid, law, scheme.limiter, dt)?;
    viscous_update(&conv, grid, &ViscousOperator::slip_averaged(visc), dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum System1D {
    Euler,
    NsDrift(Visc1DParams),
    /// Navier–Stokes with the cross-section average of the slip-wall stress
    /// divergence in place of the drift term.
    NsSlipAveraged(Visc1DParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct RunOptions1D {
    pub scheme: Scheme1D,
    pub dt_max: Option<f64>,
}


/// States at the requested output times plus conservation diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory1D {
    pub times: Vec<f64>,
    pub states: Vec<State1D>,
    /// `Σ ϱ_i A_i Δz` at each output time.
    pub mass: Vec<f64>,
    /// `∫(½ϱu² + H(ϱ))A dz` at each output time.
    pub energy: Vec<f64>,
    /// Time-integrated viscous dissipation up to each output time.
    pub dissipation: Vec<f64>,
    pub n_steps: usize,
}

/// Advances `initial` through the sorted output times.
pub fn run_1d(
    system: &System1D,
    grid: &Grid1D,
    law: &PressureLaw,
    initial: &State1D,
    outputs: &[f64],
    opts: &RunOptions1D,
) -> Result<Trajectory1D> {
    if outputs.is_empty() || outputs[0] < 0.0 || outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("output times must be non-negative and sorted".into()));
    }
    if !(opts.scheme.cfl > 0.0 && opts.scheme.cfl <= CFL_LIMIT) {
        return Err(Error::Domain(format!("Courant number must lie in (0, {CFL_LIMIT}]")));
    }
    let u0 = initial.velocity();
    if u0[0].abs() > 0.1 * initial.max_speed().max(1e-300) && initial.max_speed() > 0.0 {
        log::warn!("initial velocity does not vanish near the walls (u_0 = {:.3e})", u0[0]);
    }
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut dissipated = 0.0;
    let mut traj = Trajectory1D {
        times: Vec::new(),
        states: Vec::new(),
        mass: Vec::new(),
        energy: Vec::new(),
        dissipation: Vec::new(),
        n_steps: 0,
    };
    for &t_out in outputs {
        while t < t_out {
            let mut dt = opts.scheme.cfl * grid.dz / max_wave_speed(&state, law);
            if let Some(m) = opts.dt_max {
                dt = dt.min(m);
            }
            let last = t + dt >= t_out - 1e-12 * t_out.max(1.0);
            if last {
                dt = t_out - t;
            }
            let next = match system {
                System1D::Euler => convective_step(&state, grid, law, opts.scheme.limiter, dt)?,
                System1D::NsDrift(v) => {
                    let (s, d) = ns_drift_step_with(&state, grid, law, v, &opts.scheme, dt)?;
                    dissipated += d * dt;
                    s
                }
                System1D::NsSlipAveraged(v) => {
                    let (s, d) = ns_slip_step_with(&state, grid, law, v, &opts.scheme, dt)?;
                    dissipated += d * dt;
                    s
                }
            };
            state = next;
            t = if last { t_out } else { t + dt };
            traj.n_steps += 1;
            let vmax = state.max_speed();
            if !(vmax <= BREAKDOWN_VELOCITY) {
                return Err(Error::Breakdown { time: t, max_velocity: vmax });
            }
        }
        let (mass, energy) = (state.mass(grid), state.energy(grid, law));
        log::debug!("t = {t:.5}: mass {mass:.15e}, energy {energy:.10e}");
        traj.times.push(t_out);
        traj.states.push(state.clone());
        traj.mass.push(mass);
        traj.energy.push(energy);
        traj.dissipation.push(dissipated);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law() -> PressureLaw {
        PressureLaw::power_law(2.0, 1.0).unwrap()
    }

    fn nozzle(n: usize) -> Grid1D {
        let g = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]).with_sin(&[0.0, 0.1]), 0.1, 16).unwrap();
        Grid1D::new(&g, n).unwrap()
    }

    fn bump(grid: &Grid1D) -> State1D {
        let rho: Vec<f64> = grid.z.iter().map(|z| 1.0 + 0.2 * (-(z - 0.5f64).powi(2) / 0.01).exp()).collect();
        let u: Vec<f64> = grid.z.iter().map(|z| 0.1 * (std::f64::consts::PI * z).sin()).collect();
        State1D::from_primitive(rho, &u).unwrap()
    }

    #[test]
    fn rest_state_is_fixed() {
        let grid = nozzle(32);
        let s = State1D::from_primitive(vec![1.3; 32], &[0.0; 32]).unwrap();
        let dt = 0.9 * max_stable_dt(&s, &grid, &law());
        let e = euler_step(&s, &grid, &law(), dt).unwrap();
        assert_eq!(e, s);
        let v = Visc1DParams::new(1.0, 0.5).unwrap();
        let n = ns_drift_step(&s, &grid, &law(), &v, dt).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn mass_conserved() {
        let grid = nozzle(64);
        let s0 = bump(&grid);
        let m0 = s0.mass(&grid);
        let mut s = s0;
        for _ in 0..50 {
            let dt = 0.9 * max_stable_dt(&s, &grid, &law());
            s = euler_step(&s, &grid, &law(), dt).unwrap();
        }
        assert!((s.mass(&grid) - m0).abs() <= 1e-12 * 50.0 * m0);
    }

    #[test]
    fn constant_area_is_area_independent() {
        let s = bump(&Grid1D::uniform(40, 1.0).unwrap());
        let g1 = Grid1D::uniform(40, 1.0).unwrap();
        let g2 = Grid1D::uniform(40, 7.3).unwrap();
        let dt = 0.5 * max_stable_dt(&s, &g1, &law());
        assert_eq!(euler_step(&s, &g1, &law(), dt).unwrap(), euler_step(&s, &g2, &law(), dt).unwrap());
    }

    #[test]
    fn cfl_and_positivity_errors() {
        let grid = nozzle(32);
        let s = bump(&grid);
        let dt = max_stable_dt(&s, &grid, &law());
        assert!(matches!(euler_step(&s, &grid, &law(), 1.5 * dt), Err(Error::Timestep { .. })));
        assert!(matches!(State1D::new(vec![1.0, 0.0], vec![0.0, 0.0]), Err(Error::Positivity { cell: 1, .. })));
    }

    #[test]
    fn viscosity_validation() {
        assert!(Visc1DParams::new(0.0, 1.0).is_err());
        assert!(Visc1DParams::new(1.0, -1.0).is_err());
        let v = Visc1DParams::new(0.75, 0.5).unwrap();
        assert_eq!(v.nu(), 1.5);
        assert_eq!(v.drift_coefficient(), 0.75);
    }

    #[test]
    fn limiter_slopes() {
        assert_eq!(Limiter::Minmod.slope(0.0, 1.0, 3.0), 1.0);
        assert_eq!(Limiter::Minmod.slope(0.0, 1.0, 0.5), 0.0);
        assert_eq!(Limiter::MonotonizedCentral.slope(0.0, 1.0, 3.0), 1.5);
        assert_eq!(Limiter::Unlimited.slope(0.0, 1.0, 0.5), 0.25);
    }

    #[test]
    fn run_reports_outputs() {
        let grid = nozzle(32);
        let s = bump(&grid);
        let v = Visc1DParams::new(0.1, 0.1).unwrap();
        let tr = run_1d(&System1D::NsDrift(v), &grid, &law(), &s, &[0.0, 0.05, 0.1], &RunOptions1D::default()).unwrap();
        assert_eq!(tr.times, vec![0.0, 0.05, 0.1]);
        assert_eq!(tr.states[0], s);
        assert!(tr.dissipation[2] > 0.0);
        assert!(tr.energy[2] + tr.dissipation[2] <= tr.energy[0] + 1e-8);
        assert!(run_1d(&System1D::Euler, &grid, &law(), &s, &[0.1, 0.05], &RunOptions1D::default()).is_err());
    }

    #[test]
    fn slip_averaged_dissipation_matches_lifted_stress_work() {
        // D = ∫A[(4μ/3+η)u'² + (η+μ/3)a²u² + (2η−4μ/3)a u u'] is the
        // stress work of the lifted field (r g u, u)
        let n = 256;
        let grid = nozzle(n);
        let v = Visc1DParams::new(1.0, 0.7).unwrap();
        let s = bump(&grid);
        let (out, d) = viscous_update(&s, &grid, &ViscousOperator::slip_averaged(&v), 1e-3).unwrap();
        let u = out.velocity();
        let h = grid.dz;
        let mut q = 0.0;
        for i in 0..n {
            let um = if i == 0 { -u[0] } else { u[i - 1] };
            let up = if i + 1 == n { -u[n - 1] } else { u[i + 1] };
            let du = (up - um) / (2.0 * h);
            let a = grid.drift[i];
            q += grid.area[i]
                * (v.nu() * du * du + (v.eta + v.mu / 3.0) * a * a * u[i] * u[i] + (2.0 * v.eta - 4.0 * v.mu / 3.0) * a * u[i] * du)
                * h;
        }
        assert!(d > 0.0);
        assert!((d - q).abs() < 2e-2 * q, "discrete {d:.6e} vs quadrature {q:.6e}");
    }

    #[test]
    fn slip_averaged_operator_reduces_to_laplacian_on_straight_channel() {
        let grid = Grid1D::uniform(64, 1.0).unwrap();
        let v = Visc1DParams::new(0.8, 0.3).unwrap();
        let s = bump(&grid);
        let (a, da) = viscous_update(&s, &grid, &ViscousOperator::drift(&v), 1e-3).unwrap();
        let (b, db) = viscous_update(&s, &grid, &ViscousOperator::slip_averaged(&v), 1e-3).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
    }
}
