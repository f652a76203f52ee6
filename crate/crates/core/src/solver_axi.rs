//! Axisymmetric, swirl-free compressible Navier–Stokes solver on thin
//! circular channels `r < εR(z)` with a straight centerline.
//!
//! The meridional half-plane is covered by the mapped grid
//! `r = r̂ εR(z)`, `(r̂, z) ∈ [0,1]²`. Cells are quadrilaterals whose
//! volumes and face area vectors are computed exactly for the body of
//! revolution of their straight-edged meridional polygon, so the discrete
//! divergence of a constant field vanishes and rest states are exact.
//! Convection uses Rusanov fluxes with MUSCL reconstruction in index
//! space, viscous fluxes use face gradients built with the chain rule of
//! the mapping, and time stepping is explicit SSP-RK2.

use crate::error::{Error, Result};
use crate::geometry::ChannelGeometry;
use crate::profile::Profile;
use crate::solver1d::Limiter;
use crate::thermo::PressureLaw;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const CFL_LIMIT: f64 = 0.45;
/// Stability factor of the explicit viscous step.
pub const VISCOUS_LIMIT: f64 = 0.25;
/// Time steps collapsing below this fraction of the horizon signal a
/// breakdown of the discrete solution.
pub const MIN_RELATIVE_DT: f64 = 1e-9;

/// `μ > 0`, `η ≥ 0` and the viscosity scaling `λ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscParams3D {
    pub mu: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl ViscParams3D {
    pub fn new(mu: f64, eta: f64, lambda: f64) -> Result<Self> {
        if !(mu > 0.0) || !(eta >= 0.0) || !(lambda > 0.0) {
            return Err(Error::Domain(format!(
                "viscous parameters need mu > 0, eta >= 0, lambda > 0 (got {mu}, {eta}, {lambda})"
            )));
        }
        Ok(Self { mu, eta, lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    /// Slip on the lateral wall and impermeable slip caps.
    SlipOnly,
    /// Slip on the lateral wall and no-slip caps; needs `η > 0`.
    SlipPlusNoSlipCaps,
}

/// Axisymmetric velocity gradient: `a = ∂_r u_r`, `b = ∂_z u_r`,
/// `c = ∂_r u_z`, `d = ∂_z u_z` and the hoop strain `h = u_r / r`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxiGradient {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub h: f64,
}

impl AxiGradient {
    pub fn divergence(&self) -> f64 {
        self.a + self.h + self.d
    }
}

/// Non-zero components of the axisymmetric viscous stress.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxiStress {
    pub rr: f64,
    pub rz: f64,
    pub zz: f64,
    pub tt: f64,
}

impl AxiStress {
    pub fn trace(&self) -> f64 {
        self.rr + self.zz + self.tt
    }

    /// `S : ∇u`.
    pub fn contract(&self, g: &AxiGradient) -> f64 {
        self.rr * g.a + self.rz * (g.b + g.c) + self.zz * g.d + self.tt * g.h
    }
}

/// `S = μ(∇u + ∇ᵗu − ⅔ div u I) + η div u I`.
pub fn stress_tensor(g: &AxiGradient, mu: f64, eta: f64) -> AxiStress {
    let div = g.divergence();
    let bulk = (eta - 2.0 * mu / 3.0) * div;
    AxiStress { rr: 2.0 * mu * g.a + bulk, rz: mu * (g.b + g.c), zz: 2.0 * mu * g.d + bulk, tt: 2.0 * mu * g.h + bulk }
}

/// Mapped grid of the meridional half-plane with cached metrics.
#[derive(Debug, Clone)]
pub struct AxiGrid {
    pub n_r: usize,
    pub n_z: usize,
    pub epsilon: f64,
    pub d_rhat: f64,
    pub dz: f64,
    radius: Profile,
    /// Cell volumes of the bodies of revolution.
    pub volume: Vec<f64>,
    /// `Σ S_r` over a cell's faces, i.e. `2π` times its meridional area.
    hoop: Vec<f64>,
    /// Area vectors `(S_r, S_z)` of constant-`r̂` faces, oriented to `+r̂`.
    rface: Vec<[f64; 2]>,
    /// Area vectors of constant-`z` faces, oriented to `+z`.
    zface: Vec<[f64; 2]>,
    /// `(∂r̂/∂r, ∂r̂/∂z)` at cell centers, r-faces and z-faces.
    cell_metric: Vec<[f64; 2]>,
    rface_metric: Vec<[f64; 2]>,
    zface_metric: Vec<[f64; 2]>,
    /// Physical radius at cell centers and at r-/z-face centers.
    cell_r: Vec<f64>,
    rface_r: Vec<f64>,
    zface_r: Vec<f64>,
    /// Radial cell width.
    cell_dr: Vec<f64>,
}

impl AxiGrid {
    pub fn new(geom: &ChannelGeometry, n_r: usize, n_z: usize) -> Result<Self> {
        if !geom.is_axisymmetric() {
            return Err(Error::UnsupportedKind("the axisymmetric solver needs a circular channel with straight centerline".into()));
        }
        if n_r < 8 || n_z < 32 {
            return Err(Error::Domain(format!("grid needs n_r >= 8 and n_z >= 32 (got {n_r} x {n_z})")));
        }
        let radius = geom.radius_profile().unwrap().clone();
        let eps = geom.epsilon;
        let (d_rhat, dz) = (1.0 / n_r as f64, 1.0 / n_z as f64);
        let node_r = |j: usize, k: usize| j as f64 * d_rhat * eps * radius.value(k as f64 * dz);
        let metric = |rhat: f64, z: f64| {
            let (r, dr, _) = radius.eval(z);
            [1.0 / (eps * r), -rhat * dr / r]
        };
        let mut rface = vec![[0.0; 2]; (n_r + 1) * n_z];
        let mut rface_metric = vec![[0.0; 2]; (n_r + 1) * n_z];
        let mut rface_r = vec![0.0; (n_r + 1) * n_z];
        for k in 0..n_z {
            for j in 0..=n_r {
                let (ra, rb) = (node_r(j, k), node_r(j, k + 1));
                rface[k * (n_r + 1) + j] = [PI * (ra + rb) * dz, -PI * (ra + rb) * (rb - ra)];
                rface_metric[k * (n_r + 1) + j] = metric(j as f64 * d_rhat, (k as f64 + 0.5) * dz);
                rface_r[k * (n_r + 1) + j] = 0.5 * (ra + rb);
            }
        }
        let mut zface = vec![[0.0; 2]; n_r * (n_z + 1)];
        let mut zface_metric = vec![[0.0; 2]; n_r * (n_z + 1)];
        let mut zface_r = vec![0.0; n_r * (n_z + 1)];
        for k in 0..=n_z {
            for j in 0..n_r {
                let (ra, rb) = (node_r(j, k), node_r(j + 1, k));
                zface[k * n_r + j] = [0.0, PI * (ra + rb) * (rb - ra)];
                zface_metric[k * n_r + j] = metric((j as f64 + 0.5) * d_rhat, k as f64 * dz);
                zface_r[k * n_r + j] = 0.5 * (ra + rb);
            }
        }
        let n = n_r * n_z;
        let mut volume = vec![0.0; n];
        let mut hoop = vec![0.0; n];
        let mut cell_metric = vec![[0.0; 2]; n];
        let mut cell_r = vec![0.0; n];
        let mut cell_dr = vec![0.0; n];
        for k in 0..n_z {
            for j in 0..n_r {
                let poly = [
                    [node_r(j, k), k as f64 * dz],
                    [node_r(j + 1, k), k as f64 * dz],
                    [node_r(j + 1, k + 1), (k + 1) as f64 * dz],
                    [node_r(j, k + 1), (k + 1) as f64 * dz],
                ];
                let mut moment = 0.0;
                for i in 0..4 {
                    let (p, q) = (poly[i], poly[(i + 1) % 4]);
                    moment += (p[0] + q[0]) * (p[0] * q[1] - q[0] * p[1]);
                }
                let c = k * n_r + j;
                volume[c] = 2.0 * PI * moment / 6.0;
                if !(volume[c] > 0.0) {
                    return Err(Error::DegenerateGeometry(format!("cell ({j}, {k}) has non-positive volume")));
                }
                hoop[c] = rface[k * (n_r + 1) + j + 1][0] - rface[k * (n_r + 1) + j][0];
                let (rh, zc) = ((j as f64 + 0.5) * d_rhat, (k as f64 + 0.5) * dz);
                cell_metric[c] = metric(rh, zc);
                cell_r[c] = rh * eps * radius.value(zc);
                cell_dr[c] = d_rhat * eps * radius.value(zc);
            }
        }
        Ok(Self {
            n_r,
            n_z,
            epsilon: eps,
            d_rhat,
            dz,
            radius,
            volume,
            hoop,
            rface,
            zface,
            cell_metric,
            rface_metric,
            zface_metric,
            cell_r,
            rface_r,
            zface_r,
            cell_dr,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_r * self.n_z
    }

    #[inline]
    pub fn cell(&self, j: usize, k: usize) -> usize {
        k * self.n_r + j
    }

    /// Reference coordinates `(r̂, z)` of a cell center.
    pub fn reference_center(&self, c: usize) -> (f64, f64) {
        let (j, k) = (c % self.n_r, c / self.n_r);
        ((j as f64 + 0.5) * self.d_rhat, (k as f64 + 0.5) * self.dz)
    }

    /// Physical `(r, z)` of a cell center.
    pub fn center(&self, c: usize) -> (f64, f64) {
        (self.cell_r[c], self.reference_center(c).1)
    }

    pub fn radius(&self, z: f64) -> f64 {
        self.radius.value(z)
    }

    pub fn radius_profile(&self) -> &Profile {
        &self.radius
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().sum()
    }

    /// Outward unit normal `(n_r, n_z)` of the lateral wall in row `k`.
    pub fn lateral_normal(&self, k: usize) -> [f64; 2] {
        let s = self.rface[k * (self.n_r + 1) + self.n_r];
        let l = (s[0] * s[0] + s[1] * s[1]).sqrt();
        [s[0] / l, s[1] / l]
    }

    /// Area vector of the lateral wall face in row `k`.
    pub fn lateral_face(&self, k: usize) -> [f64; 2] {
        self.rface[k * (self.n_r + 1) + self.n_r]
    }

    /// Largest discrepancy of the geometric conservation laws
    /// `Σ_faces S_r = 2π A_mer` and `Σ_faces S_z = 0`, relative to the
    /// face areas involved.
    pub fn geometric_conservation_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n_z {
            for j in 0..self.n_r {
                let rl = self.rface[k * (self.n_r + 1) + j];
                let rr = self.rface[k * (self.n_r + 1) + j + 1];
                let zb = self.zface[k * self.n_r + j];
                let zt = self.zface[(k + 1) * self.n_r + j];
                let sz = rr[1] - rl[1] + zt[1] - zb[1];
                let scale = rr[0].abs() + zt[1].abs() + zb[1].abs();
                worst = worst.max(sz.abs() / scale);
            }
        }
        worst
    }
}

/// Conserved variables per cell: `ϱ`, `ϱu_r`, `ϱu_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiState {
    pub rho: Vec<f64>,
    pub mom_r: Vec<f64>,
    pub mom_z: Vec<f64>,
}

impl AxiState {
    /// Samples `(ϱ, u_r, u_z)` as functions of the reference center `(r̂, z)`.
    pub fn from_fn(grid: &AxiGrid, f: impl Fn(f64, f64) -> (f64, f64, f64)) -> Result<Self> {
        let n = grid.n_cells();
        let mut s = Self { rho: vec![0.0; n], mom_r: vec![0.0; n], mom_z: vec![0.0; n] };
        for c in 0..n {
            let (rh, z) = grid.reference_center(c);
            let (rho, ur, uz) = f(rh, z);
            if !(rho > 0.0) {
                return Err(Error::Positivity { cell: c, value: rho });
            }
            s.rho[c] = rho;
            s.mom_r[c] = rho * ur;
            s.mom_z[c] = rho * uz;
        }
        Ok(s)
    }

    pub fn rest(grid: &AxiGrid, rho: f64) -> Result<Self> {
        Self::from_fn(grid, |_, _| (rho, 0.0, 0.0))
    }

    pub fn velocity(&self, c: usize) -> (f64, f64) {
        (self.mom_r[c] / self.rho[c], self.mom_z[c] / self.rho[c])
    }

    pub fn mass(&self, grid: &AxiGrid) -> f64 {
        self.rho.iter().zip(&grid.volume).map(|(r, v)| r * v).sum()
    }

    pub fn kinetic_energy(&self, grid: &AxiGrid) -> f64 {
        (0..self.rho.len())
            .map(|c| 0.5 * (self.mom_r[c].powi(2) + self.mom_z[c].powi(2)) / self.rho[c] * grid.volume[c])
            .sum()
    }

    pub fn potential_energy(&self, grid: &AxiGrid, law: &PressureLaw) -> f64 {
        self.rho.iter().zip(&grid.volume).map(|(&r, v)| law.potential(r) * v).sum()
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.rho.len())
            .map(|c| (self.mom_r[c].powi(2) + self.mom_z[c].powi(2)).sqrt() / self.rho[c])
            .fold(0.0, f64::max)
    }

    /// Cells of row `k` as `(ϱ, u_r, u_z)`.
    pub fn row(&self, grid: &AxiGrid, k: usize) -> Vec<(f64, f64, f64)> {
        (0..grid.n_r)
            .map(|j| {
                let c = grid.cell(j, k);
                let (ur, uz) = self.velocity(c);
                (self.rho[c], ur, uz)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiOptions {
    pub limiter: Limiter,
    /// Fraction of the stability limit used by [`run_axi`].
    pub safety: f64,
    /// Flips the sign of the Rusanov dissipation; a deliberately broken
    /// scheme used to check that energy diagnostics catch faults.
    #[doc(hidden)]
    #[serde(default, skip_serializing)]
    pub fault_flip_dissipation: bool,
}

impl Default for AxiOptions {
    fn default() -> Self {
        Self { limiter: Limiter::Minmod, safety: 0.8, fault_flip_dissipation: false }
    }
}

/// Padded primitive arrays with two ghost layers on every side.
struct Padded {
    w: usize,
    rho: Vec<f64>,
    ur: Vec<f64>,
    uz: Vec<f64>,
}

impl Padded {
    #[inline]
    fn at(&self, j: isize, k: isize) -> usize {
        (k + 2) as usize * self.w + (j + 2) as usize
    }

    fn get(&self, j: isize, k: isize) -> [f64; 3] {
        let i = self.at(j, k);
        [self.rho[i], self.ur[i], self.uz[i]]
    }

    fn set(&mut self, j: isize, k: isize, v: [f64; 3]) {
        let i = self.at(j, k);
        self.rho[i] = v[0];
        self.ur[i] = v[1];
        self.uz[i] = v[2];
    }
}

fn pad(grid: &AxiGrid, rho: &[f64], mr: &[f64], mz: &[f64], bc: BcMode) -> Padded {
    let (nr, nz) = (grid.n_r as isize, grid.n_z as isize);
    let w = grid.n_r + 4;
    let size = w * (grid.n_z + 4);
    let mut p = Padded { w, rho: vec![0.0; size], ur: vec![0.0; size], uz: vec![0.0; size] };
    for k in 0..nz {
        for j in 0..nr {
            let c = grid.cell(j as usize, k as usize);
            p.set(j, k, [rho[c], mr[c] / rho[c], mz[c] / rho[c]]);
        }
        let n = grid.lateral_normal(k as usize);
        for g in 0..2 {
            // axis parity
            let q = p.get(g, k);
            p.set(-1 - g, k, [q[0], -q[1], q[2]]);
            // lateral mirror u − 2(u·n)n
            let q = p.get(nr - 1 - g, k);
            let un = q[1] * n[0] + q[2] * n[1];
            p.set(nr + g, k, [q[0], q[1] - 2.0 * un * n[0], q[2] - 2.0 * un * n[1]]);
        }
    }
    for j in -2..nr + 2 {
        for g in 0..2 {
            for (src, dst) in [(g, -1 - g), (nz - 1 - g, nz + g)] {
                let q = p.get(j, src);
                let v = match bc {
                    BcMode::SlipOnly => [q[0], q[1], -q[2]],
                    BcMode::SlipPlusNoSlipCaps => [q[0], -q[1], -q[2]],
                };
                p.set(j, dst, v);
            }
        }
    }
    p
}

#[inline]
fn rusanov(l: [f64; 3], r: [f64; 3], s: [f64; 2], law: &PressureLaw, flip: bool) -> [f64; 3] {
    let area = (s[0] * s[0] + s[1] * s[1]).sqrt();
    let (pl, dpl) = law.eval_unchecked(l[0]);
    let (pr, dpr) = law.eval_unchecked(r[0]);
    let vl = l[1] * s[0] + l[2] * s[1];
    let vr = r[1] * s[0] + r[2] * s[1];
    let mut a = ((vl / area).abs() + dpl.max(0.0).sqrt()).max((vr / area).abs() + dpr.max(0.0).sqrt()) * area;
    if flip {
        a = -a;
    }
    [
        0.5 * (l[0] * vl + r[0] * vr) - 0.5 * a * (r[0] - l[0]),
        0.5 * (l[0] * l[1] * vl + pl * s[0] + r[0] * r[1] * vr + pr * s[0]) - 0.5 * a * (r[0] * r[1] - l[0] * l[1]),
        0.5 * (l[0] * l[2] * vl + pl * s[1] + r[0] * r[2] * vr + pr * s[1]) - 0.5 * a * (r[0] * r[2] - l[0] * l[2]),
    ]
}

/// Outward flux through an impermeable face with outward area vector `s`
/// for an interior state mirrored in the normal velocity: no mass flux
/// and no tangential momentum flux.
#[inline]
fn slip_wall_flux(q: [f64; 3], s: [f64; 2], law: &PressureLaw) -> [f64; 3] {
    let (p, dp) = law.eval_unchecked(q[0]);
    let area = (s[0] * s[0] + s[1] * s[1]).sqrt();
    let w = (q[1] * s[0] + q[2] * s[1]) / area;
    let a = w.abs() + dp.max(0.0).sqrt();
    let f = p + q[0] * w * w + a * q[0] * w;
    [0.0, f * s[0], f * s[1]]
}

/// Outward flux through a no-slip face (ghost velocity `−u`).
#[inline]
fn no_slip_wall_flux(q: [f64; 3], s: [f64; 2], law: &PressureLaw) -> [f64; 3] {
    let (p, dp) = law.eval_unchecked(q[0]);
    let area = (s[0] * s[0] + s[1] * s[1]).sqrt();
    let w = (q[1] * s[0] + q[2] * s[1]) / area;
    let a = w.abs() + dp.max(0.0).sqrt();
    let mut f = [0.0; 3];
    for d in 0..2 {
        f[d + 1] = p * s[d] + (q[0] * q[d + 1] * w + a * q[0] * q[d + 1]) * area;
    }
    f
}

/// Physical velocity gradient from reference derivatives (`∂r̂`, `∂z|_r̂`)
/// of `(u_r, u_z)` with metric `m = (∂r̂/∂r, ∂r̂/∂z)`.
#[inline]
fn physical_gradient(dr_hat: [f64; 2], dz_hat: [f64; 2], m: [f64; 2], ur: f64, r: f64) -> AxiGradient {
    let a = m[0] * dr_hat[0];
    let b = dz_hat[0] + m[1] * dr_hat[0];
    let c = m[0] * dr_hat[1];
    let d = dz_hat[1] + m[1] * dr_hat[1];
    let h = if r > 0.0 { ur / r } else { a };
    AxiGradient { a, b, c, d, h }
}

/// Velocity gradients at cell centers by central differences in index space.
fn cell_gradients(grid: &AxiGrid, p: &Padded) -> Vec<AxiGradient> {
    let mut out = Vec::with_capacity(grid.n_cells());
    for k in 0..grid.n_z as isize {
        for j in 0..grid.n_r as isize {
            let c = grid.cell(j as usize, k as usize);
            let (e, w, n, s, q) = (p.get(j + 1, k), p.get(j - 1, k), p.get(j, k + 1), p.get(j, k - 1), p.get(j, k));
            let drh = [(e[1] - w[1]) / (2.0 * grid.d_rhat), (e[2] - w[2]) / (2.0 * grid.d_rhat)];
            let dzh = [(n[1] - s[1]) / (2.0 * grid.dz), (n[2] - s[2]) / (2.0 * grid.dz)];
            out.push(physical_gradient(drh, dzh, grid.cell_metric[c], q[1], grid.cell_r[c]));
        }
    }
    out
}

/// Time derivatives of the conserved variables.
fn rhs(
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    bc: BcMode,
    opts: &AxiOptions,
    rho: &[f64],
    mr: &[f64],
    mz: &[f64],
) -> [Vec<f64>; 3] {
    let (nr, nz) = (grid.n_r, grid.n_z);
    let p = pad(grid, rho, mr, mz, bc);
    let lim = opts.limiter;
    let recon = |j: isize, k: isize, dir: (isize, isize), sign: f64| -> [f64; 3] {
        let (q, a, b) = (p.get(j, k), p.get(j - dir.0, k - dir.1), p.get(j + dir.0, k + dir.1));
        let mut out = [0.0; 3];
        for v in 0..3 {
            out[v] = q[v] + sign * 0.5 * lim_slope(lim, a[v], q[v], b[v]);
        }
        out
    };
    let mut acc = [vec![0.0; nr * nz], vec![0.0; nr * nz], vec![0.0; nr * nz]];
    let pres: Vec<f64> = rho.iter().map(|&r| law.pressure(r)).collect();
    let (mu, eta, lam) = (visc.mu, visc.eta, visc.lambda);
    // accumulate F·S − p_cell S so that uniform pressure cancels exactly
    let mut add = |c: usize, f: [f64; 3], s: [f64; 2], sign: f64| {
        acc[0][c] -= sign * f[0];
        acc[1][c] -= sign * (f[1] - pres[c] * s[0]);
        acc[2][c] -= sign * (f[2] - pres[c] * s[1]);
    };
    // constant-r̂ faces; j = 0 is the axis where the face area vanishes
    for k in 0..nz {
        for j in 1..=nr {
            let s = grid.rface[k * (nr + 1) + j];
            let m = grid.rface_metric[k * (nr + 1) + j];
            let (ji, ki) = (j as isize, k as isize);
            let left = grid.cell(j - 1, k);
            let ql = p.get(ji - 1, ki);
            let qr = p.get(ji, ki);
            // viscous face gradient: compact in r̂, averaged in z
            let (qln, qls, qrn, qrs) = (p.get(ji - 1, ki + 1), p.get(ji - 1, ki - 1), p.get(ji, ki + 1), p.get(ji, ki - 1));
            let drh = [(qr[1] - ql[1]) / grid.d_rhat, (qr[2] - ql[2]) / grid.d_rhat];
            let dzh = [
                (qln[1] - qls[1] + qrn[1] - qrs[1]) / (4.0 * grid.dz),
                (qln[2] - qls[2] + qrn[2] - qrs[2]) / (4.0 * grid.dz),
            ];
            let g = physical_gradient(drh, dzh, m, 0.5 * (ql[1] + qr[1]), grid.rface_r[k * (nr + 1) + j]);
            let st = stress_tensor(&g, mu, eta);
            let mut traction = [st.rr * s[0] + st.rz * s[1], st.rz * s[0] + st.zz * s[1]];
            let conv = if j == nr {
                // lateral slip wall: keep only the normal traction
                let area = (s[0] * s[0] + s[1] * s[1]).sqrt();
                let n = [s[0] / area, s[1] / area];
                let tn = (traction[0] * n[0] + traction[1] * n[1]) / area;
                traction = [tn * s[0], tn * s[1]];
                slip_wall_flux(recon(ji - 1, ki, (1, 0), 1.0), s, law)
            } else {
                rusanov(recon(ji - 1, ki, (1, 0), 1.0), recon(ji, ki, (1, 0), -1.0), s, law, opts.fault_flip_dissipation)
            };
            let f = [conv[0], conv[1] - lam * traction[0], conv[2] - lam * traction[1]];
            add(left, f, s, 1.0);
            if j < nr {
                add(grid.cell(j, k), f, s, -1.0);
            }
        }
    }
    // constant-z faces, including both caps
    for k in 0..=nz {
        for j in 0..nr {
            let s = grid.zface[k * nr + j];
            let m = grid.zface_metric[k * nr + j];
            let (ji, ki) = (j as isize, k as isize);
            let qb = p.get(ji, ki - 1);
            let qt = p.get(ji, ki);
            let (qbe, qbw, qte, qtw) = (p.get(ji + 1, ki - 1), p.get(ji - 1, ki - 1), p.get(ji + 1, ki), p.get(ji - 1, ki));
            let drh = [
                (qbe[1] - qbw[1] + qte[1] - qtw[1]) / (4.0 * grid.d_rhat),
                (qbe[2] - qbw[2] + qte[2] - qtw[2]) / (4.0 * grid.d_rhat),
            ];
            let dzh = [(qt[1] - qb[1]) / grid.dz, (qt[2] - qb[2]) / grid.dz];
            let g = physical_gradient(drh, dzh, m, 0.5 * (qb[1] + qt[1]), grid.zface_r[k * nr + j]);
            let st = stress_tensor(&g, mu, eta);
            let mut traction = [st.rz * s[1], st.zz * s[1]];
            let area = s[1];
            let cap = k == 0 || k == nz;
            let conv = if cap {
                let (q, sign) = if k == 0 { (recon(ji, ki, (0, 1), -1.0), -1.0) } else { (recon(ji, ki - 1, (0, 1), 1.0), 1.0) };
                let out_s = [0.0, sign * area];
                let out = match bc {
                    BcMode::SlipOnly => {
                        traction[0] = 0.0;
                        slip_wall_flux(q, out_s, law)
                    }
                    BcMode::SlipPlusNoSlipCaps => no_slip_wall_flux(q, out_s, law),
                };
                // flux in the +z orientation of the face
                [sign * out[0], sign * out[1], sign * out[2]]
            } else {
                rusanov(recon(ji, ki - 1, (0, 1), 1.0), recon(ji, ki, (0, 1), -1.0), s, law, opts.fault_flip_dissipation)
            };
            let f = [conv[0], conv[1] - lam * traction[0], conv[2] - lam * traction[1]];
            if k > 0 {
                add(grid.cell(j, k - 1), f, s, 1.0);
            }
            if k < nz {
                add(grid.cell(j, k), f, s, -1.0);
            }
        }
    }
    // hoop source −λ S_θθ Σ S_r (the pressure part cancels against the face sums)
    let grads = cell_gradients(grid, &p);
    for c in 0..nr * nz {
        let st = stress_tensor(&grads[c], mu, eta);
        acc[1][c] -= lam * st.tt * grid.hoop[c];
        for a in acc.iter_mut() {
            a[c] /= grid.volume[c];
        }
    }
    acc
}

#[inline]
fn lim_slope(l: Limiter, a: f64, c: f64, b: f64) -> f64 {
    let (x, y) = (c - a, b - c);
    match l {
        Limiter::Minmod => {
            if x * y <= 0.0 {
                0.0
            } else if x.abs() < y.abs() {
                x
            } else {
                y
            }
        }
        Limiter::MonotonizedCentral => {
            if x * y <= 0.0 {
                0.0
            } else {
                (2.0 * x.abs()).min(2.0 * y.abs()).min(0.5 * (x + y).abs()).copysign(x)
            }
        }
        Limiter::Unlimited => 0.5 * (x + y),
    }
}

/// Largest stable step: convective CFL on the mapped grid and the
/// explicit viscous restriction.
pub fn max_stable_dt(state: &AxiState, grid: &AxiGrid, law: &PressureLaw, visc: &ViscParams3D) -> f64 {
    let nu = (4.0 * visc.mu / 3.0 + visc.eta).max(visc.mu + visc.eta);
    let mut dt = f64::INFINITY;
    for c in 0..grid.n_cells() {
        let (ur, uz) = state.velocity(c);
        let cs = law.sound_speed(state.rho[c]);
        let dr = grid.cell_dr[c];
        let conv = (ur.abs() + cs) / dr + (uz.abs() + cs) / grid.dz;
        dt = dt.min(CFL_LIMIT / conv);
        let diff = visc.lambda * nu / state.rho[c] * (1.0 / (dr * dr) + 1.0 / (grid.dz * grid.dz));
        dt = dt.min(VISCOUS_LIMIT / diff);
    }
    dt
}

fn check_configuration(visc: &ViscParams3D, bc: BcMode) -> Result<()> {
    if bc == BcMode::SlipPlusNoSlipCaps && !(visc.eta > 0.0) {
        return Err(Error::Configuration(
            "no-slip caps require strictly positive bulk viscosity (eta > 0)".into(),
        ));
    }
    Ok(())
}

fn positive(rho: &[f64]) -> Result<()> {
    match rho.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        Some((i, &v)) => Err(Error::Positivity { cell: i, value: v }),
        None => Ok(()),
    }
}

/// One SSP-RK2 step.
pub fn axi_step(
    state: &AxiState,
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    dt: f64,
    bc: BcMode,
    opts: &AxiOptions,
) -> Result<AxiState> {
    check_configuration(visc, bc)?;
    let limit = max_stable_dt(state, grid, law, visc);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Timestep { dt, limit });
    }
    step_unchecked(state, grid, law, visc, dt, bc, opts)
}

fn step_unchecked(
    state: &AxiState,
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    dt: f64,
    bc: BcMode,
    opts: &AxiOptions,
) -> Result<AxiState> {
    let n = grid.n_cells();
    let k1 = rhs(grid, law, visc, bc, opts, &state.rho, &state.mom_r, &state.mom_z);
    let s1 = AxiState {
        rho: (0..n).map(|c| state.rho[c] + dt * k1[0][c]).collect(),
        mom_r: (0..n).map(|c| state.mom_r[c] + dt * k1[1][c]).collect(),
        mom_z: (0..n).map(|c| state.mom_z[c] + dt * k1[2][c]).collect(),
    };
    positive(&s1.rho)?;
    let k2 = rhs(grid, law, visc, bc, opts, &s1.rho, &s1.mom_r, &s1.mom_z);
    let out = AxiState {
        rho: (0..n).map(|c| 0.5 * (state.rho[c] + s1.rho[c] + dt * k2[0][c])).collect(),
        mom_r: (0..n).map(|c| 0.5 * (state.mom_r[c] + s1.mom_r[c] + dt * k2[1][c])).collect(),
        mom_z: (0..n).map(|c| 0.5 * (state.mom_z[c] + s1.mom_z[c] + dt * k2[2][c])).collect(),
    };
    positive(&out.rho)?;
    Ok(out)
}

/// Cell-centered velocity gradients of a state (including the hoop strain).
pub fn velocity_gradients(state: &AxiState, grid: &AxiGrid, bc: BcMode) -> Vec<AxiGradient> {
    let p = pad(grid, &state.rho, &state.mom_r, &state.mom_z, bc);
    cell_gradients(grid, &p)
}

/// Instantaneous dissipation `λ ∫ S(∇u) : ∇u`.
pub fn dissipation_rate(state: &AxiState, grid: &AxiGrid, visc: &ViscParams3D, bc: BcMode) -> f64 {
    let g = velocity_gradients(state, grid, bc);
    visc.lambda
        * g.iter().zip(&grid.volume).map(|(g, v)| stress_tensor(g, visc.mu, visc.eta).contract(g) * v).sum::<f64>()
}

/// Energy bookkeeping at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// `λ ∫₀ᵗ ∫ S(∇u) : ∇u`.
    pub dissipation: f64,
    /// `E(t) + D(t) − E(0)`.
    pub residual: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxiTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<AxiState>,
    pub energy: Vec<EnergySample>,
    pub n_steps: usize,
    /// Largest `|mass − mass(0)|` seen over all steps.
    pub max_mass_drift: f64,
}

/// Runs to the sorted output times. The observer sees every accepted
/// step as `(t, Δt, state)`, starting with `(0, 0, initial)`.
#[allow(clippy::too_many_arguments)]
pub fn run_axi_observed(
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    bc: BcMode,
    initial: &AxiState,
    outputs: &[f64],
    opts: &AxiOptions,
    observer: &mut dyn FnMut(f64, f64, &AxiState) -> Result<()>,
) -> Result<AxiTrajectory> {
    check_configuration(visc, bc)?;
    if outputs.is_empty() || outputs[0] < 0.0 || outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("output times must be non-negative and sorted".into()));
    }
    if !(opts.safety > 0.0 && opts.safety <= 1.0) {
        return Err(Error::Domain("safety factor must lie in (0, 1]".into()));
    }
    let t_final = outputs[outputs.len() - 1];
    let mass0 = initial.mass(grid);
    let e0 = initial.kinetic_energy(grid) + initial.potential_energy(grid, law);
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut dissipated = 0.0;
    let mut rate = dissipation_rate(&state, grid, visc, bc);
    let mut traj = AxiTrajectory { times: vec![], states: vec![], energy: vec![], n_steps: 0, max_mass_drift: 0.0 };
    observer(0.0, 0.0, &state)?;
    for &t_out in outputs {
        while t < t_out {
            let mut dt = opts.safety * max_stable_dt(&state, grid, law, visc);
            if !(dt > MIN_RELATIVE_DT * t_final) {
                return Err(Error::Breakdown { time: t, max_velocity: state.max_speed() });
            }
            let last = t + dt >= t_out - 1e-12 * t_out.max(1.0);
            if last {
                dt = t_out - t;
            }
            state = step_unchecked(&state, grid, law, visc, dt, bc, opts)?;
            t = if last { t_out } else { t + dt };
            traj.n_steps += 1;
            let new_rate = dissipation_rate(&state, grid, visc, bc);
            dissipated += 0.5 * dt * (rate + new_rate);
            rate = new_rate;
            traj.max_mass_drift = traj.max_mass_drift.max((state.mass(grid) - mass0).abs());
            let v = state.max_speed();
            if !(v <= crate::solver1d::BREAKDOWN_VELOCITY) {
                return Err(Error::Breakdown { time: t, max_velocity: v });
            }
            observer(t, dt, &state)?;
        }
        let (k, p) = (state.kinetic_energy(grid), state.potential_energy(grid, law));
        traj.times.push(t_out);
        traj.states.push(state.clone());
        traj.energy.push(EnergySample {
            t: t_out,
            kinetic: k,
            potential: p,
            dissipation: dissipated,
            residual: k + p + dissipated - e0,
            mass: state.mass(grid),
        });
    }
    Ok(traj)
}

pub fn run_axi(
    grid: &AxiGrid,
    law: &PressureLaw,
    visc: &ViscParams3D,
    bc: BcMode,
    initial: &AxiState,
    outputs: &[f64],
    opts: &AxiOptions,
) -> Result<AxiTrajectory> {
    run_axi_observed(grid, law, visc, bc, initial, outputs, opts, &mut |_, _, _| Ok(()))
}

/// Energy time series of a trajectory.
pub fn energy_monitor(traj: &AxiTrajectory) -> &[EnergySample] {
    &traj.energy
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law() -> PressureLaw {
        PressureLaw::power_law(2.0, 1.0).unwrap()
    }

    fn cone(eps: f64) -> ChannelGeometry {
        ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]), eps, 16).unwrap()
    }

    #[test]
    fn stress_examples() {
        let (mu, eta) = (1.3, 0.4);
        assert_eq!(stress_tensor(&AxiGradient::default(), mu, eta), AxiStress::default());
        // u = (0, z)
        let s = stress_tensor(&AxiGradient { d: 1.0, ..Default::default() }, mu, eta);
        assert!((s.zz - (mu * (2.0 - 2.0 / 3.0) + eta)).abs() < 1e-15);
        assert!((s.rr - (eta - 2.0 * mu / 3.0)).abs() < 1e-15);
        assert!((s.tt - s.rr).abs() < 1e-15);
        assert!((s.trace() - 3.0 * eta).abs() < 1e-14);
        // u = −x/3: a = h = d = −1/3
        let g = AxiGradient { a: -1.0 / 3.0, d: -1.0 / 3.0, h: -1.0 / 3.0, ..Default::default() };
        let s = stress_tensor(&g, mu, eta);
        for v in [s.rr, s.zz, s.tt] {
            assert!((v - (-eta)).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_conservation() {
        let g = AxiGrid::new(&cone(0.1), 8, 32).unwrap();
        assert!(g.geometric_conservation_residual() < 1e-13);
        // volume of the truncated cone ε²π∫R² = ε²π·19/12
        let v = g.total_volume();
        let exact = 0.01 * PI * 19.0 / 12.0;
        assert!((v - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn rejects_tilted_centerline_and_small_grids() {
        let tilted =
            ChannelGeometry::circular([Profile::polynomial(&[0.0, 1.0]), Profile::constant(0.0)], Profile::constant(1.0), 0.1, 8)
                .unwrap();
        assert!(AxiGrid::new(&tilted, 8, 32).is_err());
        assert!(AxiGrid::new(&cone(0.1), 4, 32).is_err());
    }

    #[test]
    fn rest_state_is_exact() {
        let grid = AxiGrid::new(&cone(0.1), 8, 32).unwrap();
        let s = AxiState::rest(&grid, 1.7).unwrap();
        let v = ViscParams3D::new(1.0, 0.5, 1.0).unwrap();
        for bc in [BcMode::SlipOnly, BcMode::SlipPlusNoSlipCaps] {
            let dt = 0.5 * max_stable_dt(&s, &grid, &law(), &v);
            let out = axi_step(&s, &grid, &law(), &v, dt, bc, &AxiOptions::default()).unwrap();
            assert!(out == s, "rest state drifted with {bc:?}");
        }
    }

    #[test]
    fn no_slip_needs_bulk_viscosity() {
        let grid = AxiGrid::new(&cone(0.1), 8, 32).unwrap();
        let s = AxiState::rest(&grid, 1.0).unwrap();
        let v = ViscParams3D::new(1.0, 0.0, 1.0).unwrap();
        let r = axi_step(&s, &grid, &law(), &v, 1e-6, BcMode::SlipPlusNoSlipCaps, &AxiOptions::default());
        assert!(matches!(r, Err(Error::Configuration(_))));
        assert!(axi_step(&s, &grid, &law(), &v, 1e-6, BcMode::SlipOnly, &AxiOptions::default()).is_ok());
    }

    #[test]
    fn timestep_is_checked() {
        let grid = AxiGrid::new(&cone(0.1), 8, 32).unwrap();
        let s = AxiState::rest(&grid, 1.0).unwrap();
        let v = ViscParams3D::new(1.0, 0.5, 1.0).unwrap();
        let dt = max_stable_dt(&s, &grid, &law(), &v);
        let r = axi_step(&s, &grid, &law(), &v, 2.0 * dt, BcMode::SlipOnly, &AxiOptions::default());
        assert!(matches!(r, Err(Error::Timestep { .. })));
    }

    #[test]
    fn mass_and_energy_balance() {
        let grid = AxiGrid::new(&cone(0.1), 8, 32).unwrap();
        let s0 = AxiState::from_fn(&grid, |rh, z| {
            let v = 0.2 * (PI * z).sin();
            (1.0 + 0.1 * (2.0 * PI * z).cos(), 0.5 * rh * 0.1 * v / (1.0 + 0.5 * z), v)
        })
        .unwrap();
        let v = ViscParams3D::new(1.0, 0.5, 0.1).unwrap();
        let tr = run_axi(&grid, &law(), &v, BcMode::SlipOnly, &s0, &[0.02, 0.04], &AxiOptions::default()).unwrap();
        assert!(tr.max_mass_drift <= 1e-12 * tr.n_steps as f64 * s0.mass(&grid));
        for e in &tr.energy {
            assert!(e.residual <= 1e-3 * (e.kinetic + e.potential), "{e:?}");
            assert!(e.dissipation >= 0.0);
        }
    }
}
