use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::profile::Profile;
use nozzle_lab::solver1d::{self, Grid1D, RunOptions1D, State1D, System1D, Visc1DParams};
use nozzle_lab::solver_axi::*;
use nozzle_lab::thermo::PressureLaw;
use std::f64::consts::PI;

fn law() -> PressureLaw {
    PressureLaw::power_law(2.0, 1.0).unwrap()
}

fn rho0(z: f64) -> f64 {
    1.0 + 0.1 * (PI * z).cos()
}

fn u0(z: f64) -> f64 {
    0.1 * (PI * z).sin()
}

#[test]
fn straight_channel_matches_one_dimensional_solver() {
    let geom = ChannelGeometry::axisymmetric(Profile::constant(1.0), 0.1, 16).unwrap();
    let n_z = 64;
    let grid = AxiGrid::new(&geom, 8, n_z).unwrap();
    let visc = ViscParams3D::new(1.0, 0.5, 1.0).unwrap();
    let s0 = AxiState::from_fn(&grid, |_, z| (rho0(z), 0.0, u0(z))).unwrap();
    let t = 0.05;
    let tr = run_axi(&grid, &law(), &visc, BcMode::SlipOnly, &s0, &[t], &AxiOptions::default()).unwrap();
    let s = &tr.states[0];

    let g1 = Grid1D::uniform(n_z, 1.0).unwrap();
    let r: Vec<f64> = g1.z.iter().map(|&z| rho0(z)).collect();
    let u: Vec<f64> = g1.z.iter().map(|&z| u0(z)).collect();
    let v1 = Visc1DParams::new(1.0, 0.5).unwrap();
    let opts = RunOptions1D { dt_max: Some(2e-4), ..Default::default() };
    let one = solver1d::run_1d(&System1D::NsDrift(v1), &g1, &law(), &State1D::from_primitive(r, &u).unwrap(), &[t], &opts)
        .unwrap();
    let ref_u = one.states[0].velocity();

    let mut worst_u: f64 = 0.0;
    let mut spread: f64 = 0.0;
    let mut radial: f64 = 0.0;
    for k in 0..n_z {
        let row = s.row(&grid, k);
        let mean = row.iter().map(|q| q.2).sum::<f64>() / row.len() as f64;
        worst_u = worst_u.max((mean - ref_u[k]).abs());
        for q in &row {
            spread = spread.max((q.2 - mean).abs());
            radial = radial.max(q.1.abs());
        }
    }
    assert!(spread < 1e-10, "axial velocity varies across the section by {spread:.3e}");
    assert!(radial < 1e-10, "radial velocity {radial:.3e}");
    assert!(worst_u < 2e-3 * 0.1, "deviation from the 1D solver {worst_u:.3e}");
}

/// Energy residual `E + D − E(0)` at `t_end` and the initial kinetic energy.
fn decaying_flow_residual(n_z: usize, n_r: usize, t_end: f64, opts: &AxiOptions) -> nozzle_lab::Result<(f64, f64)> {
    let geom = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.25]), 0.2, 16).unwrap();
    let grid = AxiGrid::new(&geom, n_r, n_z).unwrap();
    let visc = ViscParams3D::new(0.5, 0.5, 0.2).unwrap();
    let s0 = AxiState::from_fn(&grid, |_, z| (rho0(z), 0.0, u0(z))).unwrap();
    let tr = run_axi(&grid, &law(), &visc, BcMode::SlipPlusNoSlipCaps, &s0, &[t_end], opts)?;
    Ok((tr.energy.last().unwrap().residual, s0.kinetic_energy(&grid)))
}

#[test]
fn energy_residual_shrinks_under_refinement() {
    let (coarse, k0) = decaying_flow_residual(32, 8, 0.05, &AxiOptions::default()).unwrap();
    let (fine, _) = decaying_flow_residual(64, 16, 0.05, &AxiOptions::default()).unwrap();
    assert!(coarse.abs() < 1e-2 * k0, "coarse {coarse:.3e} vs kinetic {k0:.3e}");
    assert!(fine.abs() < 0.5 * coarse.abs(), "coarse {coarse:.3e}, fine {fine:.3e}");
}

#[test]
fn flipped_dissipation_breaks_the_energy_balance() {
    // the sound scheme loses energy to numerical dissipation (negative
    // residual); anti-dissipative fluxes create energy
    let (good, _) = decaying_flow_residual(32, 8, 0.06, &AxiOptions::default()).unwrap();
    assert!(good <= 0.0);
    let opts = AxiOptions { fault_flip_dissipation: true, ..Default::default() };
    match decaying_flow_residual(32, 8, 0.06, &opts) {
        Ok((r, _)) => {
            assert!(r > 2.0 * good.abs(), "faulty residual {r:.3e} vs {good:.3e}");
        }
        Err(e) => {
            // blowing up is an equally valid detection
            assert!(matches!(e, nozzle_lab::Error::Positivity { .. } | nozzle_lab::Error::Breakdown { .. }), "{e}");
        }
    }
}

#[test]
fn pointwise_dissipation_is_nonnegative() {
    let geom = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.25]), 0.2, 16).unwrap();
    let grid = AxiGrid::new(&geom, 8, 32).unwrap();
    let s = AxiState::from_fn(&grid, |rh, z| (1.0, 0.3 * rh * (3.0 * z).sin(), u0(z) * (1.0 - rh * rh))).unwrap();
    let g = velocity_gradients(&s, &grid, BcMode::SlipOnly);
    for gr in &g {
        for (mu, eta) in [(1.0, 0.0), (0.3, 2.0)] {
            assert!(stress_tensor(gr, mu, eta).contract(gr) >= -1e-14);
        }
    }
}
