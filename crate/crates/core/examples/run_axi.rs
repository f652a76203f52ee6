//! Runs the axisymmetric viscous solver in a widening channel and prints
//! the discrete energy balance E(t) + D(t) - E(0).

use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::profile::Profile;
use nozzle_lab::solver_axi::{self, AxiGrid, AxiOptions, AxiState, BcMode, ViscParams3D};
use nozzle_lab::thermo::PressureLaw;
use std::f64::consts::PI;

fn main() -> nozzle_lab::Result<()> {
    let geom = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]), 0.2, 64)?;
    let grid = AxiGrid::new(&geom, 8, 32)?;
    let law = PressureLaw::power_law(2.0, 1.0)?;
    let visc = ViscParams3D::new(1.0, 1.0, 0.1)?;
    let initial = AxiState::from_fn(&grid, |_r, z| (1.0 + 0.1 * (PI * z).cos(), 0.0, 0.2 * (PI * z).sin()))?;
    let traj = solver_axi::run_axi(
        &grid,
        &law,
        &visc,
        BcMode::SlipPlusNoSlipCaps,
        &initial,
        &[0.025, 0.05, 0.075, 0.1],
        &AxiOptions::default(),
    )?;
    println!("{} steps, max mass drift {:.2e}", traj.n_steps, traj.max_mass_drift);
    for s in solver_axi::energy_monitor(&traj) {
        println!(
            "t = {:.3}  kinetic {:.6e}  potential {:.6e}  dissipated {:.3e}  balance {:+.2e}",
            s.t, s.kinetic, s.potential, s.dissipation, s.residual
        );
    }
    Ok(())
}
