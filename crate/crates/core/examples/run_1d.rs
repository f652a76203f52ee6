//! Runs the averaged Euler system and the drift-form Navier-Stokes system
//! in a widening nozzle and prints mass and energy at each output time.

use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::profile::Profile;
use nozzle_lab::solver1d::{self, Grid1D, RunOptions1D, State1D, System1D, Visc1DParams};
use nozzle_lab::thermo::PressureLaw;

fn main() -> nozzle_lab::Result<()> {
    let geom = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]), 0.1, 64)?;
    let grid = Grid1D::new(&geom, 128)?;
    let law = PressureLaw::power_law(2.0, 1.0)?;
    let initial = State1D::from_profiles(
        &grid,
        &Profile::constant(1.0).with_cos(&[0.1]),
        &Profile::constant(0.0).with_sin(&[0.2]),
    )?;
    let outputs = [0.05, 0.1, 0.15, 0.2];
    for (name, system) in [
        ("euler", System1D::Euler),
        ("ns drift", System1D::NsDrift(Visc1DParams::new(0.01, 0.01)?)),
    ] {
        let traj = solver1d::run_1d(&system, &grid, &law, &initial, &outputs, &RunOptions1D::default())?;
        println!("{name}: {} steps", traj.n_steps);
        for i in 0..traj.times.len() {
            println!(
                "  t = {:.2}  mass {:.12}  energy {:.8}  dissipated {:.3e}",
                traj.times[i], traj.mass[i], traj.energy[i], traj.dissipation[i]
            );
        }
    }
    Ok(())
}
