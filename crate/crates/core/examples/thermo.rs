//! Pressure law, its potential and the Bregman-type relative potential.

use nozzle_lab::thermo::{self, PressureLaw};

fn main() -> nozzle_lab::Result<()> {
    let law = PressureLaw::power_law(2.0, 1.0)?;
    for rho in [0.25, 0.5, 1.0, 2.0, 4.0] {
        println!(
            "rho {rho:<4} p {:.4}  H {:.6}  H by quadrature {:.6}  H(rho | 1) {:.6}",
            law.pressure(rho),
            law.potential(rho),
            law.potential_by_quadrature(rho),
            law.bregman(rho, 1.0)
        );
    }
    let e = law.relative_energy_density(1.2, &[0.3, 0.0, 0.1], 1.0, &[0.2, 0.0, 0.0])?;
    println!("relative energy density at rho = 1.2 about r = 1: {e:.6}");
    let c = thermo::coercivity_check(&law, (0.5, 2.0), (0.25, 4.0))?;
    println!("coercivity constants C1 = {:.4}, C2 = {:.4}, C3 = {:.4e}", c.c1, c.c2, c.c3);
    Ok(())
}
