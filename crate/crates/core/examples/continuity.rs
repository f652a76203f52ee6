//! Lifts a 1D Euler solution into the 3D channel and measures how well the
//! extension satisfies the continuity equation under grid refinement.

use nozzle_lab::profile::Profile;
use nozzle_lab::relent::{self, ContinuityStudy};
use nozzle_lab::solver1d::Limiter;

fn main() -> nozzle_lab::Result<()> {
    let study = ContinuityStudy {
        radius: Profile::constant(1.25).with_cos(&[-0.25]),
        epsilon: 0.1,
        density: Profile::constant(1.0).with_cos(&[0.1]),
        velocity: Profile::constant(0.0).with_sin(&[0.2]),
        gamma: 2.0,
        kappa: 1.0,
        resolutions: vec![64, 128, 256],
        horizon: 0.2,
        snapshot_ratio: 0.5,
        limiter: Limiter::Unlimited,
    };
    let report = relent::continuity_study(&study)?;
    for i in 0..report.n_z.len() {
        println!("n = {:>4}  residual {:.3e}  estimate {:.3e}", report.n_z[i], report.residual[i], report.truncation[i]);
    }
    println!("observed orders {:.2?}, worst residual/estimate {:.2}", report.orders, report.worst_ratio());
    Ok(())
}
