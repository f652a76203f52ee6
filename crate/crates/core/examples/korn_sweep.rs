//! Finite element Korn constants of a thin circular channel across eps:
//! the constant against the full gradient grows like eps^-2 while the
//! Korn-Poincare constant and the kernel-orthogonal constant stay bounded.

use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::korn::{self, KornResolution, KornSweepOptions};
use nozzle_lab::profile::Profile;

fn main() -> nozzle_lab::Result<()> {
    let g = ChannelGeometry::circular([Profile::default(), Profile::default()], Profile::constant(1.0), 0.1, 16)?;
    let opts = KornSweepOptions {
        resolution: KornResolution { n_boundary: 12, n_rings: 2, n_cells_z: 16 },
        refined: None,
        ko2: true,
        kernel_intervals: Some(6),
    };
    let report = korn::korn_sweep(&g, &[0.4, 0.2, 0.1], &opts)?;
    for r in &report.rows {
        println!(
            "eps {:<4} dofs {:>5}  ko1 {:>7.2}  ko2 {:.4}  kernel-orthogonal {:.3}  blow-up bound {:.2}",
            r.epsilon,
            r.n_dofs,
            r.ko1,
            r.ko2.unwrap_or(f64::NAN),
            r.constrained.unwrap_or(f64::NAN),
            r.blowup_lower_bound.unwrap_or(f64::NAN)
        );
    }
    if let Some(fit) = report.ko1_fit {
        println!("ko1 ~ eps^{:.3}", fit.exponent);
    }
    Ok(())
}
