//! Checks the area identity for a widening circular channel and for a
//! tabulated elliptic one whose tilt field comes from a Neumann solve.

use nozzle_lab::geometry::{self, AreaSlope, ChannelGeometry, SectionShape};
use nozzle_lab::profile::Profile;
use std::f64::consts::PI;

fn main() -> nozzle_lab::Result<()> {
    let cone = ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]), 0.1, 64)?;
    let tilt = geometry::tilt_field_circular(&cone)?;
    let residual = geometry::check_divergence_identity_with(&cone, &tilt, AreaSlope::Analytic)?;
    println!("circular R = 1 + z/2: identity residual {residual:.2e}");
    println!("flow map area error at z = 1: {:.2e}", geometry::flow_reconstruction_error(&tilt, 1.0, 64)?);

    for (m, rings, nz) in [(16, 4, 8), (32, 8, 16), (64, 16, 32)] {
        let z: Vec<f64> = (0..=nz).map(|k| k as f64 / nz as f64).collect();
        let sections = z
            .iter()
            .map(|&zz| SectionShape::Ellipse { a: 1.0 + 0.3 * (PI * zz).sin(), b: 0.7 + 0.2 * zz * zz }.boundary_polygon(m))
            .collect();
        let g = ChannelGeometry::tabulated(z, sections, 1.0)?;
        let tilt = geometry::tilt_field_neumann(&g, rings)?;
        println!("ellipse family, {m} vertices, {nz} slices: residual {:.3e}", geometry::check_divergence_identity(&g, &tilt));
    }
    Ok(())
}
