//! Tangent-field Poincare constants on cross sections, their eps^2
//! dilation law, and the boundary normal-trace bound.

use nozzle_lab::geometry::SectionShape;
use nozzle_lab::korn;
use nozzle_lab::mesh::TriMesh;

fn main() -> nozzle_lab::Result<()> {
    let shapes = [
        SectionShape::Disk { radius: 1.0 },
        SectionShape::Ellipse { a: 1.0, b: 0.6 },
        SectionShape::Square { side: 2.0 },
    ];
    for shape in &shapes {
        let mesh = TriMesh::star_shaped(&shape.boundary_polygon(32), [0.0, 0.0], 6)?;
        let c = korn::tangent_poincare_constant(&mesh)?.constant;
        let c_small = korn::tangent_poincare_constant(&mesh.scaled(0.1))?.constant;
        println!(
            "{shape:?}: constant {c:.5}, scaled by 0.1 gives {:.5} x 0.01, normal trace bound {:.5}",
            c_small / 0.01,
            korn::normal_trace_bound(shape)?
        );
    }
    Ok(())
}
