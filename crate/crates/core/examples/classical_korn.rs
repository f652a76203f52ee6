//! Classical Korn constants with rigid motions removed, on a disk, on the
//! unit square and on a short three-dimensional channel.

use nozzle_lab::geometry::{ChannelGeometry, SectionShape};
use nozzle_lab::korn::{self, ChannelMesh, KornResolution};
use nozzle_lab::mesh::TriMesh;
use nozzle_lab::profile::Profile;

fn main() -> nozzle_lab::Result<()> {
    for (n, rings) in [(16, 3), (32, 6)] {
        let disk = TriMesh::star_shaped(&SectionShape::Disk { radius: 1.0 }.boundary_polygon(n), [0.0, 0.0], rings)?;
        println!("disk {n}/{rings}: {:.4}", korn::classical_korn_constant(&disk)?.constant);
    }
    // converges slowly because of the corner singularity
    for n in [8, 16, 32] {
        let square = TriMesh::rectangle(n, n, 1.0, 1.0);
        println!("unit square {n}x{n}: {:.4}", korn::classical_korn_constant(&square)?.constant);
    }
    let g = ChannelGeometry::circular([Profile::default(), Profile::default()], Profile::constant(1.0), 0.5, 16)?;
    let mesh = ChannelMesh::new(&g, KornResolution { n_boundary: 12, n_rings: 2, n_cells_z: 8 })?;
    println!("channel eps = 0.5: {:.4}", korn::classical_korn_constant_3d(&mesh.prism)?.constant);
    Ok(())
}
