//! Legacy VTK 2.0 ASCII writer for per-iterate flow snapshots.

use std::io::Write;
use std::path::Path;

use crate::fem::FlowField;
use crate::mesh::TriMesh;
use crate::scalar::Real;

/// Write the mesh with nodal velocity vectors and pressure scalars as an
/// unstructured grid (triangle cells, type 5). Floats carry 17 significant
/// digits.
pub fn write_flow_vtk<S: Real>(
    mesh: &TriMesh<S>,
    flow: &FlowField<S>,
    title: &str,
    path: &Path,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# vtk DataFile Version 2.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{:.16e} {:.16e} 0", p.x, p.y)?;
    }
    writeln!(out, "CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles())?;
    for tri in mesh.triangles() {
        writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2])?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.n_triangles())?;
    for _ in 0..mesh.n_triangles() {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.n_nodes())?;
    writeln!(out, "VECTORS velocity double")?;
    for v in &flow.velocity {
        writeln!(out, "{:.16e} {:.16e} 0", v.x, v.y)?;
    }
    writeln!(out, "SCALARS pressure double")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for p in &flow.pressure {
        writeln!(out, "{:.16e}", p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::case1_mesh;

    #[test]
    fn writes_well_formed_grid() {
        let mesh = case1_mesh::<f64>(12, 3).unwrap();
        let flow = FlowField::zeros(&mesh);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.vtk");
        write_flow_vtk(&mesh, &flow, "snapshot", &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 2.0\n"));
        assert!(text.contains(&format!("POINTS {} double", mesh.n_nodes())));
        assert!(text.contains(&format!(
            "CELLS {} {}",
            mesh.n_triangles(),
            4 * mesh.n_triangles()
        )));
        assert!(text.contains("VECTORS velocity double"));
        assert!(text.contains("SCALARS pressure double"));
        let type_lines = text.lines().filter(|l| *l == "5").count();
        assert!(type_lines >= mesh.n_triangles());
    }
}
