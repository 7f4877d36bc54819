//! Wavefront OBJ output (positions and faces only).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Writes `v x y z` lines then `f i j k` lines with 1-based indices.
/// Coordinates use the shortest representation that parses back exactly.
pub fn write_obj<T: Real, W: Write>(mesh: &TriangleMesh<T>, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# isochr isosurface: {} vertices, {} triangles",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    out.flush()
}

pub fn export_obj<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_obj(mesh, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads back what [`write_obj`] produces: `v` and triangular `f` records,
/// comments and blank lines skipped.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TriangleMesh::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let bad = || Error::Corrupt(format!("{}:{}: malformed record", path.display(), lineno + 1));
        match parts.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                }
                mesh.vertices.push(v);
            }
            Some("f") => {
                let mut t = [0u32; 3];
                for i in &mut t {
                    let idx: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    *i = idx.checked_sub(1).ok_or_else(bad)?;
                }
                mesh.triangles.push(t);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mesh_has_only_header() {
        let mut buf = Vec::new();
        write_obj(&TriangleMesh::<f64>::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with('#'));
    }

    #[test]
    fn single_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.5, 0.25]],
            triangles: vec![[0, 1, 2]],
        };
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).collect::<Vec<_>>(), vec!["f 1 2 3"]);
    }
}
