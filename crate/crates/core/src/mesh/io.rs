//! Plain-text mesh exchange format.
//!
//! ```text
//! nv ne
//! x y bflag          (nv lines)
//! i j k region       (ne lines, region: 0 exterior, 1 layer, 2 defect)
//! ```
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so export followed by import reproduces the mesh bit-exactly.

use super::{Mesh, Region};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn export_to_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", mesh.num_vertices(), mesh.num_elements());
    for i in 0..mesh.num_vertices() {
        let [x, y] = mesh.vertex(i);
        let flag = u8::from(mesh.is_boundary_vertex(i));
        let _ = writeln!(out, "{x} {y} {flag}");
    }
    for e in 0..mesh.num_elements() {
        let [a, b, c] = mesh.element(e);
        let _ = writeln!(out, "{a} {b} {c} {}", mesh.region(e).to_index());
    }
    out
}

pub fn export_to_path(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, export_to_string(mesh))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn import_from_string(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("empty mesh file".into()))?;
    let mut parts = header.split_whitespace();
    let nv: usize = parse(parts.next(), "vertex count")?;
    let ne: usize = parse(parts.next(), "element count")?;

    let mut vertices = Vec::with_capacity(nv);
    let mut flags = Vec::with_capacity(nv);
    for k in 0..nv {
        let line = lines
            .next()
            .ok_or_else(|| Error::Input(format!("missing vertex line {k}")))?;
        let mut p = line.split_whitespace();
        let x: f64 = parse(p.next(), "x")?;
        let y: f64 = parse(p.next(), "y")?;
        let b: u8 = parse(p.next(), "boundary flag")?;
        vertices.push([x, y]);
        flags.push(b != 0);
    }
    let mut elements = Vec::with_capacity(ne);
    let mut regions = Vec::with_capacity(ne);
    for k in 0..ne {
        let line = lines
            .next()
            .ok_or_else(|| Error::Input(format!("missing element line {k}")))?;
        let mut p = line.split_whitespace();
        let i: usize = parse(p.next(), "i")?;
        let j: usize = parse(p.next(), "j")?;
        let m: usize = parse(p.next(), "k")?;
        let r: u8 = parse(p.next(), "region")?;
        elements.push([i, j, m]);
        regions.push(Region::from_index(r)?);
    }

    let mut mesh = Mesh::from_raw(vertices, elements)?;
    for (i, &flag) in flags.iter().enumerate() {
        if mesh.is_boundary_vertex(i) != flag {
            return Err(Error::Input(format!(
                "vertex {i}: stored boundary flag disagrees with mesh topology"
            )));
        }
    }
    mesh.set_regions(regions);
    Ok(mesh)
}

pub fn import_from_path(path: &Path) -> Result<Mesh> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    import_from_string(&text)
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Input(format!("missing field: {what}")))?
        .parse()
        .map_err(|_| Error::Input(format!("unparsable field: {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_locally_refined_mesh, DefectGeometry, MeshSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = MeshSpec::new(0.25, 1.0 / 64.0, DefectGeometry::well());
        let mesh = build_locally_refined_mesh(&spec).unwrap();
        let text = export_to_string(&mesh);
        let back = import_from_string(&text).unwrap();
        assert_eq!(mesh.num_vertices(), back.num_vertices());
        assert_eq!(mesh.num_elements(), back.num_elements());
        for i in 0..mesh.num_vertices() {
            assert_eq!(mesh.vertex(i)[0].to_bits(), back.vertex(i)[0].to_bits());
            assert_eq!(mesh.vertex(i)[1].to_bits(), back.vertex(i)[1].to_bits());
            assert_eq!(mesh.is_boundary_vertex(i), back.is_boundary_vertex(i));
        }
        for e in 0..mesh.num_elements() {
            assert_eq!(mesh.element(e), back.element(e));
            assert_eq!(mesh.region(e), back.region(e));
        }
        // And the re-export is byte identical.
        assert_eq!(text, export_to_string(&back));
    }

    #[test]
    fn rejects_inconsistent_boundary_flags() {
        let mesh = crate::mesh::build_structured_mesh(2).unwrap();
        let mut text = export_to_string(&mesh);
        // Flip the flag of vertex 0 (a corner, hence boundary).
        text = text.replacen(" 1\n", " 0\n", 1);
        assert!(import_from_string(&text).is_err());
    }
}
