//! VTK legacy ASCII polydata: reader for POINTS + POLYGONS of triangles,
//! writer with point/cell data attributes.

use crate::mesh::{MeshFormat, Provenance, TriangleMesh};
use crate::{Error, Result};
use nalgebra::{Matrix3, Point3, Vector3};
use std::io::Write;
use std::path::Path;

struct Tokens<'a> {
    toks: std::str::SplitWhitespace<'a>,
    path: &'a Path,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.toks
            .next()
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of file"))
    }

    fn next_usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::parse(self.path, 0, format!("expected integer, got '{t}'")))
    }

    fn next_f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::parse(self.path, 0, format!("expected number, got '{t}'")))
    }
}

pub fn read_vtk_polydata(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if !header.starts_with("# vtk DataFile") {
        return Err(Error::parse(path, 1, "missing '# vtk DataFile' header"));
    }
    let _title = lines.next();
    let encoding = lines
        .next()
        .map(str::trim)
        .ok_or_else(|| Error::parse(path, 3, "missing encoding line"))?;
    if !encoding.eq_ignore_ascii_case("ASCII") {
        return Err(Error::parse(path, 3, "only ASCII VTK files are supported"));
    }
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let mut toks = Tokens {
        toks: rest.split_whitespace(),
        path,
    };

    let kw = toks.next()?;
    if !kw.eq_ignore_ascii_case("DATASET") {
        return Err(Error::parse(path, 4, "expected DATASET"));
    }
    let kind = toks.next()?;
    if !kind.eq_ignore_ascii_case("POLYDATA") {
        return Err(Error::parse(
            path,
            4,
            format!("expected POLYDATA dataset, got {kind}"),
        ));
    }

    let kw = toks.next()?;
    if !kw.eq_ignore_ascii_case("POINTS") {
        return Err(Error::parse(path, 0, "expected POINTS section"));
    }
    let nv = toks.next_usize()?;
    let _dtype = toks.next()?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (x, y, z) = (toks.next_f64()?, toks.next_f64()?, toks.next_f64()?);
        vertices.push(Point3::new(x, y, z));
    }

    let section = toks.next()?;
    if section.eq_ignore_ascii_case("VERTICES")
        || section.eq_ignore_ascii_case("LINES")
        || section.eq_ignore_ascii_case("TRIANGLE_STRIPS")
    {
        return Err(Error::UnsupportedCellType(section.to_uppercase()));
    }
    if !section.eq_ignore_ascii_case("POLYGONS") {
        return Err(Error::parse(
            path,
            0,
            format!("expected POLYGONS section, got {section}"),
        ));
    }
    let nf = toks.next_usize()?;
    let _total = toks.next_usize()?;
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let count = toks.next_usize()?;
        if count != 3 {
            return Err(Error::UnsupportedCellType(format!(
                "polygon with {count} vertices"
            )));
        }
        triangles.push([toks.next_usize()?, toks.next_usize()?, toks.next_usize()?]);
    }

    TriangleMesh::new(
        vertices,
        triangles,
        Provenance {
            source: path.display().to_string(),
            format: MeshFormat::VtkLegacyAscii,
        },
    )
}

/// Attributes attached to a polydata export.
#[derive(Default)]
pub struct VtkAttributes {
    pub point_scalars: Vec<(String, Vec<f64>)>,
    pub cell_scalars: Vec<(String, Vec<f64>)>,
    pub cell_vectors: Vec<(String, Vec<Vector3<f64>>)>,
    pub cell_tensors: Vec<(String, Vec<Matrix3<f64>>)>,
}

pub fn write_vtk_polydata(
    path: &Path,
    mesh: &TriangleMesh,
    title: &str,
    attrs: &VtkAttributes,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title);
    out.push('\n');
    out.push_str("ASCII\nDATASET POLYDATA\n");
    out.push_str(&format!("POINTS {} double\n", mesh.num_vertices()));
    for v in mesh.vertices() {
        out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    out.push_str(&format!(
        "POLYGONS {} {}\n",
        mesh.num_triangles(),
        4 * mesh.num_triangles()
    ));
    for t in mesh.triangles() {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }

    if !attrs.point_scalars.is_empty() {
        out.push_str(&format!("POINT_DATA {}\n", mesh.num_vertices()));
        for (name, values) in &attrs.point_scalars {
            out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
            for v in values {
                out.push_str(&format!("{v}\n"));
            }
        }
    }
    let has_cell_data = !attrs.cell_scalars.is_empty()
        || !attrs.cell_vectors.is_empty()
        || !attrs.cell_tensors.is_empty();
    if has_cell_data {
        out.push_str(&format!("CELL_DATA {}\n", mesh.num_triangles()));
        for (name, values) in &attrs.cell_scalars {
            out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
            for v in values {
                out.push_str(&format!("{v}\n"));
            }
        }
        for (name, values) in &attrs.cell_vectors {
            out.push_str(&format!("VECTORS {name} double\n"));
            for v in values {
                out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
            }
        }
        for (name, values) in &attrs.cell_tensors {
            out.push_str(&format!("TENSORS {name} double\n"));
            for m in values {
                for r in 0..3 {
                    out.push_str(&format!("{} {} {}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]));
                }
            }
        }
    }

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
