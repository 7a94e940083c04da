//! ASCII OFF reader and writer (triangles only).

use crate::mesh::{MeshFormat, Provenance, TriangleMesh};
use crate::{Error, Result};
use nalgebra::Point3;
use std::io::Write;
use std::path::Path;

pub fn read_off(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Strip comments, keep (line number, content).
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (lno, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let mut tokens: Vec<&str> = Vec::new();
    if header == "OFF" {
        // Counts on the following line.
    } else if let Some(rest) = header.strip_prefix("OFF") {
        tokens = rest.split_whitespace().collect();
    } else {
        return Err(Error::parse(path, lno, "missing OFF header"));
    }
    if tokens.is_empty() {
        let (lno, counts) = lines
            .next()
            .ok_or_else(|| Error::parse(path, lno, "missing element counts"))?;
        tokens = counts.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(Error::parse(path, lno, "expected vertex and face counts"));
        }
    }
    let nv: usize = tokens[0]
        .parse()
        .map_err(|_| Error::parse(path, lno, "bad vertex count"))?;
    let nf: usize = tokens[1]
        .parse()
        .map_err(|_| Error::parse(path, lno, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of vertex list"))?;
        let mut it = line.split_whitespace();
        let mut coord = [0.0; 3];
        for c in &mut coord {
            *c = it
                .next()
                .ok_or_else(|| Error::parse(path, lno, "vertex needs 3 coordinates"))?
                .parse()
                .map_err(|_| Error::parse(path, lno, "bad coordinate"))?;
        }
        vertices.push(Point3::new(coord[0], coord[1], coord[2]));
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of face list"))?;
        let mut it = line.split_whitespace();
        let count: usize = it
            .next()
            .ok_or_else(|| Error::parse(path, lno, "empty face line"))?
            .parse()
            .map_err(|_| Error::parse(path, lno, "bad face vertex count"))?;
        if count != 3 {
            return Err(Error::UnsupportedCellType(format!(
                "face with {count} vertices at {}:{lno}",
                path.display()
            )));
        }
        let mut tri = [0usize; 3];
        for v in &mut tri {
            *v = it
                .next()
                .ok_or_else(|| Error::parse(path, lno, "face needs 3 indices"))?
                .parse()
                .map_err(|_| Error::parse(path, lno, "bad vertex index"))?;
        }
        triangles.push(tri);
    }

    TriangleMesh::new(
        vertices,
        triangles,
        Provenance {
            source: path.display().to_string(),
            format: MeshFormat::Off,
        },
    )
}

pub fn write_off(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = String::new();
    out.push_str("OFF\n");
    out.push_str(&format!(
        "{} {} 0\n",
        mesh.num_vertices(),
        mesh.num_triangles()
    ));
    for v in mesh.vertices() {
        out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid_sheet;

    #[test]
    fn unit_square_off_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.off");
        std::fs::write(
            &path,
            "OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n",
        )
        .unwrap();
        let mesh = read_off(&path).unwrap();
        assert_eq!(mesh.num_vertices(), 4);
        assert_eq!(mesh.num_triangles(), 2);

        let back = dir.path().join("back.off");
        write_off(&back, &mesh).unwrap();
        let mesh2 = read_off(&back).unwrap();
        assert_eq!(mesh2.num_vertices(), 4);
        assert_eq!(mesh.vertices(), mesh2.vertices());
        assert_eq!(mesh.triangles(), mesh2.triangles());
    }

    #[test]
    fn counts_on_header_line_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inline.off");
        std::fs::write(&path, "OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let mesh = read_off(&path).unwrap();
        assert_eq!(mesh.num_triangles(), 1);
    }

    #[test]
    fn quad_face_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.off");
        std::fs::write(&path, "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        let err = read_off(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedCellType(_)));
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.off");
        std::fs::write(&path, "OFZ\n1 1\n").unwrap();
        assert!(matches!(read_off(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn icosphere_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = crate::mesh::icosphere(1, 2.0);
        let path = dir.path().join("ico.off");
        write_off(&path, &mesh).unwrap();
        let back = read_off(&path).unwrap();
        assert_eq!(back.num_vertices(), 42);
        assert_eq!(back.num_triangles(), 80);
        assert_eq!(mesh.triangles(), back.triangles());
    }

    #[test]
    fn generated_sheet_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = grid_sheet(3, 3, 1.0, 1.0);
        let path = dir.path().join("sheet.off");
        write_off(&path, &mesh).unwrap();
        let back = read_off(&path).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
    }
}
