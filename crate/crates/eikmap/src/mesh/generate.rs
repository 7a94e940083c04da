//! Procedural meshes used by the synthetic benchmarks, the demo assets and
//! the test suite.

use super::{MeshFormat, Provenance, TriangleMesh};
use nalgebra::Point3;
use std::collections::HashMap;

fn generated(source: &str) -> Provenance {
    Provenance {
        source: source.to_string(),
        format: MeshFormat::Generated,
    }
}

/// Flat rectangular sheet in the z = 0 plane, `nx`×`ny` quads split into
/// triangles with alternating diagonals (reduces directional bias of the
/// triangulation). Dimensions in mm.
pub fn grid_sheet(nx: usize, ny: usize, width: f64, height: f64) -> TriangleMesh {
    assert!(nx >= 1 && ny >= 1);
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Point3::new(
                width * i as f64 / nx as f64,
                height * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (idx(i, j), idx(i + 1, j));
            let (v01, v11) = (idx(i, j + 1), idx(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles, generated("grid_sheet")).expect("grid sheet is manifold")
}

/// Icosphere with `subdivisions` rounds of 1:4 refinement, radius in mm.
pub fn icosphere(subdivisions: usize, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| {
            let n = (x * x + y * y + z * z).sqrt();
            Point3::new(x / n, y / n, z / n)
        })
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = midpoints.get(&key) {
                return m;
            }
            let p = (vs[a].coords + vs[b].coords) / 2.0;
            let m = vs.len();
            vs.push(Point3::from(p / p.norm()));
            midpoints.insert(key, m);
            m
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    for v in &mut vertices {
        *v = Point3::from(v.coords * radius);
    }
    TriangleMesh::new(vertices, faces, generated("icosphere")).expect("icosphere is manifold")
}

/// Curved open surface: an ellipsoid with semi-axes (`a`, `b`, `c`) mm, with
/// the cap below `z < cut_z * c` removed. Leaves a boundary ring, giving a
/// non-trivial curved test surface with an opening.
pub fn open_ellipsoid(a: f64, b: f64, c: f64, cut_z: f64, subdivisions: usize) -> TriangleMesh {
    let sphere = icosphere(subdivisions, 1.0);
    let vertices: Vec<Point3<f64>> = sphere
        .vertices()
        .iter()
        .map(|p| Point3::new(p.x * a, p.y * b, p.z * c))
        .collect();
    let keep: Vec<[usize; 3]> = sphere
        .triangles()
        .iter()
        .filter(|tri| {
            let cz = (vertices[tri[0]].z + vertices[tri[1]].z + vertices[tri[2]].z) / 3.0;
            cz >= cut_z * c
        })
        .copied()
        .collect();
    // Compact away unused vertices.
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut compact = Vec::new();
    let mut triangles = Vec::with_capacity(keep.len());
    for tri in keep {
        let mut mapped = [0usize; 3];
        for (k, &v) in tri.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = compact.len();
                compact.push(vertices[v]);
            }
            mapped[k] = remap[v];
        }
        triangles.push(mapped);
    }
    TriangleMesh::new(compact, triangles, generated("open_ellipsoid"))
        .expect("ellipsoid cap is manifold")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let m = icosphere(1, 1.0);
        assert_eq!(m.num_vertices(), 42);
        assert_eq!(m.num_triangles(), 80);
    }

    #[test]
    fn grid_sheet_counts() {
        let m = grid_sheet(3, 2, 3.0, 2.0);
        assert_eq!(m.num_vertices(), 12);
        assert_eq!(m.num_triangles(), 12);
    }

    #[test]
    fn open_ellipsoid_has_boundary() {
        let m = open_ellipsoid(30.0, 25.0, 20.0, -0.4, 2);
        assert!(m.num_triangles() < 320);
        assert!(m.num_triangles() > 100);
    }
}
