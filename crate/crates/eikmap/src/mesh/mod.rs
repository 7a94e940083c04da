//! Triangulated 2-D manifolds embedded in R³: loading, validation and
//! precomputed geometry tables.

mod generate;
mod project;

pub use generate::{grid_sheet, icosphere, open_ellipsoid};
pub use project::{project_points, SurfaceSample, SurfaceSamples};

use nalgebra::{Point3, Vector3};
use std::collections::HashMap;

use crate::{Error, Result};

/// File format of a surface mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    VtkLegacyAscii,
    Generated,
}

/// Where a mesh came from.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub source: String,
    pub format: MeshFormat,
}

/// An immutable triangulated surface.
///
/// Construction checks the structural invariants: every triangle references
/// three distinct in-range vertices and each undirected edge is shared by at
/// most two triangles.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    provenance: Provenance,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[usize; 3]>,
        provenance: Provenance,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        vertex: v,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::RepeatedVertex(t));
            }
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for (a, b) in tri_edges(tri) {
                *edge_count.entry(ordered(a, b)).or_insert(0) += 1;
            }
        }
        if let Some((&(a, b), _)) = edge_count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::NonManifoldEdge(a, b));
        }
        Ok(Self {
            vertices,
            triangles,
            provenance,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Remove the listed triangles, keeping vertex order. The result is
    /// re-checked for manifoldness.
    pub fn drop_triangles(&self, drop: &[usize]) -> Result<TriangleMesh> {
        let mut keep = vec![true; self.triangles.len()];
        for &t in drop {
            if t < keep.len() {
                keep[t] = false;
            }
        }
        let triangles = self
            .triangles
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(t, _)| *t)
            .collect();
        TriangleMesh::new(self.vertices.clone(), triangles, self.provenance.clone())
    }
}

fn tri_edges(tri: &[usize; 3]) -> [(usize, usize); 3] {
    [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// One triangle flagged by [`validate_mesh`].
#[derive(Debug, Clone)]
pub struct FlaggedTriangle {
    pub index: usize,
    pub area: f64,
    pub min_angle_deg: f64,
}

/// Result of quality validation: triangles below the area or angle
/// thresholds. Reporting only; the caller decides whether to drop or abort.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub min_area: f64,
    pub min_angle_deg: f64,
    pub flagged: Vec<FlaggedTriangle>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flagged.iter().map(|f| f.index).collect()
    }
}

pub const DEFAULT_MIN_AREA: f64 = 1e-6;
pub const DEFAULT_MIN_ANGLE_DEG: f64 = 1.0;

/// Flag triangles with area below `min_area` (mm²) or any interior angle
/// below `min_angle_deg`.
pub fn validate_mesh(mesh: &TriangleMesh, min_area: f64, min_angle_deg: f64) -> ValidationReport {
    let mut flagged = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let area = triangle_area(&p);
        let min_angle = triangle_min_angle_deg(&p);
        if area < min_area || min_angle < min_angle_deg {
            flagged.push(FlaggedTriangle {
                index: t,
                area,
                min_angle_deg: min_angle,
            });
        }
    }
    ValidationReport {
        min_area,
        min_angle_deg,
        flagged,
    }
}

fn triangle_area(p: &[Point3<f64>; 3]) -> f64 {
    0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
}

fn triangle_min_angle_deg(p: &[Point3<f64>; 3]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..3 {
        let a = p[(i + 1) % 3] - p[i];
        let b = p[(i + 2) % 3] - p[i];
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
        min = min.min(cos.acos().to_degrees());
    }
    min
}

/// Per-vertex one-ring entry: a triangle of the patch ω_i together with the
/// endpoints of its edge opposite the vertex.
#[derive(Debug, Clone, Copy)]
pub struct RingEntry {
    pub triangle: usize,
    /// Endpoints of the opposite edge, in triangle winding order.
    pub opposite: [usize; 2],
}

/// A pair of triangles adjacent across an interior edge.
#[derive(Debug, Clone, Copy)]
pub struct TrianglePair {
    pub triangles: [usize; 2],
    pub edge: [usize; 2],
    pub edge_length: f64,
    pub centroid_distance: f64,
}

/// Immutable geometry tables derived from a [`TriangleMesh`].
#[derive(Debug)]
pub struct MeshGeometry {
    mesh: TriangleMesh,
    areas: Vec<f64>,
    normals: Vec<Vector3<f64>>,
    centroids: Vec<Point3<f64>>,
    rings: Vec<Vec<RingEntry>>,
    pairs: Vec<TrianglePair>,
    mean_edge_length: f64,
    diameter: f64,
}

/// Precompute areas, normals, one-ring patches, opposite edges and the
/// triangle adjacency table. Fails on degenerate triangles; run
/// [`validate_mesh`] first and drop offenders.
pub fn build_geometry(mesh: TriangleMesh) -> Result<MeshGeometry> {
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    let mut areas = Vec::with_capacity(nt);
    let mut normals = Vec::with_capacity(nt);
    let mut centroids = Vec::with_capacity(nt);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p0 = mesh.vertices[tri[0]];
        let p1 = mesh.vertices[tri[1]];
        let p2 = mesh.vertices[tri[2]];
        let cross = (p1 - p0).cross(&(p2 - p0));
        let double_area = cross.norm();
        if !(double_area.is_finite() && double_area > 0.0) {
            return Err(Error::DegenerateTriangle {
                index: t,
                msg: format!("area {:.3e} mm²", 0.5 * double_area),
            });
        }
        areas.push(0.5 * double_area);
        normals.push(cross / double_area);
        centroids.push(Point3::from((p0.coords + p1.coords + p2.coords) / 3.0));
    }

    let mut rings: Vec<Vec<RingEntry>> = vec![Vec::new(); nv];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            // Edge opposite tri[k], in winding order.
            rings[tri[k]].push(RingEntry {
                triangle: t,
                opposite: [tri[(k + 1) % 3], tri[(k + 2) % 3]],
            });
        }
    }

    let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for (a, b) in tri_edges(tri) {
            edge_tris.entry(ordered(a, b)).or_default().push(t);
        }
    }
    let mut pairs = Vec::new();
    let mut edge_len_sum = 0.0;
    let mut edge_count = 0usize;
    for (&(a, b), ts) in &edge_tris {
        let len = (mesh.vertices[a] - mesh.vertices[b]).norm();
        edge_len_sum += len;
        edge_count += 1;
        if ts.len() == 2 {
            let (s, t) = (ts[0].min(ts[1]), ts[0].max(ts[1]));
            pairs.push(TrianglePair {
                triangles: [s, t],
                edge: [a, b],
                edge_length: len,
                centroid_distance: (centroids[s] - centroids[t]).norm(),
            });
        }
    }
    // HashMap iteration order is unspecified; sort for bit-identical tables.
    pairs.sort_by_key(|p| (p.triangles[0], p.triangles[1]));

    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in mesh.vertices() {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let diameter = if nv == 0 { 0.0 } else { (hi - lo).norm() };

    Ok(MeshGeometry {
        mesh,
        areas,
        normals,
        centroids,
        rings,
        pairs,
        mean_edge_length: if edge_count == 0 {
            0.0
        } else {
            edge_len_sum / edge_count as f64
        },
        diameter,
    })
}

impl MeshGeometry {
    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn num_vertices(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn num_triangles(&self) -> usize {
        self.mesh.num_triangles()
    }

    pub fn area(&self, tri: usize) -> f64 {
        self.areas[tri]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn normal(&self, tri: usize) -> Vector3<f64> {
        self.normals[tri]
    }

    pub fn centroid(&self, tri: usize) -> Point3<f64> {
        self.centroids[tri]
    }

    pub fn vertex(&self, v: usize) -> Point3<f64> {
        self.mesh.vertices[v]
    }

    pub fn triangle(&self, tri: usize) -> [usize; 3] {
        self.mesh.triangles[tri]
    }

    /// Corner positions of a triangle.
    pub fn corners(&self, tri: usize) -> [Point3<f64>; 3] {
        let t = self.mesh.triangles[tri];
        [
            self.mesh.vertices[t[0]],
            self.mesh.vertices[t[1]],
            self.mesh.vertices[t[2]],
        ]
    }

    /// The patch ω_i of triangles incident to vertex `v`, each with its
    /// opposite edge.
    pub fn ring(&self, v: usize) -> &[RingEntry] {
        &self.rings[v]
    }

    /// Pairs of triangles adjacent across interior edges.
    pub fn triangle_pairs(&self) -> &[TrianglePair] {
        &self.pairs
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.mean_edge_length
    }

    /// Bounding-box diagonal (mm).
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Interpolate a per-vertex field at barycentric coordinates of a triangle.
    pub fn interpolate(&self, field: &[f64], tri: usize, bary: [f64; 3]) -> f64 {
        let t = self.mesh.triangles[tri];
        bary[0] * field[t[0]] + bary[1] * field[t[1]] + bary[2] * field[t[2]]
    }

    /// World position at barycentric coordinates of a triangle.
    pub fn position(&self, tri: usize, bary: [f64; 3]) -> Point3<f64> {
        let [p0, p1, p2] = self.corners(tri);
        Point3::from(bary[0] * p0.coords + bary[1] * p1.coords + bary[2] * p2.coords)
    }

    /// Vertex of `tri` nearest to `point`.
    pub fn nearest_corner(&self, tri: usize, point: Point3<f64>) -> usize {
        let t = self.mesh.triangles[tri];
        let mut best = t[0];
        let mut best_d = f64::INFINITY;
        for &v in &t {
            let d = (self.mesh.vertices[v] - point).norm_squared();
            if d < best_d {
                best_d = d;
                best = v;
            }
        }
        best
    }
}
