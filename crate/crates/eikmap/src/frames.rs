//! Smooth per-triangle orthonormal tangent bases {v1, v2, n}.
//!
//! The v1 field is relaxed by averaging neighbor directions transported
//! across shared edges (rotation aligning the adjacent normals), projected
//! back to the tangent plane and renormalized. Each sweep is an exact
//! per-triangle minimization of the edge-transport variation energy, so the
//! energy never increases.

use crate::mesh::MeshGeometry;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

pub const DEFAULT_SMOOTHING_ITERS: usize = 200;
/// Stop when the largest per-triangle angular change falls below this (rad).
pub const DEFAULT_FRAME_TOL: f64 = 1e-6;

/// Per-triangle orthonormal basis {v1, v2, n} with v2 = n × v1.
#[derive(Debug, Clone)]
pub struct FrameField {
    v1: Vec<Vector3<f64>>,
    v2: Vec<Vector3<f64>>,
    n: Vec<Vector3<f64>>,
    /// Edge-transport variation energy after each smoothing sweep
    /// (index 0 is the seed field).
    pub energy_trace: Vec<f64>,
    /// Triangles whose local variation stayed high after smoothing
    /// (possible direction-field singularities on closed surfaces).
    pub high_variation: Vec<usize>,
    /// Number of connected components of the triangle adjacency graph.
    pub components: usize,
}

impl FrameField {
    pub fn len(&self) -> usize {
        self.v1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v1.is_empty()
    }

    pub fn v1(&self, tri: usize) -> Vector3<f64> {
        self.v1[tri]
    }

    pub fn v2(&self, tri: usize) -> Vector3<f64> {
        self.v2[tri]
    }

    pub fn normal(&self, tri: usize) -> Vector3<f64> {
        self.n[tri]
    }

    /// Rotation P with columns (v1, v2, n).
    pub fn rotation(&self, tri: usize) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.v1[tri], self.v2[tri], self.n[tri]])
    }

    /// Coordinates of a world vector in the tangent basis (v1, v2).
    pub fn tangent_coords(&self, tri: usize, w: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.v1[tri].dot(w), self.v2[tri].dot(w))
    }

    /// World vector from tangent coordinates.
    pub fn from_tangent(&self, tri: usize, t: &Vector2<f64>) -> Vector3<f64> {
        self.v1[tri] * t.x + self.v2[tri] * t.y
    }

    /// Rotate every frame by a fixed in-plane angle (gauge change).
    pub fn rotated_in_plane(&self, angle_rad: f64) -> FrameField {
        let (s, c) = angle_rad.sin_cos();
        let mut out = self.clone();
        for t in 0..self.len() {
            out.v1[t] = self.v1[t] * c + self.v2[t] * s;
            out.v2[t] = out.n[t].cross(&out.v1[t]);
        }
        out
    }
}

/// Embed a 2×2 symmetric matrix expressed in the tangent basis of `tri`
/// into world coordinates: P · blockdiag(M2, 1) · Pᵀ.
pub fn rotate_to_world(frames: &FrameField, tri: usize, m2: &Matrix2<f64>) -> Matrix3<f64> {
    let v1 = frames.v1(tri);
    let v2 = frames.v2(tri);
    let n = frames.normal(tri);
    let d = m2[(0, 0)] * v1 * v1.transpose()
        + m2[(0, 1)] * (v1 * v2.transpose() + v2 * v1.transpose())
        + m2[(1, 1)] * v2 * v2.transpose()
        + n * n.transpose();
    // Symmetrize away rounding asymmetry.
    (d + d.transpose()) * 0.5
}

/// Rotation taking `from` to `to` (both unit), applied to `v` (Rodrigues).
fn transport(from: &Vector3<f64>, to: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-14 {
        // Parallel normals: identity. Antiparallel would be a degenerate
        // fold; the tangent re-projection absorbs it.
        return *v;
    }
    let k = axis / s;
    v * c + k.cross(v) * s + k * (k.dot(v)) * (1.0 - c)
}

/// Seed direction: the canonical axis least aligned with n, projected to the
/// tangent plane and normalized.
fn seed_direction(n: &Vector3<f64>) -> Vector3<f64> {
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut best = axes[0];
    let mut best_align = f64::INFINITY;
    for a in axes {
        let align = n.dot(&a).abs();
        if align < best_align {
            best_align = align;
            best = a;
        }
    }
    let t = best - n * n.dot(&best);
    t / t.norm()
}

struct Adjacency {
    /// For each triangle, (neighbor triangle, ()) across each interior edge.
    neighbors: Vec<Vec<usize>>,
}

fn adjacency(geom: &MeshGeometry) -> Adjacency {
    let mut neighbors = vec![Vec::new(); geom.num_triangles()];
    for pair in geom.triangle_pairs() {
        let [a, b] = pair.triangles;
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    Adjacency { neighbors }
}

fn count_components(adj: &Adjacency) -> usize {
    let n = adj.neighbors.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(t) = stack.pop() {
            for &nb in &adj.neighbors[t] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    components
}

fn variation_energy(
    geom: &MeshGeometry,
    n: &[Vector3<f64>],
    v1: &[Vector3<f64>],
) -> f64 {
    geom.triangle_pairs()
        .iter()
        .map(|pair| {
            let [a, b] = pair.triangles;
            let moved = transport(&n[b], &n[a], &v1[b]);
            (v1[a] - moved).norm_squared()
        })
        .sum()
}

/// Compute a smooth tangent frame field by edge-transport relaxation of v1.
pub fn compute_frames(geom: &MeshGeometry, smoothing_iters: usize, tol: f64) -> FrameField {
    let nt = geom.num_triangles();
    let n: Vec<Vector3<f64>> = (0..nt).map(|t| geom.normal(t)).collect();
    let mut v1: Vec<Vector3<f64>> = n.iter().map(seed_direction).collect();
    let adj = adjacency(geom);
    let components = count_components(&adj);
    if components > 1 {
        log::warn!(
            "mesh has {components} connected components; frames seeded independently per component"
        );
    }

    let mut energy_trace = vec![variation_energy(geom, &n, &v1)];
    for _ in 0..smoothing_iters {
        let mut max_change: f64 = 0.0;
        for t in 0..nt {
            if adj.neighbors[t].is_empty() {
                continue;
            }
            let mut m = Vector3::zeros();
            for &nb in &adj.neighbors[t] {
                m += transport(&n[nb], &n[t], &v1[nb]);
            }
            let tangent = m - n[t] * n[t].dot(&m);
            let len = tangent.norm();
            if len < 1e-12 {
                // Neighbor transports cancel: keep the previous direction.
                continue;
            }
            let new = tangent / len;
            let change = v1[t].cross(&new).norm().atan2(v1[t].dot(&new));
            max_change = max_change.max(change.abs());
            v1[t] = new;
        }
        energy_trace.push(variation_energy(geom, &n, &v1));
        if max_change < tol {
            break;
        }
    }

    let v2: Vec<Vector3<f64>> = (0..nt).map(|t| n[t].cross(&v1[t])).collect();

    // Triangles whose mean per-edge residual stays large (direction-field
    // singularities forced by topology).
    let mut high_variation = Vec::new();
    for t in 0..nt {
        if adj.neighbors[t].is_empty() {
            continue;
        }
        let mut local = 0.0;
        for &nb in &adj.neighbors[t] {
            let moved = transport(&n[nb], &n[t], &v1[nb]);
            local += (v1[t] - moved).norm_squared();
        }
        if local / adj.neighbors[t].len() as f64 > 1.0 {
            high_variation.push(t);
        }
    }

    FrameField {
        v1,
        v2,
        n,
        energy_trace,
        high_variation,
        components,
    }
}
