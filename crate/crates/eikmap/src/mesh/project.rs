//! Closest-point projection of measurement points onto the surface.
//!
//! Projection runs against an AABB tree; the brute-force scan in the tests
//! is the exactness contract.

use super::MeshGeometry;
use crate::{Error, Result};
use nalgebra::{Point3, Vector3};

/// One measurement point mapped onto the surface.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    /// Host triangle index.
    pub triangle: usize,
    /// Barycentric coordinates on the host triangle (non-negative, sum 1).
    pub bary: [f64; 3],
    /// Distance from the original point to the surface (mm).
    pub distance: f64,
    /// Recorded activation time (ms).
    pub time_ms: f64,
}

/// Projected measurement set including points dropped for being too far
/// from the surface.
#[derive(Debug, Clone, Default)]
pub struct SurfaceSamples {
    pub samples: Vec<SurfaceSample>,
    /// (input index, distance) of points beyond `max_dist`.
    pub dropped: Vec<(usize, f64)>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.time_ms)
    }

    /// Shift all recorded times by `-offset`.
    pub fn shift_times(&mut self, offset: f64) {
        for s in &mut self.samples {
            s.time_ms -= offset;
        }
    }
}

/// Closest point on triangle (a, b, c) to p, with barycentric coordinates.
pub fn closest_point_on_triangle(
    p: Point3<f64>,
    a: Point3<f64>,
    b: Point3<f64>,
    c: Point3<f64>,
) -> ([f64; 3], Point3<f64>) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], a);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], a + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], b + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], a + ab * v + ac * w)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Point3<f64>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn merge(&mut self, other: &Aabb) {
        self.grow(other.lo);
        self.grow(other.hi);
    }

    fn dist_sq(&self, p: Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let t = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
            d += t * t;
        }
        d
    }

    fn longest_axis(&self) -> usize {
        let e = self.hi - self.lo;
        let mut axis = 0;
        if e[1] > e[axis] {
            axis = 1;
        }
        if e[2] > e[axis] {
            axis = 2;
        }
        axis
    }
}

enum Node {
    Leaf {
        start: usize,
        count: usize,
    },
    Inner {
        aabb_left: Aabb,
        aabb_right: Aabb,
        left: usize,
        right: usize,
    },
}

/// Bounding-volume tree over triangles for closest-point queries.
pub struct TriangleBvh<'g> {
    geom: &'g MeshGeometry,
    nodes: Vec<Node>,
    order: Vec<usize>,
    root_aabb: Aabb,
}

const LEAF_SIZE: usize = 8;

impl<'g> TriangleBvh<'g> {
    pub fn build(geom: &'g MeshGeometry) -> Self {
        let nt = geom.num_triangles();
        let mut order: Vec<usize> = (0..nt).collect();
        let aabbs: Vec<Aabb> = (0..nt)
            .map(|t| {
                let mut bb = Aabb::empty();
                for p in geom.corners(t) {
                    bb.grow(p);
                }
                bb
            })
            .collect();
        let mut nodes = Vec::new();
        let mut root_aabb = Aabb::empty();
        for bb in &aabbs {
            root_aabb.merge(bb);
        }
        if nt > 0 {
            build_node(geom, &aabbs, &mut order, 0, nt, &mut nodes);
        }
        TriangleBvh {
            geom,
            nodes,
            order,
            root_aabb,
        }
    }

    /// Closest surface point to `p`: (triangle, barycentric, point, distance).
    pub fn closest(&self, p: Point3<f64>) -> (usize, [f64; 3], Point3<f64>, f64) {
        let mut best = (usize::MAX, [0.0; 3], Point3::origin(), f64::INFINITY);
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack: Vec<(usize, f64)> = vec![(0, self.root_aabb.dist_sq(p))];
        while let Some((node, lower)) = stack.pop() {
            if lower >= best.3 * best.3 {
                continue;
            }
            match &self.nodes[node] {
                Node::Leaf { start, count } => {
                    for &t in &self.order[*start..*start + *count] {
                        let [a, b, c] = self.geom.corners(t);
                        let (bary, q) = closest_point_on_triangle(p, a, b, c);
                        let d = (p - q).norm();
                        if d < best.3 {
                            best = (t, bary, q, d);
                        }
                    }
                }
                Node::Inner {
                    aabb_left,
                    aabb_right,
                    left,
                    right,
                } => {
                    let dl = aabb_left.dist_sq(p);
                    let dr = aabb_right.dist_sq(p);
                    // Push the farther child first so the nearer is visited next.
                    if dl <= dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        best
    }
}

fn build_node(
    geom: &MeshGeometry,
    aabbs: &[Aabb],
    order: &mut [usize],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, count });
        return id;
    }
    let mut bb = Aabb::empty();
    for &t in &order[start..start + count] {
        bb.grow(centroid(geom, t));
    }
    let axis = bb.longest_axis();
    let slice = &mut order[start..start + count];
    let mid = count / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroid(geom, a)[axis]
            .partial_cmp(&centroid(geom, b)[axis])
            .unwrap()
    });
    nodes.push(Node::Leaf { start: 0, count: 0 }); // placeholder
    let left = build_node(geom, aabbs, order, start, mid, nodes);
    let right = build_node(geom, aabbs, order, start + mid, count - mid, nodes);
    let mut bb_of = |lo: usize, n: usize| {
        let mut bb = Aabb::empty();
        for &t in &order[lo..lo + n] {
            bb.merge(&aabbs[t]);
        }
        bb
    };
    let aabb_left = bb_of(start, mid);
    let aabb_right = bb_of(start + mid, count - mid);
    nodes[id] = Node::Inner {
        aabb_left,
        aabb_right,
        left,
        right,
    };
    id
}

fn centroid(geom: &MeshGeometry, t: usize) -> Point3<f64> {
    geom.centroid(t)
}

/// Map measurement points onto the mesh by closest-point projection.
/// Points farther than `max_dist` (mm) are dropped and reported.
pub fn project_points(
    geom: &MeshGeometry,
    points: &[Point3<f64>],
    times_ms: &[f64],
    max_dist: f64,
) -> Result<SurfaceSamples> {
    if points.len() != times_ms.len() {
        return Err(Error::Invalid(format!(
            "{} points but {} times",
            points.len(),
            times_ms.len()
        )));
    }
    let bvh = TriangleBvh::build(geom);
    let mut out = SurfaceSamples::default();
    for (i, (&p, &t)) in points.iter().zip(times_ms).enumerate() {
        let (tri, bary, _, dist) = bvh.closest(p);
        if dist <= max_dist {
            out.samples.push(SurfaceSample {
                triangle: tri,
                bary,
                distance: dist,
                time_ms: t,
            });
        } else {
            out.dropped.push((i, dist));
        }
    }
    if out.samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "all {} points beyond max_dist = {max_dist} mm",
            points.len()
        )));
    }
    Ok(out)
}

/// Outward offset of a surface point along a direction, used by tests.
pub fn offset_point(p: Point3<f64>, dir: Vector3<f64>, by: f64) -> Point3<f64> {
    p + dir * by
}
