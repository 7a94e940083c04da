//! Error metrics between recovered and ground-truth fields, and the local
//! activation-gradient baseline.

use crate::eikonal::ActivationField;
use crate::frames::FrameField;
use crate::mesh::{MeshGeometry, SurfaceSamples};
use crate::tensor::{assemble_world_tensor, ConductivityTensor, TensorParamField};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Wavefront propagation direction and speed on one triangle.
#[derive(Debug, Clone, Copy)]
pub struct Front {
    /// Unit propagation direction e = D g / ‖D g‖ (world coordinates).
    pub direction: Vector3<f64>,
    /// Speed in the propagation direction, √⟨D e, e⟩ (m/s).
    pub speed: f64,
}

/// Surface gradient of a piecewise-linear per-vertex field on a triangle.
pub fn surface_gradient(geom: &MeshGeometry, u: &[f64], tri: usize) -> Vector3<f64> {
    let [i0, i1, i2] = geom.triangle(tri);
    let [p0, p1, p2] = geom.corners(tri);
    let n = geom.normal(tri);
    let inv_2a = 1.0 / (2.0 * geom.area(tri));
    let grad_l1 = n.cross(&(p0 - p2)) * inv_2a;
    let grad_l2 = n.cross(&(p1 - p0)) * inv_2a;
    (u[i1] - u[i0]) * grad_l1 + (u[i2] - u[i0]) * grad_l2
}

/// Per-triangle front direction and speed from an activation field and the
/// world conductivity tensors. Triangles where the activation gradient is
/// numerically zero (front extrema) are skipped.
pub fn front_direction_and_speed(
    u: &ActivationField,
    tensors: &[Matrix3<f64>],
    geom: &MeshGeometry,
) -> Vec<Option<Front>> {
    (0..geom.num_triangles())
        .map(|t| {
            let g = surface_gradient(geom, &u.u, t);
            if g.norm() < 1e-12 {
                return None;
            }
            let dg = tensors[t] * g;
            let norm = dg.norm();
            if norm < 1e-300 {
                return None;
            }
            let e = dg / norm;
            Some(Front {
                direction: e,
                speed: (tensors[t] * e).dot(&e).sqrt(),
            })
        })
        .collect()
}

/// Everything the error metrics need from one model (or ground truth).
#[derive(Debug, Clone)]
pub struct FieldSet {
    pub front: Vec<Option<Front>>,
    pub fiber_dir: Vec<Vector3<f64>>,
    pub v_fiber: Vec<f64>,
    pub v_cross: Vec<f64>,
    pub isotropic: Vec<bool>,
}

impl FieldSet {
    /// Assemble from tensor parameters and their activation solution.
    pub fn from_params(
        params: &TensorParamField,
        frames: &FrameField,
        geom: &MeshGeometry,
        activation: &ActivationField,
    ) -> FieldSet {
        let tensors: Vec<ConductivityTensor> = (0..params.len())
            .map(|t| assemble_world_tensor(params.get(t), frames, t))
            .collect();
        Self::from_tensors(&tensors, geom, activation)
    }

    pub fn from_tensors(
        tensors: &[ConductivityTensor],
        geom: &MeshGeometry,
        activation: &ActivationField,
    ) -> FieldSet {
        let world: Vec<Matrix3<f64>> = tensors.iter().map(|t| t.d_world).collect();
        FieldSet {
            front: front_direction_and_speed(activation, &world, geom),
            fiber_dir: tensors.iter().map(|t| t.fiber_dir).collect(),
            v_fiber: tensors.iter().map(|t| t.v_fiber).collect(),
            v_cross: tensors.iter().map(|t| t.v_cross).collect(),
            isotropic: tensors.iter().map(|t| t.isotropic).collect(),
        }
    }
}

/// Aggregates of one per-triangle error field.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorStats {
    /// Plain root-mean-square.
    pub rmse: f64,
    /// Area-weighted root-mean-square.
    pub rmse_area_weighted: f64,
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

fn stats(errors: &[(usize, f64)], geom: &MeshGeometry) -> ErrorStats {
    if errors.is_empty() {
        return ErrorStats::default();
    }
    let n = errors.len() as f64;
    let sum_sq: f64 = errors.iter().map(|&(_, e)| e * e).sum();
    let mut wsum = 0.0;
    let mut wsq = 0.0;
    for &(t, e) in errors {
        let a = geom.area(t);
        wsum += a;
        wsq += a * e * e;
    }
    let mut sorted: Vec<f64> = errors.iter().map(|&(_, e)| e).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    ErrorStats {
        rmse: (sum_sq / n).sqrt(),
        rmse_area_weighted: (wsq / wsum).sqrt(),
        mean: errors.iter().map(|&(_, e)| e).sum::<f64>() / n,
        median,
        count: errors.len(),
    }
}

/// Per-triangle errors and their aggregates.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Front angle error arccos⟨e, e_GT⟩ in degrees, in [0, 180).
    pub front_angle: ErrorStats,
    /// Front velocity error v·cos(α_e) − v_GT (m/s, signed; RMSE aggregates).
    pub front_velocity: ErrorStats,
    /// Fiber angle error arccos|⟨f, f_GT⟩| in degrees, in [0, 90].
    pub fiber_angle: ErrorStats,
    /// Fiber velocity error v_f·cos(α_f) − v_f,GT (m/s, signed).
    pub fiber_velocity: ErrorStats,
    pub per_triangle_front_angle: Vec<Option<f64>>,
    pub per_triangle_fiber_angle: Vec<Option<f64>>,
}

/// Compare a model field set against ground truth. Fiber-angle errors skip
/// triangles flagged isotropic on either side.
pub fn angle_and_velocity_errors(
    model: &FieldSet,
    gt: &FieldSet,
    geom: &MeshGeometry,
) -> MetricsReport {
    let nt = geom.num_triangles();
    let mut front_angle = Vec::new();
    let mut front_velocity = Vec::new();
    let mut fiber_angle = Vec::new();
    let mut fiber_velocity = Vec::new();
    let mut per_front = vec![None; nt];
    let mut per_fiber = vec![None; nt];

    for t in 0..nt {
        if let (Some(m), Some(g)) = (&model.front[t], &gt.front[t]) {
            let cos = m.direction.dot(&g.direction).clamp(-1.0, 1.0);
            let angle = cos.acos().to_degrees();
            front_angle.push((t, angle));
            per_front[t] = Some(angle);
            front_velocity.push((t, m.speed * cos - g.speed));
        }
        let fiber_cos = model.fiber_dir[t].dot(&gt.fiber_dir[t]).abs().clamp(0.0, 1.0);
        if !(model.isotropic[t] || gt.isotropic[t]) {
            let angle = fiber_cos.acos().to_degrees();
            fiber_angle.push((t, angle));
            per_fiber[t] = Some(angle);
            fiber_velocity.push((t, model.v_fiber[t] * fiber_cos - gt.v_fiber[t]));
        } else {
            // Velocity magnitude still comparable when direction is not.
            fiber_velocity.push((t, model.v_fiber[t] - gt.v_fiber[t]));
        }
    }

    MetricsReport {
        front_angle: stats(&front_angle, geom),
        front_velocity: stats(&front_velocity, geom),
        fiber_angle: stats(&fiber_angle, geom),
        fiber_velocity: stats(&fiber_velocity, geom),
        per_triangle_front_angle: per_front,
        per_triangle_fiber_angle: per_fiber,
    }
}

/// Local affine fit of the activation times around one sample.
#[derive(Debug, Clone, Copy)]
pub struct BaselineFit {
    pub direction: Vector3<f64>,
    pub speed: f64,
}

/// Local conduction-velocity baseline: for each sample, fit
/// t(x) ≈ t₀ + gᵀx to its k nearest samples (3-D positions) and report
/// direction g/‖g‖ and speed 1/‖g‖. Rank-deficient neighborhoods
/// (collinear points) are skipped.
pub fn local_baseline(
    geom: &MeshGeometry,
    samples: &SurfaceSamples,
    k_neighbors: usize,
) -> Result<Vec<Option<BaselineFit>>> {
    let n = samples.len();
    if k_neighbors > n {
        return Err(Error::InsufficientData(format!(
            "k_neighbors = {k_neighbors} exceeds {n} samples"
        )));
    }
    if k_neighbors < 4 {
        return Err(Error::Invalid("affine fit needs k_neighbors >= 4".into()));
    }
    let positions: Vec<Vector3<f64>> = samples
        .samples
        .iter()
        .map(|s| geom.position(s.triangle, s.bary).coords)
        .collect();

    let mut out = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        order.sort_by(|&a, &b| {
            (positions[a] - positions[i])
                .norm_squared()
                .partial_cmp(&(positions[b] - positions[i]).norm_squared())
                .unwrap()
        });
        let neigh = &order[..k_neighbors];
        // Centered design matrix [1 | x − x̄] for conditioning.
        let mut centroid = Vector3::zeros();
        for &j in neigh {
            centroid += positions[j];
        }
        centroid /= k_neighbors as f64;
        let mut a = DMatrix::zeros(k_neighbors, 4);
        let mut b = DVector::zeros(k_neighbors);
        for (row, &j) in neigh.iter().enumerate() {
            a[(row, 0)] = 1.0;
            let d = positions[j] - centroid;
            a[(row, 1)] = d.x;
            a[(row, 2)] = d.y;
            a[(row, 3)] = d.z;
            b[row] = samples.samples[j].time_ms;
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-9 * smax)
            .count();
        if rank < 3 {
            // Collinear neighborhood: the in-plane gradient is ambiguous.
            out.push(None);
            continue;
        }
        let coef = match svd.solve(&b, 1e-9 * smax) {
            Ok(c) => c,
            Err(_) => {
                out.push(None);
                continue;
            }
        };
        let g = Vector3::new(coef[1], coef[2], coef[3]);
        let norm = g.norm();
        if norm < 1e-12 {
            out.push(None);
            continue;
        }
        out.push(Some(BaselineFit {
            direction: g / norm,
            speed: 1.0 / norm,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eikonal::{solve_forward, SolverConfig};
    use crate::frames::compute_frames;
    use crate::mesh::{build_geometry, grid_sheet, SurfaceSample};
    use crate::synth::{make_synthetic, sample_surface, FiberRule, SyntheticScenario};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surface_gradient_of_linear_field_is_exact() {
        let geom = build_geometry(grid_sheet(5, 5, 5.0, 5.0)).unwrap();
        let g = Vector3::new(0.7, -0.3, 0.0);
        let u: Vec<f64> = (0..geom.num_vertices())
            .map(|i| geom.vertex(i).coords.dot(&g) + 2.0)
            .collect();
        for t in 0..geom.num_triangles() {
            let got = surface_gradient(&geom, &u, t);
            assert!((got - g).norm() < 1e-12);
        }
    }

    #[test]
    fn isotropic_front_matches_gradient_direction() {
        let geom = build_geometry(grid_sheet(10, 10, 10.0, 10.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-9);
        let v = 0.5;
        let params = TensorParamField::isotropic(geom.num_triangles(), v);
        let cfg = SolverConfig {
            kappa: 50.0,
            ..Default::default()
        };
        let field = solve_forward(&geom, &frames, &params, 0, &cfg).unwrap();
        let set = FieldSet::from_params(&params, &frames, &geom, &field);
        let x0 = geom.vertex(0);
        let mut checked = 0;
        for t in 0..geom.num_triangles() {
            let c = geom.centroid(t);
            if (c - x0).norm() < 3.0 {
                continue; // skip near-source discretization error
            }
            if let Some(front) = &set.front[t] {
                let radial = (c - x0).normalize();
                assert!(front.direction.dot(&radial) > 0.99);
                assert!((front.speed - v).abs() < 0.08);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn anisotropic_front_aligns_with_radial_not_gradient() {
        // For elliptic propagation u(x) = √⟨D̃⁻¹ x, x⟩, the propagation
        // direction is radial while ∇u is not.
        let geom = build_geometry(grid_sheet(14, 14, 14.0, 14.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-9);
        let scenario = SyntheticScenario {
            n_samples: 10,
            ..SyntheticScenario::new(FiberRule::FrameAngleDeg(30.0), 0)
        };
        let cfg = SolverConfig {
            kappa: 20.0,
            ..Default::default()
        };
        let (gt, _) = make_synthetic(&geom, &frames, &scenario, &cfg).unwrap();
        let set = FieldSet::from_tensors(&gt.tensors, &geom, &gt.activation);
        let x0 = geom.vertex(0);
        let mut radial_better = 0;
        let mut total = 0;
        for t in 0..geom.num_triangles() {
            let c = geom.centroid(t);
            if (c - x0).norm() < 4.0 {
                continue;
            }
            if let Some(front) = &set.front[t] {
                let radial = (c - x0).normalize();
                let grad = surface_gradient(&geom, &gt.activation.u, t).normalize();
                let to_front = front.direction.dot(&radial);
                let to_grad = grad.dot(&radial);
                total += 1;
                if to_front > to_grad + 1e-6 {
                    radial_better += 1;
                }
            }
        }
        assert!(total > 100);
        assert!(
            radial_better as f64 > 0.8 * total as f64,
            "{radial_better}/{total}"
        );
    }

    #[test]
    fn front_speed_satisfies_metric_identity() {
        // ⟨D g, e⟩ = ‖D g‖ for e = D g / ‖D g‖, any SPD D and gradient g.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let d = a * a.transpose() + Matrix3::identity() * 0.1;
            let g = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let dg = d * g;
            let e = dg / dg.norm();
            assert!((dg.dot(&e) - dg.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_fields_have_zero_errors() {
        let geom = build_geometry(grid_sheet(8, 8, 8.0, 8.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-9);
        let scenario = SyntheticScenario {
            n_samples: 10,
            ..SyntheticScenario::new(FiberRule::FrameAngleDeg(30.0), 0)
        };
        let (gt, _) = make_synthetic(&geom, &frames, &scenario, &SolverConfig::default()).unwrap();
        let set = FieldSet::from_tensors(&gt.tensors, &geom, &gt.activation);
        let report = angle_and_velocity_errors(&set, &set, &geom);
        assert!(report.front_angle.rmse < 1e-9);
        assert!(report.front_velocity.rmse < 1e-12);
        assert!(report.fiber_angle.rmse < 1e-9);
        assert!(report.fiber_velocity.rmse < 1e-12);
    }

    #[test]
    fn negated_fibers_have_zero_angle_error() {
        let geom = build_geometry(grid_sheet(6, 6, 6.0, 6.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-9);
        let scenario = SyntheticScenario {
            n_samples: 10,
            ..SyntheticScenario::new(FiberRule::FrameAngleDeg(45.0), 0)
        };
        let (gt, _) = make_synthetic(&geom, &frames, &scenario, &SolverConfig::default()).unwrap();
        let set = FieldSet::from_tensors(&gt.tensors, &geom, &gt.activation);
        let mut negated = set.clone();
        for f in &mut negated.fiber_dir {
            *f = -*f;
        }
        let report = angle_and_velocity_errors(&negated, &set, &geom);
        assert!(report.fiber_angle.rmse < 1e-9);
    }

    #[test]
    fn cosine_factor_in_velocity_error() {
        // v = v_GT but misaligned by 60° → error = v/2 − v_GT = −v_GT/2.
        let geom = build_geometry(grid_sheet(2, 1, 2.0, 1.0)).unwrap();
        let nt = geom.num_triangles();
        let dir_a = Vector3::x();
        let angle = 60f64.to_radians();
        let dir_b = Vector3::new(angle.cos(), angle.sin(), 0.0);
        let v = 0.6;
        let mk = |dir: Vector3<f64>| FieldSet {
            front: vec![
                Some(Front {
                    direction: dir,
                    speed: v,
                });
                nt
            ],
            fiber_dir: vec![dir; nt],
            v_fiber: vec![v; nt],
            v_cross: vec![0.4; nt],
            isotropic: vec![false; nt],
        };
        let report = angle_and_velocity_errors(&mk(dir_b), &mk(dir_a), &geom);
        assert!((report.front_angle.mean - 60.0).abs() < 1e-9);
        assert!((report.front_velocity.mean - (v * 0.5 - v)).abs() < 1e-12);
        assert!((report.fiber_velocity.mean - (v * 0.5 - v)).abs() < 1e-12);
    }

    #[test]
    fn swapping_model_and_gt_negates_velocity_preserves_angles() {
        let geom = build_geometry(grid_sheet(8, 8, 8.0, 8.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-9);
        let cfg = SolverConfig::default();
        let s1 = SyntheticScenario {
            n_samples: 10,
            ..SyntheticScenario::new(FiberRule::FrameAngleDeg(20.0), 0)
        };
        let mut s2 = SyntheticScenario {
            n_samples: 10,
            ..SyntheticScenario::new(FiberRule::FrameAngleDeg(50.0), 0)
        };
        s2.v_fiber = 0.7;
        let (gt1, _) = make_synthetic(&geom, &frames, &s1, &cfg).unwrap();
        let (gt2, _) = make_synthetic(&geom, &frames, &s2, &cfg).unwrap();
        let a = FieldSet::from_tensors(&gt1.tensors, &geom, &gt1.activation);
        let b = FieldSet::from_tensors(&gt2.tensors, &geom, &gt2.activation);
        let ab = angle_and_velocity_errors(&a, &b, &geom);
        let ba = angle_and_velocity_errors(&b, &a, &geom);
        assert!((ab.front_angle.rmse - ba.front_angle.rmse).abs() < 1e-9);
        assert!((ab.fiber_angle.rmse - ba.fiber_angle.rmse).abs() < 1e-9);
        // Velocity errors change sign only through the cosine factor; with
        // equal angles the mean flips sign up to the cos-weighted asymmetry.
        assert!(ab.front_velocity.mean * ba.front_velocity.mean <= 1e-9);
    }

    #[test]
    fn baseline_exact_on_planar_affine_data() {
        let geom = build_geometry(grid_sheet(10, 10, 10.0, 10.0)).unwrap();
        let v = 0.8;
        let g = Vector3::new(1.0 / v, 0.0, 0.0);
        let u: Vec<f64> = (0..geom.num_vertices())
            .map(|i| geom.vertex(i).coords.dot(&g))
            .collect();
        let samples = sample_surface(&geom, &u, 100, 7);
        let fits = local_baseline(&geom, &samples, 10).unwrap();
        for fit in fits.iter().flatten() {
            assert!((fit.speed - v).abs() < 1e-9);
            assert!((fit.direction - Vector3::x()).norm() < 1e-9);
        }
        assert!(fits.iter().filter(|f| f.is_some()).count() > 90);
    }

    #[test]
    fn baseline_k_exceeding_samples_errors() {
        let geom = build_geometry(grid_sheet(4, 4, 4.0, 4.0)).unwrap();
        let u = vec![0.0; geom.num_vertices()];
        let samples = sample_surface(&geom, &u, 5, 1);
        assert!(local_baseline(&geom, &samples, 10).is_err());
    }

    #[test]
    fn baseline_flags_collinear_neighborhoods() {
        let geom = build_geometry(grid_sheet(10, 1, 10.0, 0.1)).unwrap();
        // All samples on one line.
        let mut samples = SurfaceSamples::default();
        for k in 0..10 {
            samples.samples.push(SurfaceSample {
                triangle: (2 * k).min(geom.num_triangles() - 1),
                bary: [1.0, 0.0, 0.0],
                distance: 0.0,
                time_ms: k as f64,
            });
        }
        let fits = local_baseline(&geom, &samples, 6).unwrap();
        assert!(fits.iter().all(|f| f.is_none()));
    }
}
