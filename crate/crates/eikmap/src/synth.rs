//! Synthetic ground truth: prescribed fiber fields and velocities, forward
//! solution, surface sampling and measurement noise.

use crate::eikonal::{solve_forward, ActivationField, SolverConfig};
use crate::frames::FrameField;
use crate::mesh::{MeshGeometry, SurfaceSample, SurfaceSamples};
use crate::tensor::{assemble_world_tensor, params_from_fiber, ConductivityTensor, TensorParamField};
use crate::{Error, Result};
use nalgebra::{Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Rule assigning a fiber direction to every triangle.
#[derive(Debug, Clone)]
pub enum FiberRule {
    /// Constant angle (degrees) from the frame's v1 axis, in-plane.
    FrameAngleDeg(f64),
    /// A world direction projected onto each tangent plane.
    WorldDirection(Vector3<f64>),
}

impl FiberRule {
    pub fn direction(&self, frames: &FrameField, tri: usize) -> Vector3<f64> {
        match self {
            FiberRule::FrameAngleDeg(deg) => {
                let (s, c) = deg.to_radians().sin_cos();
                frames.v1(tri) * c + frames.v2(tri) * s
            }
            FiberRule::WorldDirection(w) => *w,
        }
    }
}

/// Circular low-conduction region: triangles whose centroid lies within
/// `radius` of `center` become isotropic at `velocity` m/s.
#[derive(Debug, Clone)]
pub struct LesionSpec {
    pub center: Point3<f64>,
    pub radius: f64,
    pub velocity: f64,
}

/// Knobs of one synthetic experiment.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub rule: FiberRule,
    pub v_fiber: f64,
    pub v_cross: f64,
    pub lesion: Option<LesionSpec>,
    pub source: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn new(rule: FiberRule, source: usize) -> Self {
        SyntheticScenario {
            rule,
            v_fiber: 0.6,
            v_cross: 0.4,
            lesion: None,
            source,
            n_samples: 884,
            seed: 0,
        }
    }
}

/// Ground-truth fields of a synthetic experiment.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub params: TensorParamField,
    pub activation: ActivationField,
    pub tensors: Vec<ConductivityTensor>,
    pub lesion_mask: Vec<bool>,
    pub source: usize,
}

/// Build ground-truth parameters from the scenario, solve the forward
/// problem and draw area-uniform surface samples with exactly interpolated
/// times.
pub fn make_synthetic(
    geom: &MeshGeometry,
    frames: &FrameField,
    scenario: &SyntheticScenario,
    solver: &SolverConfig,
) -> Result<(GroundTruth, SurfaceSamples)> {
    if scenario.n_samples == 0 {
        return Err(Error::InsufficientData("n_samples = 0".into()));
    }
    if scenario.source >= geom.num_vertices() {
        return Err(Error::Invalid(format!(
            "source vertex {} out of range",
            scenario.source
        )));
    }
    let nt = geom.num_triangles();
    let mut params = TensorParamField::constant(nt, [0.0; 3]);
    let mut lesion_mask = vec![false; nt];
    for t in 0..nt {
        let in_lesion = scenario
            .lesion
            .as_ref()
            .map(|l| (geom.centroid(t) - l.center).norm() <= l.radius)
            .unwrap_or(false);
        lesion_mask[t] = in_lesion;
        let d = if in_lesion {
            let v = scenario.lesion.as_ref().unwrap().velocity;
            [2.0 * v.ln(), 0.0, 2.0 * v.ln()]
        } else {
            let fiber = scenario.rule.direction(frames, t);
            params_from_fiber(frames, t, &fiber, scenario.v_fiber, scenario.v_cross)?
        };
        params.set(t, d);
    }

    let activation = solve_forward(geom, frames, &params, scenario.source, solver)?;
    if !activation.converged {
        return Err(Error::NotConverged(
            "ground-truth forward solve did not converge".into(),
        ));
    }
    let tensors: Vec<ConductivityTensor> = (0..nt)
        .map(|t| assemble_world_tensor(params.get(t), frames, t))
        .collect();

    let samples = sample_surface(geom, &activation.u, scenario.n_samples, scenario.seed);

    Ok((
        GroundTruth {
            params,
            activation,
            tensors,
            lesion_mask,
            source: scenario.source,
        },
        samples,
    ))
}

/// Approximately area-uniform random surface points with exact barycentric
/// interpolation of the given per-vertex field.
pub fn sample_surface(
    geom: &MeshGeometry,
    field: &[f64],
    n_samples: usize,
    seed: u64,
) -> SurfaceSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(geom.num_triangles());
    let mut total = 0.0;
    for t in 0..geom.num_triangles() {
        total += geom.area(t);
        cumulative.push(total);
    }
    let mut out = SurfaceSamples::default();
    for _ in 0..n_samples {
        let r = rng.random::<f64>() * total;
        let tri = cumulative.partition_point(|&c| c < r).min(cumulative.len() - 1);
        // Uniform barycentric draw.
        let s = rng.random::<f64>().sqrt();
        let v = rng.random::<f64>();
        let bary = [1.0 - s, s * (1.0 - v), s * v];
        out.samples.push(SurfaceSample {
            triangle: tri,
            bary,
            distance: 0.0,
            time_ms: geom.interpolate(field, tri, bary),
        });
    }
    out
}

/// Report of one noise injection.
#[derive(Debug, Clone, Copy)]
pub struct NoiseReport {
    pub sigma: f64,
    /// Standard deviation of the noise actually drawn.
    pub empirical_std: f64,
    /// 20 log₁₀(signal range / σ); infinite for σ = 0. Depends on the
    /// activation range of the map, so it is reported, not asserted.
    pub psnr_db: f64,
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma` (ms) to the
/// recorded times. Reproducible by seed.
pub fn add_noise(samples: &SurfaceSamples, sigma: f64, seed: u64) -> (SurfaceSamples, NoiseReport) {
    let mut out = samples.clone();
    let (lo, hi) = samples
        .times()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t), hi.max(t))
        });
    let range = (hi - lo).max(0.0);
    if sigma == 0.0 {
        return (
            out,
            NoiseReport {
                sigma,
                empirical_std: 0.0,
                psnr_db: f64::INFINITY,
            },
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    let mut draws = Vec::with_capacity(out.samples.len());
    for s in &mut out.samples {
        let n = normal.sample(&mut rng);
        draws.push(n);
        s.time_ms += n;
    }
    let mean = draws.iter().sum::<f64>() / draws.len().max(1) as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (draws.len().max(2) - 1) as f64;
    (
        out,
        NoiseReport {
            sigma,
            empirical_std: var.sqrt(),
            psnr_db: 20.0 * (range / sigma).log10(),
        },
    )
}
