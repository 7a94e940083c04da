//! Anisotropic eikonal solver: parallel soft-min fixed-point iteration on a
//! triangulated surface, plus reverse-mode differentiation of the data
//! misfit with respect to the log-Euclidean tensor parameters.
//!
//! Every vertex is updated concurrently from the previous iterate
//! (Jacobi sweeps). A vertex update minimizes, over each triangle of its
//! one-ring patch, the interpolated arrival time along the opposite edge
//! plus the metric distance to the vertex; the per-edge minimization is
//! solved in closed form and the soft minimum over the resulting candidate
//! set keeps the map differentiable.

use crate::frames::FrameField;
use crate::mesh::{MeshGeometry, SurfaceSamples};
use crate::tensor::{exp2x2, exp2x2_with_partials, TensorParamField};
use crate::{Error, Result};
use nalgebra::{Matrix3, Point3, Vector2};
use rayon::prelude::*;

/// Used when no explicit initial upper bound is configured: ten mesh
/// diameters at a conservative minimum velocity (m/s).
pub const DEFAULT_MIN_VELOCITY_GUESS: f64 = 0.1;

/// Configuration of the fixed-point solver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Softmin sharpness κ (1/ms).
    pub kappa: f64,
    /// Stop when no vertex changes by more than this (ms).
    pub tol: f64,
    pub max_iters: usize,
    /// Initial upper bound for unknown activation times (ms). When `None`,
    /// 10 × diameter / 0.1 m/s is used.
    pub u_init: Option<f64>,
    /// Number of final sweeps to backpropagate through. `None` unrolls the
    /// whole recorded iteration, which is exact for converged solves.
    pub adjoint_sweeps: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kappa: 1.0,
            tol: 1e-4,
            max_iters: 5000,
            u_init: None,
            adjoint_sweeps: None,
        }
    }
}

impl SolverConfig {
    pub fn effective_u_init(&self, geom: &MeshGeometry) -> f64 {
        self.u_init
            .unwrap_or(10.0 * geom.diameter() / DEFAULT_MIN_VELOCITY_GUESS)
    }
}

/// Converged (or best-effort) activation times.
#[derive(Debug, Clone)]
pub struct ActivationField {
    /// Per-vertex activation time (ms).
    pub u: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest per-vertex change in the final sweep (ms).
    pub residual: f64,
}

/// Soft minimum −(1/κ) log Σ exp(−κ xᵢ), max-shifted for overflow safety.
/// Lies in [min − log(n)/κ, min].
pub fn softmin(values: &[f64], kappa: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let m = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if m.is_infinite() {
        return m;
    }
    let sum: f64 = values.iter().map(|&v| (-kappa * (v - m)).exp()).sum();
    m - sum.ln() / kappa
}

#[inline]
fn qform(n: &[f64; 3], x: &Vector2<f64>, y: &Vector2<f64>) -> f64 {
    n[0] * x.x * y.x + n[1] * (x.x * y.y + x.y * y.x) + n[2] * x.y * y.y
}

/// Candidate arrival times along one opposite edge.
///
/// g(t) = (1−t) u_a + t u_b + √(α t² + 2β t + γ) for t ∈ [0, 1]. Candidates
/// are the endpoints and the clamped interior stationary points (roots of
/// the squared optimality condition that satisfy the un-squared sign
/// condition). The continuous minimum is always among them.
#[inline]
fn edge_candidates(
    u_a: f64,
    u_b: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    out: &mut Vec<(f64, f64)>,
) {
    let value = |t: f64| {
        let q = (alpha * t * t + 2.0 * beta * t + gamma).max(0.0);
        (1.0 - t) * u_a + t * u_b + q.sqrt()
    };
    out.push((0.0, value(0.0)));
    out.push((1.0, value(1.0)));
    let delta = u_b - u_a;
    if delta == 0.0 {
        let t = (-beta / alpha).clamp(0.0, 1.0);
        out.push((t, value(t)));
        return;
    }
    let k = alpha - delta * delta;
    if k.abs() < 1e-14 * alpha {
        // Squared stationarity degenerates to a linear equation.
        let b = 2.0 * beta * k;
        let c = beta * beta - delta * delta * gamma;
        if b.abs() > 1e-300 {
            let t = -c / b;
            if (alpha * t + beta) * delta <= 0.0 {
                let t = t.clamp(0.0, 1.0);
                out.push((t, value(t)));
            }
        }
        return;
    }
    let a2 = alpha * k;
    let b2 = 2.0 * beta * k;
    let c2 = beta * beta - delta * delta * gamma;
    let disc = b2 * b2 - 4.0 * a2 * c2;
    if disc < 0.0 {
        return;
    }
    let sq = disc.sqrt();
    // Citardauq/quadratic split avoids cancellation.
    let q = -0.5 * (b2 + b2.signum() * sq);
    let roots = if q == 0.0 {
        [0.0, f64::NAN]
    } else {
        [q / a2, c2 / q]
    };
    for r in roots {
        if !r.is_finite() {
            continue;
        }
        // Un-squared condition: α t + β and δ have opposite signs at a
        // true stationary minimum.
        if (alpha * r + beta) * delta <= 1e-14 * alpha {
            let t = r.clamp(0.0, 1.0);
            out.push((t, value(t)));
        }
    }
}

/// Single-edge update of the fixed-point map: soft minimum over the
/// candidate set of interpolated time plus metric distance, for a world
/// conductivity tensor on the triangle.
pub fn local_update(
    u_a: f64,
    u_b: f64,
    x_i: Point3<f64>,
    a: Point3<f64>,
    b: Point3<f64>,
    d_world: &Matrix3<f64>,
    kappa: f64,
) -> Result<f64> {
    let inv = d_world
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("world tensor is singular".into()))?;
    let sym = (inv + inv.transpose()) * 0.5;
    if sym.symmetric_eigenvalues().iter().any(|&l| l <= 0.0) {
        return Err(Error::NotSpd("world tensor is not positive definite".into()));
    }
    let w = a - x_i;
    let e = b - a;
    if e.norm() < 1e-300 {
        return Err(Error::Invalid("degenerate edge".into()));
    }
    let alpha = (sym * e).dot(&e);
    let beta = (sym * w).dot(&e);
    let gamma = (sym * w).dot(&w);
    let mut cands = Vec::with_capacity(4);
    edge_candidates(u_a, u_b, alpha, beta, gamma, &mut cands);
    let values: Vec<f64> = cands.iter().map(|&(_, v)| v).collect();
    Ok(softmin(&values, kappa))
}

/// One one-ring entry of the per-vertex update stencil, with the opposite
/// edge expressed in the triangle's tangent basis.
#[derive(Debug, Clone)]
struct StencilEntry {
    tri: usize,
    a: usize,
    b: usize,
    rho_w: Vector2<f64>,
    rho_e: Vector2<f64>,
}

/// Per-solve coefficients of one stencil entry for fixed parameters.
#[derive(Debug, Clone, Copy)]
struct EntryCoeffs {
    a: usize,
    b: usize,
    entry: u32,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

/// Precomputed fixed-point map for one mesh + frame field.
pub struct FimOperator<'a> {
    geom: &'a MeshGeometry,
    frames: &'a FrameField,
    stencils: Vec<Vec<StencilEntry>>,
}

impl<'a> FimOperator<'a> {
    pub fn new(geom: &'a MeshGeometry, frames: &'a FrameField) -> Self {
        let nv = geom.num_vertices();
        let mut stencils = Vec::with_capacity(nv);
        for i in 0..nv {
            let xi = geom.vertex(i);
            let entries = geom
                .ring(i)
                .iter()
                .map(|ring| {
                    let (a, b) = (ring.opposite[0], ring.opposite[1]);
                    let w = geom.vertex(a) - xi;
                    let e = geom.vertex(b) - geom.vertex(a);
                    StencilEntry {
                        tri: ring.triangle,
                        a,
                        b,
                        rho_w: frames.tangent_coords(ring.triangle, &w),
                        rho_e: frames.tangent_coords(ring.triangle, &e),
                    }
                })
                .collect();
            stencils.push(entries);
        }
        FimOperator {
            geom,
            frames,
            stencils,
        }
    }

    pub fn geometry(&self) -> &MeshGeometry {
        self.geom
    }

    pub fn frames(&self) -> &FrameField {
        self.frames
    }

    /// Inverse tangent metrics N = D̃⁻¹ = exp(−S(d)) per triangle, as
    /// (n11, n12, n22).
    fn inverse_metrics(&self, params: &TensorParamField) -> Vec<[f64; 3]> {
        params
            .values()
            .iter()
            .map(|d| {
                let m = exp2x2([-d[0], -d[1], -d[2]]);
                [m[(0, 0)], m[(0, 1)], m[(1, 1)]]
            })
            .collect()
    }

    /// Per-vertex candidate coefficients for fixed parameters.
    fn coefficients(&self, metrics: &[[f64; 3]]) -> Vec<Vec<EntryCoeffs>> {
        self.stencils
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .enumerate()
                    .map(|(k, e)| {
                        let n = &metrics[e.tri];
                        EntryCoeffs {
                            a: e.a,
                            b: e.b,
                            entry: k as u32,
                            alpha: qform(n, &e.rho_e, &e.rho_e),
                            beta: qform(n, &e.rho_w, &e.rho_e),
                            gamma: qform(n, &e.rho_w, &e.rho_w),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn check_inputs(&self, params: &TensorParamField, source: usize) -> Result<()> {
        if source >= self.geom.num_vertices() {
            return Err(Error::Invalid(format!(
                "source vertex {source} out of range"
            )));
        }
        if params.len() != self.geom.num_triangles() {
            return Err(Error::Invalid(format!(
                "{} parameter triples for {} triangles",
                params.len(),
                self.geom.num_triangles()
            )));
        }
        if !params.is_finite() {
            return Err(Error::Invalid("non-finite tensor parameters".into()));
        }
        Ok(())
    }

    /// Solve the eikonal equation from a single source vertex.
    pub fn solve(
        &self,
        params: &TensorParamField,
        source: usize,
        cfg: &SolverConfig,
    ) -> Result<ActivationField> {
        let (field, _) = self.solve_impl(params, source, cfg, false)?;
        Ok(field)
    }

    fn solve_impl(
        &self,
        params: &TensorParamField,
        source: usize,
        cfg: &SolverConfig,
        record: bool,
    ) -> Result<(ActivationField, Vec<Vec<f64>>)> {
        self.check_inputs(params, source)?;
        let metrics = self.inverse_metrics(params);
        let coeffs = self.coefficients(&metrics);
        let u_init = cfg.effective_u_init(self.geom);
        let nv = self.geom.num_vertices();

        let mut u: Vec<f64> = vec![u_init; nv];
        u[source] = 0.0;
        let mut history: Vec<Vec<f64>> = Vec::new();
        if record {
            history.push(u.clone());
        }

        let mut residual = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        let mut next = vec![0.0; nv];
        for sweep in 0..cfg.max_iters {
            sweep_once(&coeffs, &u, &mut next, source, u_init, cfg.kappa);
            residual = u
                .par_iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .reduce(|| 0.0, f64::max);
            std::mem::swap(&mut u, &mut next);
            if record {
                history.push(u.clone());
            }
            iterations = sweep + 1;
            if residual < cfg.tol {
                converged = true;
                break;
            }
        }
        Ok((
            ActivationField {
                u,
                converged,
                iterations,
                residual,
            },
            history,
        ))
    }

    /// Hard-minimum reference iteration (same candidate sets, `min` instead
    /// of softmin). Used as the bias oracle for the smooth solver.
    pub fn solve_hard_min(
        &self,
        params: &TensorParamField,
        source: usize,
        cfg: &SolverConfig,
    ) -> Result<ActivationField> {
        self.check_inputs(params, source)?;
        let metrics = self.inverse_metrics(params);
        let coeffs = self.coefficients(&metrics);
        let u_init = cfg.effective_u_init(self.geom);
        let nv = self.geom.num_vertices();
        let mut u = vec![u_init; nv];
        u[source] = 0.0;
        let mut next = vec![0.0; nv];
        let mut residual = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        for sweep in 0..cfg.max_iters {
            next.iter_mut().enumerate().for_each(|(i, out)| {
                if i == source {
                    *out = 0.0;
                    return;
                }
                let mut best = f64::INFINITY;
                let mut cands = Vec::with_capacity(4);
                for c in &coeffs[i] {
                    cands.clear();
                    edge_candidates(u[c.a], u[c.b], c.alpha, c.beta, c.gamma, &mut cands);
                    for &(_, v) in &cands {
                        best = best.min(v);
                    }
                }
                *out = if best.is_finite() { best } else { u_init };
            });
            residual = u
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut u, &mut next);
            iterations = sweep + 1;
            if residual < cfg.tol {
                converged = true;
                break;
            }
        }
        Ok(ActivationField {
            u,
            converged,
            iterations,
            residual,
        })
    }
}

fn sweep_once(
    coeffs: &[Vec<EntryCoeffs>],
    u: &[f64],
    next: &mut [f64],
    source: usize,
    u_init: f64,
    kappa: f64,
) {
    next.par_iter_mut()
        .enumerate()
        .for_each_init(Vec::new, |cands, (i, out)| {
            if i == source {
                *out = 0.0;
                return;
            }
            cands.clear();
            for c in &coeffs[i] {
                edge_candidates(u[c.a], u[c.b], c.alpha, c.beta, c.gamma, cands);
            }
            if cands.is_empty() {
                *out = u_init;
                return;
            }
            let m = cands
                .iter()
                .map(|&(_, v)| v)
                .fold(f64::INFINITY, f64::min);
            let sum: f64 = cands.iter().map(|&(_, v)| (-kappa * (v - m)).exp()).sum();
            *out = m - sum.ln() / kappa;
        });
}

/// Convenience wrapper: build the operator and solve.
pub fn solve_forward(
    geom: &MeshGeometry,
    frames: &FrameField,
    params: &TensorParamField,
    source: usize,
    cfg: &SolverConfig,
) -> Result<ActivationField> {
    FimOperator::new(geom, frames).solve(params, source, cfg)
}

/// Least-squares data misfit ½ Σ (u(s) − û_s)² with barycentric
/// interpolation of u on each sample's host triangle (ms²).
pub fn data_residual(u: &[f64], geom: &MeshGeometry, samples: &SurfaceSamples) -> f64 {
    0.5 * samples
        .samples
        .iter()
        .map(|s| {
            let v = geom.interpolate(u, s.triangle, s.bary);
            (v - s.time_ms) * (v - s.time_ms)
        })
        .sum::<f64>()
}

/// Gradient of the data term together with the forward solution it was
/// evaluated at.
#[derive(Debug, Clone)]
pub struct DataTermGradient {
    pub grad: Vec<[f64; 3]>,
    pub field: ActivationField,
    /// Data misfit value at the solution (ms²).
    pub value: f64,
}

impl<'a> FimOperator<'a> {
    /// ∇_d of (data_residual ∘ solve) by reverse-mode accumulation through
    /// the recorded fixed-point sweeps. Refuses to differentiate a
    /// non-converged forward solve.
    pub fn grad_data_term(
        &self,
        params: &TensorParamField,
        samples: &SurfaceSamples,
        source: usize,
        cfg: &SolverConfig,
    ) -> Result<DataTermGradient> {
        let (field, history) = self.solve_impl(params, source, cfg, true)?;
        if !field.converged {
            return Err(Error::NotConverged(format!(
                "forward solve residual {:.3e} ms after {} sweeps; gradient refused",
                field.residual, field.iterations
            )));
        }
        let value = data_residual(&field.u, self.geom, samples);

        // Metric partials ∂N/∂d per triangle: N = exp(−S(d)).
        let nt = self.geom.num_triangles();
        let mut metrics = vec![[0.0; 3]; nt];
        let mut metric_partials = vec![[[0.0; 3]; 3]; nt];
        for t in 0..nt {
            let d = params.get(t);
            let (m, p) = exp2x2_with_partials([-d[0], -d[1], -d[2]]);
            metrics[t] = [m[(0, 0)], m[(0, 1)], m[(1, 1)]];
            for k in 0..3 {
                metric_partials[t][k] = [-p[k][(0, 0)], -p[k][(0, 1)], -p[k][(1, 1)]];
            }
        }
        let coeffs = self.coefficients(&metrics);

        // Seed: ∂(data term)/∂u at the final iterate.
        let nv = self.geom.num_vertices();
        let mut bar_u = vec![0.0; nv];
        for s in &samples.samples {
            let tri = self.geom.triangle(s.triangle);
            let v = self.geom.interpolate(&field.u, s.triangle, s.bary);
            let misfit = v - s.time_ms;
            for k in 0..3 {
                bar_u[tri[k]] += misfit * s.bary[k];
            }
        }

        let total_sweeps = history.len() - 1;
        let unroll = cfg.adjoint_sweeps.unwrap_or(total_sweeps).min(total_sweeps);
        let mut grad = vec![[0.0; 3]; nt];
        let mut cands: Vec<(f64, f64)> = Vec::with_capacity(4);
        let mut local: Vec<(u32, f64, f64)> = Vec::new();

        for sweep in (total_sweeps - unroll..total_sweeps).rev() {
            let u_in = &history[sweep];
            let mut bar_prev = vec![0.0; nv];
            for i in 0..nv {
                let bar = bar_u[i];
                if bar == 0.0 || i == source || coeffs[i].is_empty() {
                    continue;
                }
                // Recompute the candidate set and softmin weights at u_in.
                local.clear();
                let mut m = f64::INFINITY;
                for c in &coeffs[i] {
                    cands.clear();
                    edge_candidates(u_in[c.a], u_in[c.b], c.alpha, c.beta, c.gamma, &mut cands);
                    for &(t, v) in &cands {
                        m = m.min(v);
                        local.push((c.entry, t, v));
                    }
                }
                let kappa = cfg.kappa;
                let mut wsum = 0.0;
                for &(_, _, v) in &local {
                    wsum += (-kappa * (v - m)).exp();
                }
                for &(entry, t, v) in &local {
                    let w = (-kappa * (v - m)).exp() / wsum;
                    let c = &coeffs[i][entry as usize];
                    let contrib = bar * w;
                    bar_prev[c.a] += contrib * (1.0 - t);
                    bar_prev[c.b] += contrib * t;
                    // Metric part: ∂v/∂d_k = ρᵀ (∂N/∂d_k) ρ / (2 s).
                    let q = c.alpha * t * t + 2.0 * c.beta * t + c.gamma;
                    if q <= 1e-300 {
                        continue;
                    }
                    let s = q.sqrt();
                    let e = &self.stencils[i][entry as usize];
                    let rho = e.rho_w + e.rho_e * t;
                    let tri = e.tri;
                    for k in 0..3 {
                        let dq = qform(&metric_partials[tri][k], &rho, &rho);
                        grad[tri][k] += contrib * dq / (2.0 * s);
                    }
                }
            }
            bar_u = bar_prev;
        }

        Ok(DataTermGradient { grad, field, value })
    }
}

/// Convenience wrapper over [`FimOperator::grad_data_term`].
pub fn grad_data_term(
    geom: &MeshGeometry,
    frames: &FrameField,
    params: &TensorParamField,
    samples: &SurfaceSamples,
    source: usize,
    cfg: &SolverConfig,
) -> Result<DataTermGradient> {
    FimOperator::new(geom, frames).grad_data_term(params, samples, source, cfg)
}
