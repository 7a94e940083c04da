//! End-to-end inversion: source selection, train/validation split,
//! λ cross-validation, and result assembly.

use crate::eikonal::{ActivationField, FimOperator, SolverConfig};
use crate::frames::FrameField;
use crate::mesh::{MeshGeometry, SurfaceSamples};
use crate::tensor::TensorParamField;
use crate::tv::{fista_outer, tv_energy, EdgeDifferenceOperator, InverseProblem, TraceRow};
use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fewest measurement points accepted for an inversion.
pub const MIN_SAMPLES: usize = 10;

/// Log-spaced λ grid over [1e-5, 1e-2], bracketing the useful range.
pub fn default_lambda_grid() -> Vec<f64> {
    log_spaced_grid(1e-5, 1e-2, 7)
}

pub fn log_spaced_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Configuration of a full inversion run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionConfig {
    pub lambda_grid: Vec<f64>,
    /// Huber threshold ε.
    pub epsilon: f64,
    /// Train fraction of the train/validation split.
    pub split_fraction: f64,
    pub seed: u64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Softmin sharpness κ (1/ms).
    pub kappa: f64,
    /// Forward-solver stopping tolerance (ms).
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Isotropic initialization velocity (m/s).
    pub v0: f64,
    /// Reuse each λ's solution to initialize the next (ascending λ).
    pub warm_start: bool,
    /// Initial curvature guess for backtracking.
    pub l0: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            lambda_grid: default_lambda_grid(),
            epsilon: 5e-2,
            split_fraction: 0.8,
            seed: 0,
            outer_iters: 2000,
            inner_iters: 200,
            kappa: 1.0,
            solver_tol: 1e-4,
            solver_max_iters: 5000,
            v0: 0.7,
            warm_start: true,
            l0: 1.0,
        }
    }
}

impl InversionConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            kappa: self.kappa,
            tol: self.solver_tol,
            max_iters: self.solver_max_iters,
            u_init: None,
            adjoint_sweeps: None,
        }
    }
}

/// Outcome of the optimization at one grid value of λ.
#[derive(Debug, Clone)]
pub struct LambdaRun {
    pub lambda: f64,
    pub params: TensorParamField,
    pub train_rmse: f64,
    pub validation_rmse: f64,
    pub data_term: f64,
    /// TV energy of the solution at unit λ (regularizer shape, comparable
    /// across the grid).
    pub tv_energy_unit: f64,
    pub trace: Vec<TraceRow>,
    pub grad_evals: usize,
}

/// Full inversion output.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub lambda_star: f64,
    pub params: TensorParamField,
    pub activation: ActivationField,
    pub runs: Vec<LambdaRun>,
    /// λ values whose optimization failed, with diagnostics.
    pub failures: Vec<(f64, String)>,
    pub source: usize,
    /// Offset subtracted from all recorded times so min û = 0 (ms).
    pub time_offset: f64,
    pub train_len: usize,
    pub validation_len: usize,
    /// Total gradient evaluations over the whole grid; every one saw
    /// exactly `train_len` samples.
    pub grad_evals: usize,
}

impl InversionResult {
    /// Instrumentation counter: per-sample gradient contributions. Equals
    /// grad_evals × train_len because validation samples never enter a
    /// gradient.
    pub fn grad_sample_evals(&self) -> usize {
        self.grad_evals * self.train_len
    }
}

/// Pick the source vertex: nearest corner of the host triangle of the
/// earliest sample. Returns (vertex, offset) where `offset` is the minimal
/// recorded time; shift the samples by it so the earliest time is zero.
pub fn select_source(samples: &SurfaceSamples, geom: &MeshGeometry) -> Result<(usize, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mut best = 0;
    for (i, s) in samples.samples.iter().enumerate() {
        if s.time_ms < samples.samples[best].time_ms {
            best = i;
        }
    }
    let t_min = samples.samples[best].time_ms;
    let ties: Vec<usize> = samples
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| (s.time_ms - t_min).abs() <= 1e-9)
        .map(|(i, _)| i)
        .collect();
    if ties.len() > 1 {
        log::warn!(
            "{} samples tie for the earliest activation; picking the lowest index",
            ties.len()
        );
        best = ties[0];
    }
    let s = &samples.samples[best];
    let pos = geom.position(s.triangle, s.bary);
    Ok((geom.nearest_corner(s.triangle, pos), t_min))
}

/// Uniform random train/validation partition, reproducible by seed.
pub fn split_samples(
    samples: &SurfaceSamples,
    fraction: f64,
    seed: u64,
) -> Result<(SurfaceSamples, SurfaceSamples)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("split fraction {fraction}")));
    }
    let n = samples.len();
    let n_train = ((n as f64) * fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InsufficientData(format!(
            "degenerate split {n_train}/{} of {n}",
            n - n_train
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| SurfaceSamples {
        samples: idx.iter().map(|&i| samples.samples[i]).collect(),
        dropped: Vec::new(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Root-mean-square misfit of a solution against a sample set (ms).
pub fn sample_rmse(u: &[f64], geom: &MeshGeometry, samples: &SurfaceSamples) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .samples
        .iter()
        .map(|s| {
            let v = geom.interpolate(u, s.triangle, s.bary);
            (v - s.time_ms) * (v - s.time_ms)
        })
        .sum();
    (sum / samples.len() as f64).sqrt()
}

/// Run the full cross-validated inversion.
pub fn run_inversion(
    geom: &MeshGeometry,
    frames: &FrameField,
    samples: &SurfaceSamples,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            samples.len()
        )));
    }
    if cfg.lambda_grid.is_empty() || cfg.lambda_grid.iter().any(|&l| l < 0.0) {
        return Err(Error::Invalid("λ grid must be non-empty, non-negative".into()));
    }

    let (source, offset) = select_source(samples, geom)?;
    let mut shifted = samples.clone();
    shifted.shift_times(offset);
    let (train, validation) = split_samples(&shifted, cfg.split_fraction, cfg.seed)?;

    let fim = FimOperator::new(geom, frames);
    let tv = EdgeDifferenceOperator::new(geom)?;
    let solver = cfg.solver_config();

    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut runs: Vec<LambdaRun> = Vec::new();
    let mut failures = Vec::new();
    let mut init = TensorParamField::isotropic(geom.num_triangles(), cfg.v0);
    let mut grad_evals = 0;

    for &lambda in &grid {
        let problem = InverseProblem {
            fim: &fim,
            tv: &tv,
            samples: &train,
            source,
            solver: solver.clone(),
            lambda,
            epsilon: cfg.epsilon,
            inner_iters: cfg.inner_iters,
            l0: cfg.l0,
        };
        let outcome = fista_outer(&problem, &init, cfg.outer_iters).and_then(|res| {
            let field = fim.solve(&res.params, source, &solver)?;
            if !field.converged {
                return Err(Error::NotConverged(format!(
                    "final forward solve at λ = {lambda:.3e}"
                )));
            }
            Ok((res, field))
        });
        match outcome {
            Ok((res, field)) => {
                grad_evals += res.grad_evals;
                let run = LambdaRun {
                    lambda,
                    train_rmse: sample_rmse(&field.u, geom, &train),
                    validation_rmse: sample_rmse(&field.u, geom, &validation),
                    data_term: crate::eikonal::data_residual(&field.u, geom, &train),
                    tv_energy_unit: tv_energy(res.params.values(), &tv, 1.0, cfg.epsilon),
                    trace: res.trace,
                    grad_evals: res.grad_evals,
                    params: res.params,
                };
                if cfg.warm_start {
                    init = run.params.clone();
                }
                runs.push(run);
            }
            Err(e) => {
                log::warn!("λ = {lambda:.3e} failed: {e}");
                failures.push((lambda, e.to_string()));
            }
        }
    }

    if runs.is_empty() {
        return Err(Error::NotConverged(format!(
            "every λ in the grid failed ({} failures)",
            failures.len()
        )));
    }

    let best = runs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.validation_rmse
                .partial_cmp(&b.validation_rmse)
                .unwrap()
                .then(a.lambda.partial_cmp(&b.lambda).unwrap())
        })
        .map(|(i, _)| i)
        .unwrap();
    let best_params = runs[best].params.clone();
    let activation = fim.solve(&best_params, source, &solver)?;

    Ok(InversionResult {
        lambda_star: runs[best].lambda,
        params: best_params,
        activation,
        runs,
        failures,
        source,
        time_offset: offset,
        train_len: train.len(),
        validation_len: validation.len(),
        grad_evals,
    })
}
