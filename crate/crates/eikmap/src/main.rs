//! Command-line driver: forward solves, synthetic data generation,
//! inversion, metrics and frame-field export.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Point3, Vector3};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eikmap::eikonal::{solve_forward, SolverConfig};
use eikmap::frames::{compute_frames, FrameField, DEFAULT_FRAME_TOL, DEFAULT_SMOOTHING_ITERS};
use eikmap::io::{format_from_extension, load_mesh, off, table, vtk};
use eikmap::mesh::{
    build_geometry, grid_sheet, project_points, validate_mesh, MeshGeometry, SurfaceSamples,
    TriangleMesh, DEFAULT_MIN_ANGLE_DEG, DEFAULT_MIN_AREA,
};
use eikmap::metrics::{angle_and_velocity_errors, local_baseline, FieldSet};
use eikmap::pipeline::{log_spaced_grid, run_inversion, InversionConfig};
use eikmap::synth::{add_noise, make_synthetic, FiberRule, LesionSpec, SyntheticScenario};
use eikmap::tensor::{assemble_world_tensor, params_from_fiber, TensorParamField};

/// Environment variable prefix for overriding config-file keys
/// (e.g. EIKMAP_OUTER_ITERS overrides `outer-iters`).
const ENV_PREFIX: &str = "EIKMAP_";

#[derive(Parser)]
#[command(
    name = "eikmap",
    about = "Anisotropic eikonal solving and conductivity-tensor inversion on triangulated surfaces",
    version
)]
struct Cli {
    /// RNG seed used by subcommands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Key-value config file (KEY=VALUE lines; flags override, environment
    /// variables EIKMAP_* override the file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward eikonal problem for a given tensor field.
    Forward(ForwardArgs),
    /// Invert measurements for the conductivity tensor field.
    Invert(InvertArgs),
    /// Generate synthetic ground truth and measurements.
    Synth(SynthArgs),
    /// Compare a model bundle against a ground-truth bundle.
    Metrics(MetricsArgs),
    /// Compute and export the smooth tangent frame field.
    Frames(FramesArgs),
}

#[derive(Args)]
struct ForwardArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Per-triangle tensor parameter CSV (triangle,d1,d2,d3).
    #[arg(long)]
    tensors: Option<PathBuf>,
    /// Constant isotropic velocity (m/s); alternative to --tensors.
    #[arg(long)]
    velocity: Option<f64>,
    /// Constant anisotropic spec: fiber velocity (m/s).
    #[arg(long)]
    v_fiber: Option<f64>,
    /// Constant anisotropic spec: cross-fiber velocity (m/s).
    #[arg(long)]
    v_cross: Option<f64>,
    /// Constant anisotropic spec: fiber angle from the frame v1 axis (deg).
    #[arg(long)]
    fiber_angle_deg: Option<f64>,
    /// Source vertex index.
    #[arg(long)]
    source: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Measurement CSV with header x_mm,y_mm,z_mm,lat_ms.
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated λ grid; overrides the log-spaced default.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_count: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Train fraction of the train/validation split.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Initialization velocity (m/s).
    #[arg(long)]
    v0: Option<f64>,
    #[arg(long)]
    l0: Option<f64>,
    #[arg(long)]
    no_warm_start: bool,
    /// Drop measurement points farther than this from the surface (mm).
    #[arg(long)]
    max_dist: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Mesh file; alternatively generate a flat sheet with --sheet-nx.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    sheet_nx: Option<usize>,
    #[arg(long)]
    sheet_ny: Option<usize>,
    /// Sheet width/height in mm.
    #[arg(long)]
    sheet_width: Option<f64>,
    #[arg(long)]
    sheet_height: Option<f64>,
    #[arg(long)]
    fiber_angle_deg: Option<f64>,
    #[arg(long)]
    v_fiber: Option<f64>,
    #[arg(long)]
    v_cross: Option<f64>,
    /// Lesion disk "cx,cy,cz,radius" (mm).
    #[arg(long)]
    lesion: Option<String>,
    #[arg(long)]
    lesion_velocity: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Gaussian noise standard deviation (ms).
    #[arg(long)]
    noise_ms: Option<f64>,
    /// Source vertex index, or "center" for the vertex nearest the centroid.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Bundle directory with *_tensors.csv and *_activation.csv.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also evaluate the local activation-gradient baseline.
    #[arg(long)]
    baseline: bool,
    /// Measurements for the baseline fit.
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Label copied into the noise column of the output table.
    #[arg(long)]
    noise_label: Option<String>,
}

#[derive(Args)]
struct FramesArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    smoothing_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

/// Layered option resolution: CLI flag, then EIKMAP_* environment variable,
/// then config file, then default.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected KEY=VALUE", path.display(), i + 1))?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    fn lookup(&self, key: &str) -> Option<String> {
        let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase().replace('-', "_"));
        if let Ok(v) = std::env::var(&env_key) {
            return Some(v);
        }
        self.file.get(key).cloned()
    }

    fn resolve<T>(&self, cli: Option<T>, key: &str, default: T) -> anyhow::Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.lookup(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow!("config key '{key}': {e}")),
            None => Ok(default),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the thread pool")?;
    }
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.resolve(cli.seed, "seed", 0u64)?;
    match &cli.command {
        Command::Forward(args) => cmd_forward(args, &settings),
        Command::Invert(args) => cmd_invert(args, &settings, seed),
        Command::Synth(args) => cmd_synth(args, &settings, seed),
        Command::Metrics(args) => cmd_metrics(args, &settings),
        Command::Frames(args) => cmd_frames(args, &settings),
    }
}

fn load_mesh_checked(path: &Path) -> anyhow::Result<TriangleMesh> {
    if !path.exists() {
        bail!("mesh file not found: {}", path.display());
    }
    let format = format_from_extension(path)?;
    Ok(load_mesh(path, format)?)
}

fn validated_geometry(mesh: TriangleMesh) -> anyhow::Result<MeshGeometry> {
    let report = validate_mesh(&mesh, DEFAULT_MIN_AREA, DEFAULT_MIN_ANGLE_DEG);
    let mesh = if report.is_clean() {
        mesh
    } else {
        log::warn!(
            "dropping {} degenerate triangles flagged by validation",
            report.flagged.len()
        );
        mesh.drop_triangles(&report.flagged_indices())?
    };
    Ok(build_geometry(mesh)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn export_solution_vtk(
    path: &Path,
    geom: &MeshGeometry,
    frames: &FrameField,
    params: &TensorParamField,
    u: &[f64],
    title: &str,
) -> anyhow::Result<()> {
    let nt = geom.num_triangles();
    let tensors: Vec<_> = (0..nt)
        .map(|t| assemble_world_tensor(params.get(t), frames, t))
        .collect();
    let attrs = vtk::VtkAttributes {
        point_scalars: vec![("u_ms".into(), u.to_vec())],
        cell_scalars: vec![
            ("v_fiber".into(), tensors.iter().map(|t| t.v_fiber).collect()),
            ("v_cross".into(), tensors.iter().map(|t| t.v_cross).collect()),
        ],
        cell_vectors: vec![(
            "fiber_dir".into(),
            tensors.iter().map(|t| t.fiber_dir).collect(),
        )],
        cell_tensors: vec![(
            "D_world".into(),
            tensors.iter().map(|t| t.d_world).collect(),
        )],
    };
    vtk::write_vtk_polydata(path, geom.mesh(), title, &attrs)?;
    Ok(())
}

fn cmd_forward(args: &ForwardArgs, settings: &Settings) -> anyhow::Result<i32> {
    let kappa = settings.resolve(args.kappa, "kappa", 1.0)?;
    let tol = settings.resolve(args.tol, "tol", 1e-4)?;
    let max_iters = settings.resolve(args.max_iters, "max-iters", 5000)?;

    let geom = validated_geometry(load_mesh_checked(&args.mesh)?)?;
    let frames = compute_frames(&geom, DEFAULT_SMOOTHING_ITERS, DEFAULT_FRAME_TOL);
    let nt = geom.num_triangles();

    let params = if let Some(tensors) = &args.tensors {
        let p = table::read_tensor_csv(tensors)?;
        if p.len() != nt {
            bail!("{} tensor rows for {} triangles", p.len(), nt);
        }
        p
    } else if let Some(v) = args.velocity {
        TensorParamField::isotropic(nt, v)
    } else if let (Some(vf), Some(vc)) = (args.v_fiber, args.v_cross) {
        let angle = args.fiber_angle_deg.unwrap_or(0.0);
        let mut p = TensorParamField::constant(nt, [0.0; 3]);
        for t in 0..nt {
            let (s, c) = angle.to_radians().sin_cos();
            let fiber = frames.v1(t) * c + frames.v2(t) * s;
            p.set(t, params_from_fiber(&frames, t, &fiber, vf, vc)?);
        }
        p
    } else {
        bail!("specify --tensors, --velocity, or --v-fiber/--v-cross");
    };

    let cfg = SolverConfig {
        kappa,
        tol,
        max_iters,
        ..Default::default()
    };
    let field = solve_forward(&geom, &frames, &params, args.source, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    table::write_activation_csv(&args.out.join("activation.csv"), &field.u)?;
    export_solution_vtk(
        &args.out.join("activation.vtk"),
        &geom,
        &frames,
        &params,
        &field.u,
        "forward activation",
    )?;
    #[derive(Serialize)]
    struct Meta {
        mesh: String,
        source: usize,
        kappa: f64,
        tol: f64,
        max_iters: usize,
        converged: bool,
        iterations: usize,
        residual_ms: f64,
    }
    write_json(
        &args.out.join("meta.json"),
        &Meta {
            mesh: args.mesh.display().to_string(),
            source: args.source,
            kappa,
            tol,
            max_iters,
            converged: field.converged,
            iterations: field.iterations,
            residual_ms: field.residual,
        },
    )?;

    if !field.converged {
        eprintln!(
            "forward solve did not converge: residual {:.3e} ms after {} sweeps",
            field.residual, field.iterations
        );
        return Ok(2);
    }
    println!(
        "converged in {} sweeps (residual {:.3e} ms); results in {}",
        field.iterations,
        field.residual,
        args.out.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct InvertSummary {
    mesh: String,
    measurements: String,
    seed: u64,
    lambda_grid: Vec<f64>,
    epsilon: f64,
    split_fraction: f64,
    outer_iters: usize,
    inner_iters: usize,
    kappa: f64,
    solver_tol: f64,
    solver_max_iters: usize,
    v0: f64,
    warm_start: bool,
    l0: f64,
    max_dist_mm: f64,
    projected_points: usize,
    dropped_points: usize,
    source_vertex: usize,
    time_offset_ms: f64,
    train_len: usize,
    validation_len: usize,
    lambda_star: f64,
    grad_evals: usize,
    grad_sample_evals: usize,
    runs: Vec<RunSummary>,
    failures: Vec<(f64, String)>,
}

#[derive(Serialize)]
struct RunSummary {
    lambda: f64,
    train_rmse_ms: f64,
    validation_rmse_ms: f64,
    tv_energy_unit: f64,
}

fn cmd_invert(args: &InvertArgs, settings: &Settings, seed: u64) -> anyhow::Result<i32> {
    let grid = if let Some(spec) = &args.lambda_grid {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("λ grid: {e}")))
            .collect::<anyhow::Result<Vec<f64>>>()?
    } else if let (Some(lo), Some(hi)) = (args.lambda_min, args.lambda_max) {
        log_spaced_grid(lo, hi, args.lambda_count.unwrap_or(7))
    } else {
        eikmap::pipeline::default_lambda_grid()
    };

    let cfg = InversionConfig {
        lambda_grid: grid,
        epsilon: settings.resolve(args.epsilon, "epsilon", 5e-2)?,
        split_fraction: settings.resolve(args.split, "split", 0.8)?,
        seed,
        outer_iters: settings.resolve(args.outer_iters, "outer-iters", 300)?,
        inner_iters: settings.resolve(args.inner_iters, "inner-iters", 200)?,
        kappa: settings.resolve(args.kappa, "kappa", 1.0)?,
        solver_tol: settings.resolve(None, "solver-tol", 1e-4)?,
        solver_max_iters: settings.resolve(None, "solver-max-iters", 5000)?,
        v0: settings.resolve(args.v0, "v0", 0.7)?,
        warm_start: !args.no_warm_start,
        l0: settings.resolve(args.l0, "l0", 1.0)?,
    };
    let max_dist = settings.resolve(args.max_dist, "max-dist", 5.0)?;

    let geom = validated_geometry(load_mesh_checked(&args.mesh)?)?;
    let frames = compute_frames(&geom, DEFAULT_SMOOTHING_ITERS, DEFAULT_FRAME_TOL);
    let (points, times) = table::read_measurements_csv(&args.measurements)?;
    if points.is_empty() {
        bail!("insufficient data: measurement file is empty");
    }
    let samples = project_points(&geom, &points, &times, max_dist)?;
    if !samples.dropped.is_empty() {
        log::warn!(
            "dropped {} of {} points farther than {max_dist} mm from the surface",
            samples.dropped.len(),
            points.len()
        );
    }

    let result = run_inversion(&geom, &frames, &samples, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    table::write_tensor_csv(&args.out.join("result_tensors.csv"), &result.params)?;
    table::write_activation_csv(&args.out.join("result_activation.csv"), &result.activation.u)?;
    export_solution_vtk(
        &args.out.join("result.vtk"),
        &geom,
        &frames,
        &result.params,
        &result.activation.u,
        "inversion result",
    )?;
    for run in &result.runs {
        table::write_trace_csv(
            &args.out.join(format!("trace_{:.6e}.csv", run.lambda)),
            &run.trace,
        )?;
    }
    let summary = InvertSummary {
        mesh: args.mesh.display().to_string(),
        measurements: args.measurements.display().to_string(),
        seed,
        lambda_grid: cfg.lambda_grid.clone(),
        epsilon: cfg.epsilon,
        split_fraction: cfg.split_fraction,
        outer_iters: cfg.outer_iters,
        inner_iters: cfg.inner_iters,
        kappa: cfg.kappa,
        solver_tol: cfg.solver_tol,
        solver_max_iters: cfg.solver_max_iters,
        v0: cfg.v0,
        warm_start: cfg.warm_start,
        l0: cfg.l0,
        max_dist_mm: max_dist,
        projected_points: samples.len(),
        dropped_points: samples.dropped.len(),
        source_vertex: result.source,
        time_offset_ms: result.time_offset,
        train_len: result.train_len,
        validation_len: result.validation_len,
        lambda_star: result.lambda_star,
        grad_evals: result.grad_evals,
        grad_sample_evals: result.grad_sample_evals(),
        runs: result
            .runs
            .iter()
            .map(|r| RunSummary {
                lambda: r.lambda,
                train_rmse_ms: r.train_rmse,
                validation_rmse_ms: r.validation_rmse,
                tv_energy_unit: r.tv_energy_unit,
            })
            .collect(),
        failures: result.failures.clone(),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "λ* = {:.3e}, validation RMSE {:.3} ms; results in {}",
        result.lambda_star,
        result
            .runs
            .iter()
            .find(|r| r.lambda == result.lambda_star)
            .map(|r| r.validation_rmse)
            .unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(0)
}

fn cmd_synth(args: &SynthArgs, settings: &Settings, seed: u64) -> anyhow::Result<i32> {
    let fiber_angle = settings.resolve(args.fiber_angle_deg, "fiber-angle-deg", 30.0)?;
    let v_fiber = settings.resolve(args.v_fiber, "v-fiber", 0.6)?;
    let v_cross = settings.resolve(args.v_cross, "v-cross", 0.4)?;
    let n_samples = settings.resolve(args.n_samples, "n-samples", 884)?;
    let noise_ms = settings.resolve(args.noise_ms, "noise-ms", 0.0)?;
    let lesion_velocity = settings.resolve(args.lesion_velocity, "lesion-velocity", 0.2)?;
    let kappa = settings.resolve(args.kappa, "kappa", 1.0)?;

    std::fs::create_dir_all(&args.out)?;
    let mesh = if let Some(path) = &args.mesh {
        load_mesh_checked(path)?
    } else if let Some(nx) = args.sheet_nx {
        let ny = args.sheet_ny.unwrap_or(nx);
        let w = args.sheet_width.unwrap_or(nx as f64);
        let h = args.sheet_height.unwrap_or(ny as f64);
        let mesh = grid_sheet(nx, ny, w, h);
        off::write_off(&args.out.join("mesh.off"), &mesh)?;
        mesh
    } else {
        bail!("specify --mesh or --sheet-nx");
    };
    let geom = validated_geometry(mesh)?;
    let frames = compute_frames(&geom, DEFAULT_SMOOTHING_ITERS, DEFAULT_FRAME_TOL);

    let source = match args.source.as_deref() {
        None | Some("center") => {
            let mut c = Vector3::zeros();
            for v in geom.mesh().vertices() {
                c += v.coords;
            }
            c /= geom.num_vertices() as f64;
            (0..geom.num_vertices())
                .min_by(|&a, &b| {
                    (geom.vertex(a).coords - c)
                        .norm()
                        .partial_cmp(&(geom.vertex(b).coords - c).norm())
                        .unwrap()
                })
                .unwrap()
        }
        Some(s) => s
            .parse()
            .map_err(|_| anyhow!("--source must be a vertex index or 'center', got '{s}'"))?,
    };

    let lesion = match &args.lesion {
        None => None,
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("--lesion: {e}")))
                .collect::<anyhow::Result<_>>()?;
            if parts.len() != 4 {
                bail!("--lesion expects cx,cy,cz,radius");
            }
            Some(LesionSpec {
                center: Point3::new(parts[0], parts[1], parts[2]),
                radius: parts[3],
                velocity: lesion_velocity,
            })
        }
    };

    let scenario = SyntheticScenario {
        rule: FiberRule::FrameAngleDeg(fiber_angle),
        v_fiber,
        v_cross,
        lesion,
        source,
        n_samples,
        seed,
    };
    let solver = SolverConfig {
        kappa,
        ..Default::default()
    };
    let (gt, clean) = make_synthetic(&geom, &frames, &scenario, &solver)?;
    let (noisy, noise_report) = add_noise(&clean, noise_ms, seed.wrapping_add(1));

    let positions: Vec<Point3<f64>> = noisy
        .samples
        .iter()
        .map(|s| geom.position(s.triangle, s.bary))
        .collect();
    let times: Vec<f64> = noisy.times().collect();
    table::write_measurements_csv(&args.out.join("measurements.csv"), &positions, &times)?;
    table::write_tensor_csv(&args.out.join("gt_tensors.csv"), &gt.params)?;
    table::write_activation_csv(&args.out.join("gt_activation.csv"), &gt.activation.u)?;
    export_solution_vtk(
        &args.out.join("gt.vtk"),
        &geom,
        &frames,
        &gt.params,
        &gt.activation.u,
        "synthetic ground truth",
    )?;

    #[derive(Serialize)]
    struct Meta {
        seed: u64,
        source: usize,
        fiber_angle_deg: f64,
        v_fiber: f64,
        v_cross: f64,
        lesion: Option<(f64, f64, f64, f64)>,
        lesion_velocity: f64,
        n_samples: usize,
        noise_ms: f64,
        kappa: f64,
        psnr_db: f64,
        noise_empirical_std_ms: f64,
        lesion_triangles: usize,
    }
    write_json(
        &args.out.join("meta.json"),
        &Meta {
            seed,
            source,
            fiber_angle_deg: fiber_angle,
            v_fiber,
            v_cross,
            lesion: scenario
                .lesion
                .as_ref()
                .map(|l| (l.center.x, l.center.y, l.center.z, l.radius)),
            lesion_velocity,
            n_samples,
            noise_ms,
            kappa,
            psnr_db: noise_report.psnr_db,
            noise_empirical_std_ms: noise_report.empirical_std,
            lesion_triangles: gt.lesion_mask.iter().filter(|&&m| m).count(),
        },
    )?;
    println!(
        "synthetic bundle with {} samples (noise {noise_ms} ms, PSNR {:.1} dB) in {}",
        n_samples,
        noise_report.psnr_db,
        args.out.display()
    );
    Ok(0)
}

fn load_bundle(dir: &Path) -> anyhow::Result<(TensorParamField, Vec<f64>)> {
    for stem in ["result", "gt"] {
        let tensors = dir.join(format!("{stem}_tensors.csv"));
        let activation = dir.join(format!("{stem}_activation.csv"));
        if tensors.exists() && activation.exists() {
            return Ok((
                table::read_tensor_csv(&tensors)?,
                table::read_activation_csv(&activation)?,
            ));
        }
    }
    bail!(
        "bundle {} lacks (result|gt)_tensors.csv + _activation.csv",
        dir.display()
    )
}

fn cmd_metrics(args: &MetricsArgs, settings: &Settings) -> anyhow::Result<i32> {
    let k_neighbors = settings.resolve(args.k_neighbors, "k-neighbors", 10)?;
    let geom = validated_geometry(load_mesh_checked(&args.mesh)?)?;
    let frames = compute_frames(&geom, DEFAULT_SMOOTHING_ITERS, DEFAULT_FRAME_TOL);

    let (model_params, model_u) = load_bundle(&args.model)?;
    let (gt_params, gt_u) = load_bundle(&args.gt)?;
    if model_params.len() != geom.num_triangles() || gt_params.len() != geom.num_triangles() {
        bail!("bundle tensor counts do not match the mesh");
    }

    let wrap = |u: Vec<f64>| eikmap::eikonal::ActivationField {
        u,
        converged: true,
        iterations: 0,
        residual: 0.0,
    };
    let model_field = wrap(model_u);
    let gt_field = wrap(gt_u);
    let model = FieldSet::from_params(&model_params, &frames, &geom, &model_field);
    let gt = FieldSet::from_params(&gt_params, &frames, &geom, &gt_field);
    let report = angle_and_velocity_errors(&model, &gt, &geom);

    let noise = args.noise_label.clone().unwrap_or_else(|| "0".into());
    let mut out = String::from(
        "noise_ms,method,front_velocity_rmse,front_angle_rmse_deg,\
         fiber_velocity_rmse,fiber_angle_rmse_deg,front_velocity_rmse_aw,\
         front_angle_rmse_aw_deg,fiber_angle_median_deg\n",
    );
    out.push_str(&format!(
        "{noise},model,{},{},{},{},{},{},{}\n",
        report.front_velocity.rmse,
        report.front_angle.rmse,
        report.fiber_velocity.rmse,
        report.fiber_angle.rmse,
        report.front_velocity.rmse_area_weighted,
        report.front_angle.rmse_area_weighted,
        report.fiber_angle.median,
    ));

    if args.baseline {
        let measurements = args
            .measurements
            .as_ref()
            .ok_or_else(|| anyhow!("--baseline needs --measurements"))?;
        let (points, times) = table::read_measurements_csv(measurements)?;
        let samples = project_points(&geom, &points, &times, 5.0)?;
        let fits = local_baseline(&geom, &samples, k_neighbors)?;
        let mut num_angle = 0.0;
        let mut num_vel = 0.0;
        let mut count = 0.0;
        for (fit, s) in fits.iter().zip(&samples.samples) {
            let (Some(fit), Some(front)) = (fit, &gt.front[s.triangle]) else {
                continue;
            };
            let cos = fit.direction.dot(&front.direction).clamp(-1.0, 1.0);
            num_angle += cos.acos().to_degrees().powi(2);
            num_vel += (fit.speed * cos - front.speed).powi(2);
            count += 1.0;
        }
        if count > 0.0 {
            out.push_str(&format!(
                "{noise},local_baseline,{},{},,,,,\n",
                (num_vel / count).sqrt(),
                (num_angle / count).sqrt(),
            ));
        }
    }
    std::fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "front angle RMSE {:.2}°, fiber angle RMSE {:.2}°, table in {}",
        report.front_angle.rmse,
        report.fiber_angle.rmse,
        args.out.display()
    );
    Ok(0)
}

fn cmd_frames(args: &FramesArgs, settings: &Settings) -> anyhow::Result<i32> {
    let iters = settings.resolve(args.smoothing_iters, "smoothing-iters", DEFAULT_SMOOTHING_ITERS)?;
    let tol = settings.resolve(args.tol, "frame-tol", DEFAULT_FRAME_TOL)?;
    let geom = validated_geometry(load_mesh_checked(&args.mesh)?)?;
    let frames = compute_frames(&geom, iters, tol);
    let nt = geom.num_triangles();
    let attrs = vtk::VtkAttributes {
        cell_vectors: vec![
            ("v1".into(), (0..nt).map(|t| frames.v1(t)).collect()),
            ("v2".into(), (0..nt).map(|t| frames.v2(t)).collect()),
            ("n".into(), (0..nt).map(|t| frames.normal(t)).collect()),
        ],
        ..Default::default()
    };
    vtk::write_vtk_polydata(&args.out, geom.mesh(), "tangent frames", &attrs)?;
    println!(
        "frames for {nt} triangles ({} components, {} high-variation) in {}",
        frames.components,
        frames.high_variation.len(),
        args.out.display()
    );
    Ok(0)
}
