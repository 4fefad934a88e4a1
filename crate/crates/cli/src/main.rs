//! `dnorm`: depth/normal geometry, metrics and diffusion checks from the
//! command line.
//!
//! Exit status is 0 on success, 1 when a computation or file fails and 2 on
//! usage errors. Every command that writes a file also writes a JSON run log
//! next to it (`<output>.run.json`), or to `--log` when given.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use depthnormal::alignment::{apply_affine, fit_affine_ls, optimize_scale_shift_by_normal, ScaleShiftSearch};
use depthnormal::diffusion::checks;
use depthnormal::diffusion::noise::multires_noise;
use depthnormal::diffusion::schedule::{make_schedule, ScheduleKind};
use depthnormal::diffusion::toy::{procedural_samples, train_toy, Adam, ToyConfig, ToyParams, TrainConfig};
use depthnormal::evaluation::{
    absrel, align_prediction, delta1, geometric_consistency, normal_metrics, scene_depth_histogram, AlignmentMode,
    DepthHistogram,
};
use depthnormal::geometry::{apply_far_plane, normals_from_depth_with, DepthKind, DepthMap, Intrinsics, NormalEstimation, NormalMap};
use depthnormal::integration::{integrate_normals, mesh_from_depth, reconstruct, IntegrationParams, Projection, ReconstructParams};
use depthnormal::io::{self, MeshFormat, Pfm};
use depthnormal::{Error, Result};

#[derive(Parser)]
#[command(name = "dnorm", version, about = "Depth/normal geometry, metrics and diffusion checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// AbsRel and delta1 of a depth prediction.
    EvalDepth(EvalDepthArgs),
    /// Mean angular error and accuracy within 11.25 degrees.
    EvalNormal(EvalNormalArgs),
    /// Consistency between predicted normals and normals of the aligned depth.
    Gc(GcArgs),
    /// Scale and shift a relative depth map to metric.
    Align(AlignArgs),
    /// Plane-fit normals of a metric depth map.
    NormalsFromDepth(NormalsFromDepthArgs),
    /// Integrate a normal map into depth.
    Integrate(IntegrateArgs),
    /// Relative depth + normals + intrinsics to a mesh.
    Recon(ReconArgs),
    /// Seeded multi-resolution Gaussian noise.
    Noise(NoiseArgs),
    /// Pooled histogram of per-image normalized depth.
    Hist(HistArgs),
    /// Run the diffusion identity and gradient checks.
    ToyCheck(ToyCheckArgs),
    /// Train the toy denoiser on procedural scenes.
    ToyTrain(ToyTrainArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Metric,
    Affine,
    Disparity,
}

impl From<Kind> for DepthKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Metric => DepthKind::Metric,
            Kind::Affine => DepthKind::AffineInvariant,
            Kind::Disparity => DepthKind::Disparity,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Model {
    Orthographic,
    Perspective,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AlignMethod {
    /// Normal consistency; needs `--normal` and `--intrinsics`.
    Normal,
    /// Least squares against `--gt`.
    Ls,
}

#[derive(clap::Args, Serialize)]
struct Common {
    /// Run log path (default: next to the output).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct DepthInput {
    /// Divisor for 16-bit PNG depth (256 or 1000 for the usual benchmarks).
    #[arg(long)]
    divisor: Option<f64>,
}

#[derive(clap::Args, Serialize)]
struct EvalDepthArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    pred_kind: Kind,
    /// Ground-truth metric depth (.pfm or 16-bit .png).
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    input: DepthInput,
    /// none, depth or disparity.
    #[arg(long, default_value = "depth")]
    alignment: AlignmentMode,
    #[arg(long)]
    far_clip: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct EvalNormalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct GcArgs {
    #[arg(long)]
    pred_depth: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    pred_kind: Kind,
    #[arg(long)]
    pred_normal: PathBuf,
    #[arg(long)]
    gt_depth: PathBuf,
    #[command(flatten)]
    input: DepthInput,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct AlignArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    kind: Kind,
    #[arg(long, value_enum, default_value = "normal")]
    method: AlignMethod,
    #[arg(long)]
    normal: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    input: DepthInput,
    /// Aligned depth (.pfm).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct NormalsFromDepthArgs {
    #[arg(long)]
    depth: PathBuf,
    #[command(flatten)]
    input: DepthInput,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Mask depth beyond this many meters first.
    #[arg(long)]
    far: Option<f64>,
    /// Normals (.pfm, or .png for 8-bit RGB).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct IntegrateArgs {
    #[arg(long)]
    normal: PathBuf,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "perspective")]
    model: Model,
    /// Metric depth prior (.pfm).
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Weight of the depth prior.
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Integrated depth (.pfm).
    #[arg(long)]
    out: PathBuf,
    /// Optional mesh (.ply or .obj); perspective only.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct ReconArgs {
    /// Relative depth (.pfm).
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    kind: Kind,
    #[arg(long)]
    normal: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 1.5)]
    edge_ratio: f64,
    /// Mesh (.ply or .obj).
    #[arg(long)]
    out: PathBuf,
    /// Also write the integrated depth (.pfm).
    #[arg(long)]
    depth_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct NoiseArgs {
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long)]
    seed: u64,
    /// Single-channel PFM with the channels stacked vertically.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct HistArgs {
    /// Depth maps (.pfm or 16-bit .png).
    #[arg(required = true)]
    depths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "metric")]
    kind: Kind,
    #[command(flatten)]
    input: DepthInput,
    #[arg(long)]
    far_clip: Option<f64>,
    /// Report the proportion of the bin containing this value.
    #[arg(long, default_value_t = 0.6)]
    at: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct ToyCheckArgs {
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct ToyTrainArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 24)]
    samples: usize,
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Trained parameters.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn ext(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn read_depth(p: &Path, kind: DepthKind, input: &DepthInput) -> Result<DepthMap<f64>> {
    match ext(p).as_str() {
        "png" => {
            let div = input
                .divisor
                .ok_or_else(|| Error::InvalidArgument(format!("{} is a PNG; pass --divisor", p.display())))?;
            io::read_depth_png16(p, div)?.relabel(kind)
        }
        _ => io::read_depth_pfm(p, kind),
    }
}

fn read_normals(p: &Path) -> Result<NormalMap<f64>> {
    match ext(p).as_str() {
        "png" => io::read_normal_png(p),
        _ => io::read_normal_pfm(p),
    }
}

fn mesh_format(p: &Path) -> Result<MeshFormat> {
    ext(p).parse()
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    io::write_atomic(path, s.as_bytes())
}

fn log_path(common: &Common, output: Option<&Path>) -> Option<PathBuf> {
    common.log.clone().or_else(|| {
        output.map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".run.json");
            PathBuf::from(s)
        })
    })
}

/// Prints `result`, writes it to `out` if given, and writes the run log.
fn finish<A: Serialize>(name: &str, args: &A, common: &Common, out: Option<&Path>, outputs: &[&Path], result: Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&result).unwrap_or_default());
    if let Some(o) = out {
        write_json(o, &result)?;
    }
    if let Some(log) = log_path(common, outputs.first().copied().or(out)) {
        let mut files: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        if let Some(o) = out {
            files.push(o.display().to_string());
        }
        let record = json!({
            "command": name,
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "outputs": files,
            "result": result,
        });
        write_json(&log, &record)?;
    }
    Ok(())
}

fn eval_depth(a: &EvalDepthArgs) -> Result<()> {
    let pred = read_depth(&a.pred, a.pred_kind.into(), &a.input)?;
    let mut gt = read_depth(&a.gt, DepthKind::Metric, &a.input)?;
    if let Some(f) = a.far_clip {
        gt = apply_far_plane(&gt, f)?;
    }
    let aligned = align_prediction(&pred, &gt, None, a.alignment)?;
    let m = aligned.mask().and(gt.mask())?;
    let result = json!({
        "absrel": absrel(&aligned, &gt, None)?,
        "delta1": delta1(&aligned, &gt, None)?,
        "pixel_count": m.count(),
        "alignment_mode": a.alignment,
        "far_clip": a.far_clip,
    });
    finish("eval-depth", a, &a.common, a.out.as_deref(), &[], result)
}

fn eval_normal(a: &EvalNormalArgs) -> Result<()> {
    let m = normal_metrics(&read_normals(&a.pred)?, &read_normals(&a.gt)?, None)?;
    let result = json!({
        "mean_angular": m.mean_angular_deg,
        "pct_within_11_25": m.within_11_25,
        "pixel_count": m.pixel_count,
    });
    finish("eval-normal", a, &a.common, a.out.as_deref(), &[], result)
}

fn gc(a: &GcArgs) -> Result<()> {
    let k: Intrinsics<f64> = io::read_intrinsics(&a.intrinsics)?;
    let pd = read_depth(&a.pred_depth, a.pred_kind.into(), &a.input)?;
    let gt = read_depth(&a.gt_depth, DepthKind::Metric, &a.input)?;
    let g = geometric_consistency(&pd, &read_normals(&a.pred_normal)?, &gt, &k, None, a.window)?;
    let result = json!({
        "gc": g.mean_deg,
        "window": g.window,
        "scale": g.alignment.scale,
        "shift": g.alignment.shift,
        "pixel_count": g.pixel_count,
    });
    finish("gc", a, &a.common, a.out.as_deref(), &[], result)
}

fn align(a: &AlignArgs) -> Result<()> {
    let depth = read_depth(&a.depth, a.kind.into(), &a.input)?;
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidArgument(format!("--method {:?} needs {flag}", a.method).to_lowercase()))
    };
    let (params, extra) = match a.method {
        AlignMethod::Normal => {
            let n = read_normals(&need(&a.normal, "--normal")?)?;
            let k: Intrinsics<f64> = io::read_intrinsics(&need(&a.intrinsics, "--intrinsics")?)?;
            let r = optimize_scale_shift_by_normal(&depth, &n, &k, &ScaleShiftSearch::default())?;
            (
                r.params,
                json!({ "objective_deg": r.objective_deg, "grid_variation_deg": r.grid_variation_deg, "evaluations": r.evaluations }),
            )
        }
        AlignMethod::Ls => {
            let gt = read_depth(&need(&a.gt, "--gt")?, DepthKind::Metric, &a.input)?;
            (fit_affine_ls(&depth, &gt, None)?, json!({}))
        }
    };
    io::write_depth_pfm(&a.out, &apply_affine(&depth, &params)?)?;
    let result = json!({ "scale": params.scale, "shift": params.shift, "method": a.method, "details": extra });
    finish("align", a, &a.common, None, &[&a.out], result)
}

fn normals_from_depth_cmd(a: &NormalsFromDepthArgs) -> Result<()> {
    let k: Intrinsics<f64> = io::read_intrinsics(&a.intrinsics)?;
    let mut depth = read_depth(&a.depth, DepthKind::Metric, &a.input)?;
    if let Some(f) = a.far {
        depth = apply_far_plane(&depth, f)?;
    }
    let cfg = NormalEstimation {
        window: a.window,
        ..Default::default()
    };
    let n = normals_from_depth_with(&depth, &k, &cfg)?;
    match ext(&a.out).as_str() {
        "png" => io::write_normal_png(&a.out, &n, None)?,
        _ => io::write_normal_pfm(&a.out, &n)?,
    }
    let result = json!({ "valid_pixels": n.mask().count(), "window": a.window });
    finish("normals-from-depth", a, &a.common, None, &[&a.out], result)
}

fn integrate(a: &IntegrateArgs) -> Result<()> {
    let n = read_normals(&a.normal)?;
    let k: Option<Intrinsics<f64>> = a.intrinsics.as_deref().map(io::read_intrinsics).transpose()?;
    let prior = a
        .prior
        .as_deref()
        .map(|p| io::read_depth_pfm::<f64>(p, DepthKind::Metric))
        .transpose()?;
    let params = IntegrationParams {
        model: match a.model {
            Model::Orthographic => Projection::Orthographic,
            Model::Perspective => Projection::Perspective,
        },
        irls_iters: a.iters,
        depth_prior_weight: a.lambda,
        ..Default::default()
    };
    let mask = match &prior {
        Some(p) => n.mask().and(p.mask())?,
        None => n.mask().clone(),
    };
    let r = integrate_normals(&n, &mask, prior.as_ref(), k.as_ref(), &params)?;
    io::write_depth_pfm(&a.out, &r.depth)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(mp) = &a.mesh {
        let k = k
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--mesh needs --intrinsics".into()))?;
        let depth = r.depth.clone().relabel(DepthKind::Metric)?;
        let mesh = mesh_from_depth(&depth, k, depth.mask(), 1.5)?;
        io::write_mesh(mp, &mesh, mesh_format(mp)?)?;
        outputs.push(mp);
    }
    let result = json!({
        "energies": r.energies,
        "cg_iterations": r.cg_iterations,
        "components": r.components,
        "kind": r.depth.kind(),
    });
    finish("integrate", a, &a.common, None, &outputs, result)
}

fn recon(a: &ReconArgs) -> Result<()> {
    let format = mesh_format(&a.out)?;
    let k: Intrinsics<f64> = io::read_intrinsics(&a.intrinsics)?;
    let depth = io::read_depth_pfm::<f64>(&a.depth, a.kind.into())?;
    let normals = read_normals(&a.normal)?;
    let mut params = ReconstructParams {
        edge_depth_ratio: a.edge_ratio,
        ..Default::default()
    };
    params.integration.depth_prior_weight = a.lambda;
    let r = reconstruct(&depth, &normals, &k, &params)?;
    io::write_mesh(&a.out, &r.mesh, format)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(p) = &a.depth_out {
        io::write_depth_pfm(p, &r.integration.depth)?;
        outputs.push(p);
    }
    let result = json!({
        "scale": r.alignment.params.scale,
        "shift": r.alignment.params.shift,
        "objective_deg": r.alignment.objective_deg,
        "vertices": r.mesh.vertices.len(),
        "faces": r.mesh.faces.len(),
        "final_energy": r.integration.energies.last(),
    });
    finish("recon", a, &a.common, None, &outputs, result)
}

fn noise(a: &NoiseArgs) -> Result<()> {
    let z = multires_noise::<f32>((a.channels, a.height, a.width), a.levels, a.decay, a.seed)?;
    let data = z.as_slice().to_vec();
    let n = data.len() as f64;
    let mean = data.iter().map(|x| *x as f64).sum::<f64>() / n;
    let var = data.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
    let pfm = Pfm {
        width: a.width,
        height: a.channels * a.height,
        channels: 1,
        data,
    };
    io::write_atomic(&a.out, &io::encode_pfm(&pfm)?)?;
    let result = json!({ "mean": mean, "variance": var, "samples": pfm.data.len() });
    finish("noise", a, &a.common, None, &[&a.out], result)
}

fn hist(a: &HistArgs) -> Result<()> {
    let maps = a
        .depths
        .iter()
        .map(|p| read_depth(p, a.kind.into(), &a.input))
        .collect::<Result<Vec<_>>>()?;
    let h = scene_depth_histogram(&maps, a.far_clip)?;
    let p = h.proportion_at(a.at);
    let bin = DepthHistogram::bin_of(a.at);
    let result = json!({
        "at": a.at,
        "bin": [h.bin_edges[bin], h.bin_edges[bin + 1]],
        "proportion": p,
        "percent": DepthHistogram::format_percent(p),
        "histogram": h,
    });
    finish("hist", a, &a.common, a.out.as_deref(), &[], result)
}

fn toy_check(a: &ToyCheckArgs) -> Result<bool> {
    let outcomes = checks::run_all(a.seed);
    for c in &outcomes {
        eprintln!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let passed = outcomes.iter().all(|c| c.passed);
    let result = json!({ "passed": passed, "checks": outcomes });
    finish("toy-check", a, &a.common, None, &[], result)?;
    Ok(passed)
}

fn toy_train(a: &ToyTrainArgs) -> Result<()> {
    let cfg = ToyConfig::default();
    let sched = make_schedule::<f32>(1000, ScheduleKind::ScaledLinear)?;
    let data = procedural_samples::<f32>(a.samples, a.size, cfg.channels, a.seed)?;
    let mut p = ToyParams::<f32>::init(cfg, a.seed)?;
    let tc = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        adam: Adam {
            lr: a.lr,
            ..Default::default()
        },
        seed: a.seed,
    };
    let r = train_toy(&mut p, &data, &sched, &tc)?;
    io::write_toy_params(&a.out, &p)?;
    let result = json!({
        "initial_loss": r.initial_loss,
        "final_loss": r.final_loss,
        "reduction": r.reduction(),
        "parameters": p.len(),
    });
    finish("toy-train", a, &a.common, None, &[&a.out], result)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::EvalDepth(a) => eval_depth(a)?,
        Command::EvalNormal(a) => eval_normal(a)?,
        Command::Gc(a) => gc(a)?,
        Command::Align(a) => align(a)?,
        Command::NormalsFromDepth(a) => normals_from_depth_cmd(a)?,
        Command::Integrate(a) => integrate(a)?,
        Command::Recon(a) => recon(a)?,
        Command::Noise(a) => noise(a)?,
        Command::Hist(a) => hist(a)?,
        Command::ToyCheck(a) => return toy_check(a),
        Command::ToyTrain(a) => toy_train(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
