//! Command-line surface for the splatrig pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
//! `SPLATRIG_THREADS` caps the worker pool (builds with the `parallel`
//! feature); `--deterministic` selects the bit-reproducible reduction mode.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use splatrig_core::error::Error;
use splatrig_core::image_buf::Image;
use splatrig_core::io::{self, Dataset, RigParamsRecord};
use splatrig_core::losses;
use splatrig_core::mesh_rig::{FrameData, RigParams};
use splatrig_core::splat_model::{init_avatar, sigmoid, RiggedAvatar};
use splatrig_core::synth::{synth_scene, SynthSpec};
use splatrig_core::trainer::{self, train, TrainConfig};

#[derive(Parser)]
#[command(name = "splatrig", about = "Mesh-rigged Gaussian splat avatars", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground-truth splats.
    Synth(SynthArgs),
    /// Optimize an avatar against a dataset.
    Train(TrainArgs),
    /// Render training-frame poses from a checkpoint.
    Render(RenderArgs),
    /// Re-animate a checkpoint with a foreign parameter sequence.
    Reenact(ReenactArgs),
    /// Compare renders against dataset images and write a PSNR/SSIM report.
    Eval(EvalArgs),
    /// Print checkpoint statistics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 9)]
    cameras: usize,
    #[arg(long, default_value_t = 1)]
    held_out: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    rings: u32,
    #[arg(long, default_value_t = 12)]
    segments: u32,
    #[arg(long, default_value_t = 4)]
    blendshapes: usize,
    #[arg(long, default_value_t = 3)]
    gt_per_triangle: usize,
    /// Store raw vertex files instead of rig parameters.
    #[arg(long)]
    raw_vertices: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5_000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
    /// Disable adaptive density control.
    #[arg(long)]
    no_adc: bool,
    /// Disable per-frame rig fine-tuning.
    #[arg(long)]
    no_rig_finetune: bool,
    #[arg(long)]
    lambda_position: Option<f64>,
    #[arg(long)]
    lambda_scaling: Option<f64>,
    #[arg(long)]
    eps_position: Option<f64>,
    #[arg(long)]
    eps_scaling: Option<f64>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[arg(long, default_value_t = 500)]
    log_every: u64,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated frame indices (default: all).
    #[arg(long)]
    frames: Option<String>,
    /// Comma-separated camera ids (default: all).
    #[arg(long)]
    cameras: Option<String>,
    /// Fine-tuned parameter file written by `train`.
    #[arg(long)]
    tuned_params: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct ReenactArgs {
    /// Dataset the avatar was trained on (topology, rig, cameras).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest whose rig-parameter sequence drives the avatar.
    #[arg(long)]
    driving: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated camera ids (default: all).
    #[arg(long)]
    cameras: Option<String>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Render this checkpoint and compare (mutually exclusive with --renders).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Compare pre-rendered images from this directory instead.
    #[arg(long)]
    renders: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated camera ids (default: the dataset's held-out set).
    #[arg(long)]
    cameras: Option<String>,
    #[arg(long)]
    tuned_params: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Reenact(args) => cmd_reenact(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFiniteLoss { .. } => 3,
                _ => 2,
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn init_thread_pool() {
    if let Ok(threads) = std::env::var("SPLATRIG_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        } else {
            eprintln!("warning: ignoring unparsable SPLATRIG_THREADS={threads}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool() {}

fn parse_id_list(arg: &Option<String>) -> Result<Option<Vec<u32>>, Error> {
    match arg {
        None => Ok(None),
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Schema(format!("bad id {p:?} in list")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
    }
}

fn mkdir(p: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        sphere_rings: args.rings,
        sphere_segments: args.segments,
        blendshape_count: args.blendshapes,
        camera_count: args.cameras,
        held_out_cameras: args.held_out,
        image_size: args.size,
        frame_count: args.frames,
        gt_splats_per_triangle: args.gt_per_triangle,
        raw_vertices: args.raw_vertices,
        seed: args.seed,
    };
    let manifest = synth_scene(&args.out, &spec)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn load_tuned_params(path: &Path) -> Result<Vec<RigParams>, Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let records: Vec<RigParamsRecord> = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(records.iter().map(|r| r.to_params()).collect())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    mkdir(&args.out)?;
    let mut config = TrainConfig {
        enable_adc: !args.no_adc,
        rig_finetune: !args.no_rig_finetune,
        deterministic: args.deterministic,
        checkpoint_interval: args.checkpoint_every,
        log_every: args.log_every,
        ..Default::default()
    };
    config.optim.total_iters = args.iters;
    config.optim.seed = args.seed;
    if let Some(v) = args.lambda_position {
        config.weights.lambda_position = v;
    }
    if let Some(v) = args.lambda_scaling {
        config.weights.lambda_scaling = v;
    }
    if let Some(v) = args.eps_position {
        config.weights.eps_position = v;
    }
    if let Some(v) = args.eps_scaling {
        config.weights.eps_scaling = v;
    }

    let avatar = init_avatar(dataset.topology.clone(), &dataset.neutral_vertices)?;
    println!(
        "training {} splats on {} frames x {} cameras for {} iterations",
        avatar.splats.len(),
        dataset.frames.len(),
        dataset.training_camera_ids().len(),
        args.iters
    );
    let result = train(&dataset, avatar, &config, Some(&args.out))?;

    let meta = io::CheckpointMeta {
        iteration: args.iters,
        topology_hash: String::new(),
        config_echo: serde_json::to_string(&config)
            .map_err(|e| Error::Schema(format!("config echo: {e}")))?,
        opt_state: Some(result.opt_blob.clone()),
    };
    io::save_checkpoint(
        &args.out.join("checkpoint.ply"),
        &result.avatar,
        &dataset.neutral_vertices,
        &meta,
    )?;
    result.runlog.write(&args.out.join("runlog.json"))?;
    result.runlog.write_timings(&args.out.join("timings.json"))?;
    if let Some(params) = &result.tuned_params {
        let records: Vec<RigParamsRecord> = params.iter().map(RigParamsRecord::from_params).collect();
        let text = serde_json::to_string_pretty(&records)
            .map_err(|e| Error::Schema(format!("tuned params: {e}")))?;
        let path = args.out.join("tuned_params.json");
        std::fs::write(&path, text + "\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    println!(
        "done: {} splats, checkpoint at {}",
        result.avatar.splats.len(),
        args.out.join("checkpoint.ply").display()
    );
    Ok(())
}

/// Frame data for rendering: tuned params when provided, else the dataset's.
fn frame_sequence(dataset: &Dataset, tuned: &Option<Vec<RigParams>>) -> Vec<FrameData> {
    dataset
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| match (&f.data, tuned) {
            (FrameData::Params(_), Some(t)) if i < t.len() => FrameData::Params(t[i].clone()),
            (data, _) => data.clone(),
        })
        .collect()
}

fn selected_cameras(
    dataset: &Dataset,
    ids: Option<Vec<u32>>,
) -> Result<Vec<(u32, splatrig_core::renderer::Camera)>, Error> {
    let ids = match ids {
        Some(ids) => ids,
        None => dataset.cameras.iter().map(|(id, _)| *id).collect(),
    };
    ids.into_iter()
        .map(|id| {
            dataset
                .camera(id)
                .cloned()
                .map(|c| (id, c))
                .ok_or_else(|| Error::Schema(format!("camera {id} not in dataset")))
        })
        .collect()
}

fn render_frames_to_dir(
    avatar: &RiggedAvatar,
    dataset: &Dataset,
    sequence: &[(usize, FrameData)],
    cameras: &[(u32, splatrig_core::renderer::Camera)],
    out: &Path,
    deterministic: bool,
) -> Result<(), Error> {
    mkdir(out)?;
    let cams: Vec<_> = cameras.iter().map(|(_, c)| c.clone()).collect();
    for (t, data) in sequence {
        let images =
            trainer::animate(avatar, dataset.rig.as_ref(), &[data.clone()], &cams, deterministic)?;
        for ((id, _), img) in cameras.iter().zip(&images[0]) {
            let path = out.join(format!("frame_{t:04}_cam{id:02}.png"));
            io::pngio::save_png(&path, img)?;
        }
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let (avatar, _) = io::load_checkpoint(&args.checkpoint, dataset.topology.clone())?;
    let tuned = match &args.tuned_params {
        Some(p) => Some(load_tuned_params(p)?),
        None => None,
    };
    let cameras = selected_cameras(&dataset, parse_id_list(&args.cameras)?)?;
    let all = frame_sequence(&dataset, &tuned);
    let frame_ids: Vec<usize> = match parse_id_list(&args.frames)? {
        Some(ids) => ids.into_iter().map(|i| i as usize).collect(),
        None => (0..all.len()).collect(),
    };
    let sequence: Vec<(usize, FrameData)> = frame_ids
        .into_iter()
        .map(|i| {
            all.get(i)
                .cloned()
                .map(|d| (i, d))
                .ok_or_else(|| Error::Schema(format!("frame {i} not in dataset")))
        })
        .collect::<Result<_, _>>()?;
    render_frames_to_dir(&avatar, &dataset, &sequence, &cameras, &args.out, args.deterministic)?;
    println!(
        "wrote {} frames x {} cameras to {}",
        sequence.len(),
        cameras.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_reenact(args: ReenactArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let (avatar, _) = io::load_checkpoint(&args.checkpoint, dataset.topology.clone())?;
    let rig = dataset
        .rig
        .as_ref()
        .ok_or_else(|| Error::Schema("reenactment needs a rig-driven dataset".into()))?;

    let driving_manifest = io::read_manifest(&args.driving)?;
    let mut sequence = Vec::new();
    for (i, frame) in driving_manifest.frames.iter().enumerate() {
        let record = frame.rig_params.as_ref().ok_or_else(|| {
            Error::Schema(format!("driving frame {i} carries no rig parameters"))
        })?;
        if record.blend_weights.len() != rig.basis_count() {
            return Err(Error::DimensionMismatch {
                context: format!("driving frame {i} blend weights"),
                expected: rig.basis_count(),
                actual: record.blend_weights.len(),
            });
        }
        sequence.push((i, FrameData::Params(record.to_params())));
    }
    let cameras = selected_cameras(&dataset, parse_id_list(&args.cameras)?)?;
    render_frames_to_dir(&avatar, &dataset, &sequence, &cameras, &args.out, args.deterministic)?;
    println!(
        "reenacted {} frames x {} cameras to {}",
        sequence.len(),
        cameras.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let camera_ids: Vec<u32> = match parse_id_list(&args.cameras)? {
        Some(ids) => ids,
        None if !dataset.held_out_cameras.is_empty() => dataset.held_out_cameras.clone(),
        None => dataset.cameras.iter().map(|(id, _)| *id).collect(),
    };

    enum Source {
        Checkpoint(Box<RiggedAvatar>, Option<Vec<RigParams>>),
        Renders(PathBuf),
    }
    let source = match (&args.checkpoint, &args.renders) {
        (Some(ckpt), None) => {
            let (avatar, _) = io::load_checkpoint(ckpt, dataset.topology.clone())?;
            let tuned = match &args.tuned_params {
                Some(p) => Some(load_tuned_params(p)?),
                None => None,
            };
            Source::Checkpoint(Box::new(avatar), tuned)
        }
        (None, Some(dir)) => Source::Renders(dir.clone()),
        _ => {
            return Err(Error::Schema(
                "eval needs exactly one of --checkpoint or --renders".into(),
            ))
        }
    };

    let mut entries = Vec::new();
    for (t, frame) in dataset.frames.iter().enumerate() {
        for id in &camera_ids {
            let Some((_, target)) = frame.images.iter().find(|(cid, _)| cid == id) else {
                continue;
            };
            let rendered: Image = match &source {
                Source::Checkpoint(avatar, tuned) => {
                    let data = match (&frame.data, tuned) {
                        (FrameData::Params(_), Some(tp)) if t < tp.len() => {
                            FrameData::Params(tp[t].clone())
                        }
                        (data, _) => data.clone(),
                    };
                    let cam = dataset.camera(*id).unwrap().clone();
                    trainer::animate(avatar, dataset.rig.as_ref(), &[data], &[cam], args.deterministic)?
                        .remove(0)
                        .remove(0)
                }
                Source::Renders(dir) => {
                    io::pngio::load_png(&dir.join(format!("frame_{t:04}_cam{id:02}.png")))?
                }
            };
            entries.push(io::EvalEntry {
                frame: t as u32,
                camera: *id,
                psnr: losses::psnr(&rendered, target)?,
                ssim: losses::ssim(&rendered, target)?,
            });
        }
    }
    let report = io::EvalReport::from_entries(entries);
    io::write_report(&args.out, &report)?;
    println!(
        "evaluated {} views: mean PSNR {:.2} dB, mean SSIM {:.4}",
        report.entries.len(),
        report.mean_psnr,
        report.mean_ssim
    );
    Ok(())
}

fn percentile(sorted: &[f32], p: f64) -> f32 {
    if sorted.is_empty() {
        return f32::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let (avatar, meta) = io::load_checkpoint(&args.checkpoint, dataset.topology.clone())?;
    let n = avatar.splats.len();
    println!("checkpoint: {}", args.checkpoint.display());
    println!("iteration: {}", meta.iteration);
    println!("splats: {n}");
    println!("triangles: {}", avatar.topology.triangle_count());

    let counts = avatar.recount();
    let (min, max) = (
        counts.iter().min().copied().unwrap_or(0),
        counts.iter().max().copied().unwrap_or(0),
    );
    println!(
        "attachments per triangle: min {min}, max {max}, mean {:.2}",
        n as f64 / counts.len().max(1) as f64
    );
    let mut hist = std::collections::BTreeMap::new();
    for c in &counts {
        *hist.entry(*c).or_insert(0usize) += 1;
    }
    for (k, v) in hist {
        println!("  {k} splat(s): {v} triangle(s)");
    }

    let mut opacities: Vec<f32> = avatar.splats.opacity.iter().map(|&l| sigmoid(l)).collect();
    opacities.sort_by(f32::total_cmp);
    println!(
        "opacity: p5 {:.4}, median {:.4}, p95 {:.4}",
        percentile(&opacities, 0.05),
        percentile(&opacities, 0.50),
        percentile(&opacities, 0.95)
    );
    let mut scales: Vec<f32> = avatar.splats.log_scale.iter().map(|&s| s.exp()).collect();
    scales.sort_by(f32::total_cmp);
    println!(
        "local scale: p5 {:.4}, median {:.4}, p95 {:.4}",
        percentile(&scales, 0.05),
        percentile(&scales, 0.50),
        percentile(&scales, 0.95)
    );
    if !meta.config_echo.is_empty() {
        println!("config: {}", meta.config_echo);
    }
    Ok(())
}
