//! The optimization loop: frame/view sampling, forward render, backward
//! chain through the rasterizer, rigging transform, frame construction and
//! rig posing, per-group moment updates, density control on schedule, and
//! run instrumentation.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{self, AdcConfig, DensifyStats};
use crate::error::{Error, Result};
use crate::geometry::{triangle_frame_vjp, FrameGrad, TriangleFrame, Vec3};
use crate::image_buf::Image;
use crate::io::{self, Dataset};
use crate::losses::{total_loss, LossWeights};
use crate::mesh_rig::{all_frames, pose, pose_jacobian_vjp, BlendshapeRig, FrameData, RigParams};
use crate::optim::{adam_step, adam_step_f32, AdamParams, AdamState};
use crate::par;
use crate::renderer::{
    project, project_vjp, rasterize_backward, rasterize_forward, Camera, Projected2D,
    RenderOptions, RenderOutput,
};
use crate::splat_model::{
    to_global, to_global_vjp, BoundGrad, GlobalGaussian, RiggedAvatar, SH_DC, SH_REST,
};

/// Optimizer hyperparameters and iteration budget.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimConfig {
    pub lr_position: f32,
    pub lr_scaling: f32,
    pub lr_rotation: f32,
    pub lr_opacity: f32,
    pub lr_sh_dc: f32,
    pub lr_sh_rest: f32,
    pub lr_rig_translation: f64,
    pub lr_rig_rotation: f64,
    pub lr_rig_weights: f64,
    pub total_iters: u64,
    /// The position learning rate decays exponentially to this fraction of
    /// its initial value at the final iteration.
    pub position_lr_final_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_position: 5e-3,
            lr_scaling: 1.7e-2,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-3 / 20.0,
            lr_rig_translation: 1e-6,
            lr_rig_rotation: 1e-5,
            lr_rig_weights: 1e-3,
            total_iters: 600_000,
            position_lr_final_ratio: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            seed: 0,
        }
    }
}

/// Everything one training run depends on.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub weights: LossWeights,
    pub adc: AdcConfig,
    pub enable_adc: bool,
    pub rig_finetune: bool,
    pub deterministic: bool,
    /// Write a checkpoint every N iterations (0 = final only).
    pub checkpoint_interval: u64,
    /// Print a progress line every N iterations (0 = silent).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            weights: LossWeights::default(),
            adc: AdcConfig::default(),
            enable_adc: true,
            rig_finetune: true,
            deterministic: false,
            checkpoint_interval: 0,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub position: f64,
    pub scaling: f64,
    pub splat_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind")]
pub enum Event {
    Adc {
        iter: u64,
        cloned: usize,
        split: usize,
        pruned: usize,
    },
    OpacityReset {
        iter: u64,
    },
    Checkpoint {
        iter: u64,
    },
}

/// Per-iteration series and event markers. Wall times are carried alongside
/// but serialized separately: they are hardware noise, not part of the
/// deterministic artifact.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RunLog {
    pub iters: Vec<IterRecord>,
    pub events: Vec<Event>,
    #[serde(skip)]
    pub iter_seconds: Vec<f64>,
}

impl RunLog {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("runlog serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn write_timings(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.iter_seconds)
            .map_err(|e| Error::Schema(format!("timing serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub struct TrainResult {
    pub avatar: RiggedAvatar,
    pub runlog: RunLog,
    /// Fine-tuned per-frame rig parameters (rig-driven datasets only).
    pub tuned_params: Option<Vec<RigParams>>,
    /// Serialized optimizer state for the checkpoint.
    pub opt_blob: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Optimizer state for the six splat parameter groups.
// ---------------------------------------------------------------------------

struct SplatOptim {
    position: AdamState<f32>,
    rotation: AdamState<f32>,
    scaling: AdamState<f32>,
    opacity: AdamState<f32>,
    sh_dc: AdamState<f32>,
    sh_rest: AdamState<f32>,
}

impl SplatOptim {
    fn new(n: usize) -> Self {
        SplatOptim {
            position: AdamState::new(3 * n),
            rotation: AdamState::new(4 * n),
            scaling: AdamState::new(3 * n),
            opacity: AdamState::new(n),
            sh_dc: AdamState::new(SH_DC * n),
            sh_rest: AdamState::new(SH_REST * n),
        }
    }

    fn remap(&mut self, keep: &[Option<usize>]) {
        self.position.remap(3, keep);
        self.rotation.remap(4, keep);
        self.scaling.remap(3, keep);
        self.opacity.remap(1, keep);
        self.sh_dc.remap(SH_DC, keep);
        self.sh_rest.remap(SH_REST, keep);
    }

    fn to_blob(&self) -> Vec<u8> {
        let mut out = b"OPT1".to_vec();
        for state in [
            &self.position,
            &self.rotation,
            &self.scaling,
            &self.opacity,
            &self.sh_dc,
            &self.sh_rest,
        ] {
            out.extend_from_slice(&state.step.to_le_bytes());
            out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
            for v in &state.m {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &state.v {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[cfg(test)]
    fn from_blob(bytes: &[u8]) -> Result<SplatOptim> {
        if bytes.len() < 4 || &bytes[..4] != b"OPT1" {
            return Err(Error::Schema("optimizer blob: bad magic".into()));
        }
        let mut cursor = 4;
        let mut read_state = || -> Result<AdamState<f32>> {
            if cursor + 16 > bytes.len() {
                return Err(Error::Schema("optimizer blob: truncated".into()));
            }
            let step = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
            let len = u64::from_le_bytes(bytes[cursor + 8..cursor + 16].try_into().unwrap()) as usize;
            cursor += 16;
            if cursor + 8 * len > bytes.len() {
                return Err(Error::Schema("optimizer blob: truncated".into()));
            }
            let mut m = Vec::with_capacity(len);
            let mut v = Vec::with_capacity(len);
            for i in 0..len {
                m.push(f32::from_le_bytes(
                    bytes[cursor + 4 * i..cursor + 4 * i + 4].try_into().unwrap(),
                ));
            }
            cursor += 4 * len;
            for i in 0..len {
                v.push(f32::from_le_bytes(
                    bytes[cursor + 4 * i..cursor + 4 * i + 4].try_into().unwrap(),
                ));
            }
            cursor += 4 * len;
            Ok(AdamState { m, v, step })
        };
        Ok(SplatOptim {
            position: read_state()?,
            rotation: read_state()?,
            scaling: read_state()?,
            opacity: read_state()?,
            sh_dc: read_state()?,
            sh_rest: read_state()?,
        })
    }
}

struct FrameOptim {
    translation: AdamState<f64>,
    rotation: AdamState<f64>,
    weights: AdamState<f64>,
}

// ---------------------------------------------------------------------------
// Shared forward path.
// ---------------------------------------------------------------------------

/// Rig all splats into world space and project them for one camera.
pub fn project_splats(
    avatar: &RiggedAvatar,
    frames: &[TriangleFrame],
    cam: &Camera,
    sh_degree: u8,
) -> (Vec<GlobalGaussian>, Vec<Option<Projected2D>>) {
    let globals: Vec<GlobalGaussian> = par::map_indexed(avatar.splats.len(), |i| {
        let g = avatar.splats.get(i);
        to_global(&g, &frames[g.parent_triangle as usize])
    });
    let projected = par::map_slice(&globals, |g| project(g, cam, sh_degree));
    (globals, projected)
}

/// Render one posed view of the avatar (no gradient state retained).
pub fn render_view(
    avatar: &RiggedAvatar,
    vertices: &[Vec3],
    cam: &Camera,
    deterministic: bool,
) -> Result<Image> {
    let frames = all_frames(vertices, &avatar.topology)?;
    let (_, projected) = project_splats(avatar, &frames, cam, 3);
    let opts = RenderOptions {
        deterministic,
        ..Default::default()
    };
    Ok(rasterize_forward(&projected, cam.width as usize, cam.height as usize, &opts).image)
}

/// Pure inference: re-animate the avatar under a parameter or vertex
/// sequence and render every camera. Returns images `[frame][camera]`.
pub fn animate(
    avatar: &RiggedAvatar,
    rig: Option<&BlendshapeRig>,
    sequence: &[FrameData],
    cameras: &[Camera],
    deterministic: bool,
) -> Result<Vec<Vec<Image>>> {
    let mut out = Vec::with_capacity(sequence.len());
    for data in sequence {
        let vertices = match data {
            FrameData::Params(p) => {
                let rig = rig.ok_or_else(|| Error::Schema("rig parameters supplied but no rig".into()))?;
                pose(rig, p)?
            }
            FrameData::Vertices(v) => {
                if v.len() != avatar.topology.vertex_count {
                    return Err(Error::DimensionMismatch {
                        context: "animation vertex count".into(),
                        expected: avatar.topology.vertex_count,
                        actual: v.len(),
                    });
                }
                v.clone()
            }
        };
        let mut per_cam = Vec::with_capacity(cameras.len());
        for cam in cameras {
            per_cam.push(render_view(avatar, &vertices, cam, deterministic)?);
        }
        out.push(per_cam);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

/// Flat per-splat gradient buffers, laid out like the [`SplatSet`] arrays.
pub struct SplatGrads {
    pub mu: Vec<f64>,
    pub rot: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub opacity: Vec<f64>,
    pub sh_dc: Vec<f64>,
    pub sh_rest: Vec<f64>,
}

impl SplatGrads {
    fn zeros(n: usize) -> Self {
        SplatGrads {
            mu: vec![0.0; 3 * n],
            rot: vec![0.0; 4 * n],
            log_scale: vec![0.0; 3 * n],
            opacity: vec![0.0; n],
            sh_dc: vec![0.0; SH_DC * n],
            sh_rest: vec![0.0; SH_REST * n],
        }
    }

    fn all_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.rot.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity.iter().all(|v| v.is_finite())
            && self.sh_dc.iter().all(|v| v.is_finite())
            && self.sh_rest.iter().all(|v| v.is_finite())
    }
}

/// Chain rasterizer gradients through projection and rigging onto every
/// bound parameter, folding in the (already weighted) regularizer gradients,
/// and accumulate the triangle-frame gradients per parent triangle.
pub fn backward_chain(
    avatar: &RiggedAvatar,
    tri_frames: &[TriangleFrame],
    globals: &[GlobalGaussian],
    projected: &[Option<Projected2D>],
    cam: &Camera,
    sh_degree: u8,
    backward: &crate::renderer::BackwardOutput,
    loss: &crate::losses::TotalLoss,
) -> (SplatGrads, Vec<FrameGrad>) {
    let n = avatar.splats.len();
    let chained: Vec<(BoundGrad, FrameGrad, u32)> = par::map_indexed(n, |i| {
        let bound = avatar.splats.get(i);
        let parent = bound.parent_triangle;
        let frame = &tri_frames[parent as usize];
        let global_grad = if projected[i].is_some() {
            project_vjp(&globals[i], cam, sh_degree, &backward.grads[i])
        } else {
            crate::splat_model::GlobalGrad::zero()
        };
        let (bg, fg) = to_global_vjp(&bound, frame, &global_grad);
        (bg, fg, parent)
    });

    let mut grads = SplatGrads::zeros(n);
    let mut frame_grads: Vec<FrameGrad> = vec![FrameGrad::zero(); avatar.topology.triangle_count()];
    for (i, (bg, fg, parent)) in chained.iter().enumerate() {
        for a in 0..3 {
            grads.mu[3 * i + a] = bg.d_mu[a] + loss.d_mu[3 * i + a];
            grads.log_scale[3 * i + a] = bg.d_log_scale[a] + loss.d_log_scale[3 * i + a];
        }
        for a in 0..4 {
            grads.rot[4 * i + a] = bg.d_rot[a];
        }
        grads.opacity[i] = bg.d_opacity_logit;
        for a in 0..SH_DC {
            grads.sh_dc[SH_DC * i + a] = bg.d_sh[a];
        }
        for a in 0..SH_REST {
            grads.sh_rest[SH_REST * i + a] = bg.d_sh[SH_DC + a];
        }
        let acc = &mut frame_grads[*parent as usize];
        acc.d_origin += fg.d_origin;
        acc.d_orientation += fg.d_orientation;
        acc.d_scale += fg.d_scale;
    }
    (grads, frame_grads)
}

/// Pull per-triangle frame gradients back to rig parameters through the
/// frame construction and the pose map.
pub fn rig_chain(
    avatar: &RiggedAvatar,
    vertices: &[Vec3],
    frame_grads: &[FrameGrad],
    rig: &BlendshapeRig,
    params: &RigParams,
) -> Result<crate::mesh_rig::RigParamsGrad> {
    let mut vertex_grads = vec![Vec3::zeros(); avatar.topology.vertex_count];
    for (t, fg) in frame_grads.iter().enumerate() {
        if fg.d_origin == Vec3::zeros()
            && fg.d_scale == 0.0
            && fg.d_orientation == crate::geometry::Mat3::zeros()
        {
            continue;
        }
        let [a, b, c] = avatar.topology.triangles[t];
        let gv = triangle_frame_vjp(
            &vertices[a as usize],
            &vertices[b as usize],
            &vertices[c as usize],
            fg,
        )?;
        vertex_grads[a as usize] += gv[0];
        vertex_grads[b as usize] += gv[1];
        vertex_grads[c as usize] += gv[2];
    }
    pose_jacobian_vjp(rig, params, &vertex_grads)
}

/// Iteration-indexed schedule constants, rescaled from the reference budget
/// of 600k iterations to this run's budget.
pub struct AdcSchedule {
    pub start: u64,
    pub interval: u64,
    pub reset_interval: u64,
}

impl AdcSchedule {
    pub fn scaled(adc: &AdcConfig, total_iters: u64) -> AdcSchedule {
        let scale = total_iters as f64 / 600_000.0;
        let rescale = |v: u64| ((v as f64 * scale).round() as u64).max(1);
        AdcSchedule {
            start: rescale(adc.start),
            interval: rescale(adc.interval),
            reset_interval: rescale(adc.reset_interval),
        }
    }

    pub fn densify_at(&self, iter: u64) -> bool {
        iter >= self.start && (iter - self.start) % self.interval == 0
    }

    pub fn reset_at(&self, iter: u64, total: u64) -> bool {
        // never reset on the final iteration; the result would ship with
        // near-zero opacities
        iter > 0 && iter != total && iter % self.reset_interval == 0
    }
}

fn position_lr(cfg: &OptimConfig, iter: u64) -> f32 {
    let t = iter as f64 / cfg.total_iters.max(1) as f64;
    (cfg.lr_position as f64 * cfg.position_lr_final_ratio.powf(t)) as f32
}

fn active_sh_degree(iter: u64, total: u64) -> u8 {
    let step = (total / 60).max(1);
    ((iter / step).min(3)) as u8
}

/// Optimize the avatar against the dataset.
pub fn train(
    dataset: &Dataset,
    mut avatar: RiggedAvatar,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.optim.seed);
    let hp32 = AdamParams {
        beta1: config.optim.beta1 as f32,
        beta2: config.optim.beta2 as f32,
        eps: config.optim.eps as f32,
    };
    let hp64 = AdamParams {
        beta1: config.optim.beta1,
        beta2: config.optim.beta2,
        eps: config.optim.eps,
    };

    let train_cams: Vec<usize> = dataset
        .cameras
        .iter()
        .enumerate()
        .filter(|(_, (id, _))| !dataset.held_out_cameras.contains(id))
        .map(|(i, _)| i)
        .collect();
    if train_cams.is_empty() || dataset.frames.is_empty() {
        return Err(Error::Schema("dataset has no training cameras or frames".into()));
    }

    // Fine-tunable per-frame rig parameters (rig-driven frames only).
    let rig_mode = dataset.rig.is_some()
        && dataset
            .frames
            .iter()
            .all(|f| matches!(f.data, FrameData::Params(_)));
    let mut params: Vec<RigParams> = dataset
        .frames
        .iter()
        .map(|f| match &f.data {
            FrameData::Params(p) => p.clone(),
            FrameData::Vertices(_) => RigParams::identity(0),
        })
        .collect();
    let mut frame_optim: Vec<FrameOptim> = dataset
        .frames
        .iter()
        .map(|f| {
            let b = match &f.data {
                FrameData::Params(p) => p.blend_weights.len(),
                FrameData::Vertices(_) => 0,
            };
            FrameOptim {
                translation: AdamState::new(3),
                rotation: AdamState::new(4),
                weights: AdamState::new(b),
            }
        })
        .collect();

    let mut optim = SplatOptim::new(avatar.splats.len());
    let mut stats = DensifyStats::new(avatar.splats.len());
    let schedule = AdcSchedule::scaled(&config.adc, config.optim.total_iters);
    let mut runlog = RunLog::default();
    let config_echo = serde_json::to_string(config)
        .map_err(|e| Error::Schema(format!("config echo: {e}")))?;

    for iter in 1..=config.optim.total_iters {
        let started = Instant::now();

        // --- sample a (frame, camera) pair
        let f = rng.gen_range(0..dataset.frames.len());
        let c = train_cams[rng.gen_range(0..train_cams.len())];
        let (cam_id, cam) = &dataset.cameras[c];
        let target = dataset.frames[f]
            .images
            .iter()
            .find(|(id, _)| id == cam_id)
            .map(|(_, img)| img)
            .ok_or_else(|| {
                Error::Schema(format!("frame {f} has no image for camera {cam_id}"))
            })?;

        // --- pose and render
        let vertices = match &dataset.frames[f].data {
            FrameData::Params(_) => pose(dataset.rig.as_ref().unwrap(), &params[f])?,
            FrameData::Vertices(v) => v.clone(),
        };
        let tri_frames = all_frames(&vertices, &avatar.topology)?;
        let degree = active_sh_degree(iter, config.optim.total_iters);
        let (globals, projected) = project_splats(&avatar, &tri_frames, cam, degree);
        let opts = RenderOptions {
            deterministic: config.deterministic,
            retain_state: true,
            ..Default::default()
        };
        let rendered: RenderOutput =
            rasterize_forward(&projected, cam.width as usize, cam.height as usize, &opts);

        // --- loss and image gradient
        let loss = total_loss(
            &rendered.image,
            target,
            &avatar.splats,
            &rendered.visible,
            &config.weights,
        )?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: format!(
                    "l1 {} dssim {} position {} scaling {}",
                    loss.l1, loss.dssim, loss.position, loss.scaling
                ),
            });
        }

        // --- backward through the rasterizer, then chain per splat
        let backward = rasterize_backward(&rendered, &projected, &loss.d_image)?;
        let (grads, frame_grads) = backward_chain(
            &avatar,
            &tri_frames,
            &globals,
            &projected,
            cam,
            degree,
            &backward,
            &loss,
        );
        if !grads.all_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: "non-finite splat gradient".into(),
            });
        }

        // --- densification statistics (before the parameter step)
        let mean2d_norms: Vec<f64> = backward
            .grads
            .iter()
            .map(|g| g.viewspace_norm(cam.width, cam.height))
            .collect();
        stats.accumulate(&mean2d_norms, &rendered.visible);

        // --- splat parameter update
        adam_step_f32(&mut avatar.splats.mu, &grads.mu, &mut optim.position, position_lr(&config.optim, iter), &hp32)?;
        adam_step_f32(&mut avatar.splats.rot, &grads.rot, &mut optim.rotation, config.optim.lr_rotation, &hp32)?;
        adam_step_f32(&mut avatar.splats.log_scale, &grads.log_scale, &mut optim.scaling, config.optim.lr_scaling, &hp32)?;
        adam_step_f32(&mut avatar.splats.opacity, &grads.opacity, &mut optim.opacity, config.optim.lr_opacity, &hp32)?;
        adam_step_f32(&mut avatar.splats.sh_dc, &grads.sh_dc, &mut optim.sh_dc, config.optim.lr_sh_dc, &hp32)?;
        adam_step_f32(&mut avatar.splats.sh_rest, &grads.sh_rest, &mut optim.sh_rest, config.optim.lr_sh_rest, &hp32)?;

        // --- per-frame rig fine-tuning
        if rig_mode && config.rig_finetune {
            let rig = dataset.rig.as_ref().unwrap();
            let rig_grad = rig_chain(&avatar, &vertices, &frame_grads, rig, &params[f])?;
            let fo = &mut frame_optim[f];
            let mut t = [params[f].translation.x, params[f].translation.y, params[f].translation.z];
            adam_step(&mut t, &[rig_grad.d_translation.x, rig_grad.d_translation.y, rig_grad.d_translation.z], &mut fo.translation, config.optim.lr_rig_translation, &hp64)?;
            params[f].translation = Vec3::new(t[0], t[1], t[2]);
            adam_step(&mut params[f].rotation, &rig_grad.d_rotation, &mut fo.rotation, config.optim.lr_rig_rotation, &hp64)?;
            adam_step(&mut params[f].blend_weights, &rig_grad.d_blend_weights, &mut fo.weights, config.optim.lr_rig_weights, &hp64)?;
        }

        // --- density control
        if config.enable_adc && schedule.densify_at(iter) {
            let outcome = density::densify(&mut avatar, &mut stats, &config.adc, &mut rng);
            optim.remap(&outcome.remap);
            let before = avatar.splats.len();
            let keep = density::prune(&mut avatar, &mut stats, &config.adc);
            optim.remap(&keep);
            runlog.events.push(Event::Adc {
                iter,
                cloned: outcome.cloned,
                split: outcome.split,
                pruned: before - avatar.splats.len(),
            });
        }
        if config.enable_adc && schedule.reset_at(iter, config.optim.total_iters) {
            density::reset_opacity(&mut avatar, &config.adc);
            // stale opacity moments would fight the recovery
            optim.opacity.zero_all();
            runlog.events.push(Event::OpacityReset { iter });
        }

        // --- instrumentation
        runlog.iters.push(IterRecord {
            iter,
            total: loss.total,
            l1: loss.l1,
            dssim: loss.dssim,
            position: loss.position,
            scaling: loss.scaling,
            splat_count: avatar.splats.len(),
        });
        runlog.iter_seconds.push(started.elapsed().as_secs_f64());

        if config.log_every > 0 && iter % config.log_every == 0 {
            println!(
                "iter {iter}/{} loss {:.5} (l1 {:.5} dssim {:.5} pos {:.4} scale {:.4}) splats {}",
                config.optim.total_iters,
                loss.total,
                loss.l1,
                loss.dssim,
                loss.position,
                loss.scaling,
                avatar.splats.len()
            );
        }

        if config.checkpoint_interval > 0 && iter % config.checkpoint_interval == 0 {
            if let Some(dir) = checkpoint_dir {
                let meta = io::CheckpointMeta {
                    iteration: iter,
                    topology_hash: String::new(),
                    config_echo: config_echo.clone(),
                    opt_state: Some(optim.to_blob()),
                };
                io::save_checkpoint(
                    &dir.join(format!("ckpt_{iter:07}.ply")),
                    &avatar,
                    &dataset.neutral_vertices,
                    &meta,
                )?;
                runlog.events.push(Event::Checkpoint { iter });
            }
        }
    }

    Ok(TrainResult {
        opt_blob: optim.to_blob(),
        tuned_params: rig_mode.then_some(params),
        avatar,
        runlog,
    })
}
