//! Synthetic deforming-mesh datasets with known ground-truth splats.
//!
//! A UV sphere carries a sinusoidal blendshape rig and a coat of flat,
//! procedurally colored splats. Rendering those splats with the reference
//! renderer produces the training images, so the reconstruction task has a
//! representable optimum and every test can compare against the truth.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::Vec3;
use crate::image_buf::Image;
use crate::io::{
    self, binfmt, manifest::RigParamsRecord, obj, pngio, CameraRecord, CheckpointMeta,
    DatasetManifest, FrameImageRef, FrameRecord,
};
use crate::mesh_rig::{all_frames, pose, BlendshapeRig, RigParams, Topology};
use crate::renderer::{project, render_reference, Camera};
use crate::splat_model::{
    inverse_sigmoid, to_global, BoundGaussian, RiggedAvatar, SplatSet, SH_TOTAL,
};

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    /// Latitude bands of the sphere mesh.
    pub sphere_rings: u32,
    /// Longitude segments of the sphere mesh.
    pub sphere_segments: u32,
    pub blendshape_count: usize,
    pub camera_count: usize,
    /// The last N camera ids are marked held-out.
    pub held_out_cameras: usize,
    pub image_size: u32,
    pub frame_count: usize,
    pub gt_splats_per_triangle: usize,
    /// Store raw vertex files instead of rig parameters.
    pub raw_vertices: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sphere_rings: 8,
            sphere_segments: 12,
            blendshape_count: 4,
            camera_count: 9,
            held_out_cameras: 1,
            image_size: 128,
            frame_count: 40,
            gt_splats_per_triangle: 3,
            raw_vertices: false,
            seed: 0,
        }
    }
}

/// A fully specified in-memory scene.
pub struct Scene {
    pub topology: Arc<Topology>,
    pub neutral: Vec<Vec3>,
    pub rig: BlendshapeRig,
    pub params: Vec<RigParams>,
    pub gt_splats: SplatSet,
    pub cameras: Vec<Camera>,
    pub held_out: Vec<u32>,
}

/// Unit UV sphere.
pub fn sphere_mesh(rings: u32, segments: u32) -> (Vec<Vec3>, Topology) {
    assert!(rings >= 3 && segments >= 3);
    let mut verts = vec![Vec3::new(0.0, 1.0, 0.0)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            verts.push(Vec3::new(
                theta.sin() * phi.cos(),
                theta.cos(),
                theta.sin() * phi.sin(),
            ));
        }
    }
    verts.push(Vec3::new(0.0, -1.0, 0.0));
    let south = verts.len() as u32 - 1;
    let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);

    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            tris.push([a, b, c]);
            tris.push([b, d, c]);
        }
    }
    for s in 0..segments {
        tris.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    let topo = Topology::new(verts.len(), tris).expect("sphere topology is valid");
    (verts, topo)
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

fn make_rig(neutral: &[Vec3], count: usize, rng: &mut ChaCha8Rng) -> BlendshapeRig {
    let mut basis = Vec::with_capacity(count);
    for _ in 0..count {
        let dir = random_dir(rng);
        let axis = random_dir(rng);
        let freq = rng.gen_range(1.5..3.5);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = rng.gen_range(0.05..0.12);
        basis.push(
            neutral
                .iter()
                .map(|p| dir * (amp * (freq * p.dot(&axis) + phase).sin()))
                .collect(),
        );
    }
    BlendshapeRig::new(neutral.to_vec(), basis).expect("synthetic rig is consistent")
}

fn params_trajectory(
    basis_count: usize,
    frame_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RigParams> {
    let amps: Vec<f64> = (0..basis_count).map(|_| rng.gen_range(0.4..1.0)).collect();
    let cycles: Vec<f64> = (0..basis_count).map(|_| rng.gen_range(1.0..2.5)).collect();
    let phases: Vec<f64> = (0..basis_count)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let yaw_phase = rng.gen_range(0.0..2.0 * PI);
    let t_dir = random_dir(rng);
    let t_phase = rng.gen_range(0.0..2.0 * PI);

    (0..frame_count)
        .map(|f| {
            let t = f as f64 / frame_count.max(1) as f64;
            let weights: Vec<f64> = (0..basis_count)
                .map(|b| amps[b] * (2.0 * PI * cycles[b] * t + phases[b]).sin())
                .collect();
            let yaw = 0.25 * (2.0 * PI * t + yaw_phase).sin();
            let rotation = [(yaw / 2.0).cos(), 0.0, (yaw / 2.0).sin(), 0.0];
            RigParams {
                translation: t_dir * (0.05 * (2.0 * PI * t + t_phase).sin()),
                rotation,
                blend_weights: weights,
                offsets: None,
            }
        })
        .collect()
}

/// Bound per-coefficient magnitude of the non-DC SH basis over the sphere.
const REST_BASIS_BOUND: f32 = 0.75;

fn paint_gt_splats(
    topology: &Topology,
    neutral: &[Vec3],
    per_triangle: usize,
    rng: &mut ChaCha8Rng,
) -> SplatSet {
    use crate::renderer::sh::SH_C0;
    let mut set = SplatSet::with_capacity(topology.triangle_count() * per_triangle);
    for (t, tri) in topology.triangles.iter().enumerate() {
        let centroid = (neutral[tri[0] as usize]
            + neutral[tri[1] as usize]
            + neutral[tri[2] as usize])
            / 3.0;
        // procedural base color from the rest-pose position
        let base = [
            0.5 + 0.34 * (3.1 * centroid.x + 0.7 * centroid.y).sin(),
            0.5 + 0.34 * (2.6 * centroid.y + 1.9 * centroid.z + 2.0).sin(),
            0.5 + 0.34 * (2.9 * centroid.z + 1.3 * centroid.x + 4.0).sin(),
        ];
        for _ in 0..per_triangle {
            let mut g = BoundGaussian::at_rest(t as u32);
            g.mu_local = [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.5..0.5),
            ];
            // a flat disk: thin along the local normal (axis 1)
            g.log_scale = [
                rng.gen_range(0.25f32..0.45).ln(),
                rng.gen_range(0.04f32..0.08).ln(),
                rng.gen_range(0.25f32..0.45).ln(),
            ];
            // small tilt off the triangle plane
            let axis = random_dir(rng);
            let half: f64 = rng.gen_range(0.0..0.35) / 2.0;
            g.rot_local = [
                half.cos() as f32,
                (axis.x * half.sin()) as f32,
                (axis.y * half.sin()) as f32,
                (axis.z * half.sin()) as f32,
            ];
            g.opacity_logit = inverse_sigmoid(rng.gen_range(0.75..0.95));

            let mut sh = [0.0f32; SH_TOTAL];
            let mut rest_budget = [0.0f32; 3];
            for (i, v) in sh.iter_mut().enumerate().skip(3) {
                *v = rng.gen_range(-0.015..0.015);
                rest_budget[i % 3] += v.abs();
            }
            for c in 0..3 {
                // keep the worst-case view-dependent excursion inside [0,1]
                let margin = REST_BASIS_BOUND * rest_budget[c];
                let color = (base[c] as f32 + rng.gen_range(-0.08..0.08))
                    .clamp(0.05 + margin, 0.95 - margin);
                sh[c] = (color - 0.5) / SH_C0;
            }
            g.sh = sh;
            set.push(&g);
        }
    }
    set
}

fn ring_cameras(count: usize, image_size: u32) -> Vec<Camera> {
    let radius = 2.6;
    (0..count)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / count as f64;
            let elev: f64 = if i % 2 == 0 { 0.25 } else { -0.25 };
            let eye = Vec3::new(
                radius * elev.cos() * phi.cos(),
                radius * elev.sin(),
                radius * elev.cos() * phi.sin(),
            );
            Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::new(0.0, 1.0, 0.0),
                image_size,
                image_size,
                image_size as f64,
            )
        })
        .collect()
}

/// Build the in-memory scene deterministically from the spec's seed.
pub fn make_scene(spec: &SynthSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (neutral, topology) = sphere_mesh(spec.sphere_rings, spec.sphere_segments);
    let rig = make_rig(&neutral, spec.blendshape_count, &mut rng);
    let params = params_trajectory(spec.blendshape_count, spec.frame_count, &mut rng);
    let gt_splats = paint_gt_splats(&topology, &neutral, spec.gt_splats_per_triangle, &mut rng);
    let cameras = ring_cameras(spec.camera_count, spec.image_size);
    let held_out = ((spec.camera_count - spec.held_out_cameras) as u32
        ..spec.camera_count as u32)
        .collect();
    Scene {
        topology: Arc::new(topology),
        neutral,
        rig,
        params,
        gt_splats,
        cameras,
        held_out,
    }
}

/// Render the scene's ground-truth splats for one frame and camera with the
/// reference renderer.
pub fn render_gt(scene: &Scene, params: &RigParams, cam: &Camera) -> Result<Image> {
    let vertices = pose(&scene.rig, params)?;
    let frames = all_frames(&vertices, &scene.topology)?;
    let projected: Vec<_> = (0..scene.gt_splats.len())
        .map(|i| {
            let g = scene.gt_splats.get(i);
            let global = to_global(&g, &frames[g.parent_triangle as usize]);
            project(&global, cam, 3)
        })
        .collect();
    let opts = crate::renderer::RenderOptions::default();
    Ok(render_reference(&projected, cam.width as usize, cam.height as usize, &opts).image)
}

/// Write a complete dataset to `dir`, returning the manifest path.
pub fn synth_scene(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    let scene = make_scene(spec);
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| crate::error::Error::io(p.display().to_string(), e))
    };
    mkdir(dir)?;
    mkdir(&dir.join("images"))?;

    obj::write_obj(&dir.join("topology.obj"), &scene.neutral, &scene.topology)?;
    binfmt::write_basis(&dir.join("rig.bsr"), &scene.rig.basis)?;

    let gt_avatar = RiggedAvatar {
        topology: scene.topology.clone(),
        splats: scene.gt_splats.clone(),
        per_triangle_count: vec![spec.gt_splats_per_triangle as u32; scene.topology.triangle_count()],
    };
    io::save_checkpoint(
        &dir.join("gt_splats.ply"),
        &gt_avatar,
        &scene.neutral,
        &CheckpointMeta {
            iteration: 0,
            topology_hash: String::new(),
            config_echo: String::new(),
            opt_state: None,
        },
    )?;

    if spec.raw_vertices {
        mkdir(&dir.join("verts"))?;
    }

    let mut frames = Vec::with_capacity(spec.frame_count);
    for (f, params) in scene.params.iter().enumerate() {
        let mut images = Vec::with_capacity(scene.cameras.len());
        for (c, cam) in scene.cameras.iter().enumerate() {
            let rel = format!("images/cam{c:02}/frame_{f:04}.png");
            mkdir(&dir.join(format!("images/cam{c:02}")))?;
            let img = render_gt(&scene, params, cam)?;
            pngio::save_png(&dir.join(&rel), &img)?;
            images.push(FrameImageRef {
                camera: c as u32,
                path: rel,
            });
        }
        let (vertices, rig_params) = if spec.raw_vertices {
            let rel = format!("verts/frame_{f:04}.vrt");
            let posed = pose(&scene.rig, params)?;
            binfmt::write_vertices(&dir.join(&rel), &posed)?;
            (Some(rel), None)
        } else {
            (None, Some(RigParamsRecord::from_params(params)))
        };
        frames.push(FrameRecord {
            time: f as u32,
            vertices,
            rig_params,
            images,
        });
    }

    let manifest = DatasetManifest {
        format_version: io::FORMAT_VERSION,
        topology: "topology.obj".into(),
        rig: (!spec.raw_vertices).then(|| "rig.bsr".into()),
        gt_splats: Some("gt_splats.ply".into()),
        held_out_cameras: scene.held_out.clone(),
        cameras: scene
            .cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| CameraRecord::from_camera(i as u32, cam))
            .collect(),
        frames,
    };
    let manifest_path = dir.join("manifest.json");
    io::write_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}
