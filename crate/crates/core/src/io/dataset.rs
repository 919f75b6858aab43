//! Loads a manifest plus everything it references into memory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image_buf::Image;
use crate::mesh_rig::{BlendshapeRig, FrameData, Topology};
use crate::renderer::Camera;
use crate::splat_model::SplatSet;

use super::binfmt;
use super::manifest::{read_manifest, DatasetManifest};
use super::obj;
use super::pngio;
use super::ply;

#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub time: u32,
    pub data: FrameData,
    /// Decoded images keyed by camera id, in manifest order.
    pub images: Vec<(u32, Image)>,
}

/// A fully decoded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub topology: Arc<Topology>,
    /// Vertices from the topology OBJ; the rig's neutral pose.
    pub neutral_vertices: Vec<Vec3>,
    pub rig: Option<BlendshapeRig>,
    pub cameras: Vec<(u32, Camera)>,
    pub held_out_cameras: Vec<u32>,
    pub frames: Vec<DatasetFrame>,
    pub gt_splats: Option<SplatSet>,
}

impl Dataset {
    pub fn camera(&self, id: u32) -> Option<&Camera> {
        self.cameras.iter().find(|(cid, _)| *cid == id).map(|(_, c)| c)
    }

    /// Camera ids used for training (all minus the held-out set).
    pub fn training_camera_ids(&self) -> Vec<u32> {
        self.cameras
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| !self.held_out_cameras.contains(id))
            .collect()
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mesh = obj::read_obj(&root.join(&manifest.topology))?;
    let topology = Arc::new(mesh.topology);
    let neutral_vertices = mesh.vertices;

    let rig = match &manifest.rig {
        Some(rel) => {
            let basis = binfmt::read_basis(&root.join(rel), topology.vertex_count)?;
            Some(BlendshapeRig::new(neutral_vertices.clone(), basis)?)
        }
        None => None,
    };

    let mut cameras = Vec::new();
    for rec in &manifest.cameras {
        if cameras.iter().any(|(id, _)| *id == rec.id) {
            return Err(Error::Schema(format!("duplicate camera id {}", rec.id)));
        }
        cameras.push((rec.id, rec.to_camera()?));
    }
    for id in &manifest.held_out_cameras {
        if !cameras.iter().any(|(cid, _)| cid == id) {
            return Err(Error::Schema(format!("held-out camera {id} does not exist")));
        }
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for rec in &manifest.frames {
        let data = match (&rec.vertices, &rec.rig_params) {
            (Some(rel), None) => FrameData::Vertices(binfmt::read_vertices(
                &root.join(rel),
                Some(topology.vertex_count),
            )?),
            (None, Some(params)) => {
                let rig = rig.as_ref().ok_or_else(|| {
                    Error::Schema(format!(
                        "frame {} has rig params but the manifest names no rig",
                        rec.time
                    ))
                })?;
                if params.blend_weights.len() != rig.basis_count() {
                    return Err(Error::DimensionMismatch {
                        context: format!("frame {} blend weights", rec.time),
                        expected: rig.basis_count(),
                        actual: params.blend_weights.len(),
                    });
                }
                FrameData::Params(params.to_params())
            }
            (Some(_), Some(_)) => {
                return Err(Error::Schema(format!(
                    "frame {} has both vertices and rig params",
                    rec.time
                )))
            }
            (None, None) => {
                return Err(Error::Schema(format!(
                    "frame {} has neither vertices nor rig params",
                    rec.time
                )))
            }
        };
        let mut images = Vec::with_capacity(rec.images.len());
        for img_ref in &rec.images {
            let (_, cam) = cameras
                .iter()
                .find(|(id, _)| *id == img_ref.camera)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "frame {} references unknown camera {}",
                        rec.time, img_ref.camera
                    ))
                })?;
            let img = pngio::load_png(&root.join(&img_ref.path))?;
            if img.width != cam.width as usize || img.height != cam.height as usize {
                return Err(Error::Schema(format!(
                    "{}: image is {}x{} but camera {} is {}x{}",
                    img_ref.path, img.width, img.height, img_ref.camera, cam.width, cam.height
                )));
            }
            images.push((img_ref.camera, img));
        }
        frames.push(DatasetFrame {
            time: rec.time,
            data,
            images,
        });
    }

    let gt_splats = match &manifest.gt_splats {
        Some(rel) => {
            let (avatar, _) = ply::load_checkpoint(&root.join(rel), topology.clone())?;
            Some(avatar.splats)
        }
        None => None,
    };

    Ok(Dataset {
        root,
        held_out_cameras: manifest.held_out_cameras.clone(),
        manifest,
        topology,
        neutral_vertices,
        rig,
        cameras,
        frames,
        gt_splats,
    })
}
