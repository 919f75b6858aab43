//! Dataset manifest: one human-readable JSON file tying together cameras,
//! frames, topology, rig, and ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::mesh_rig::RigParams;
use crate::renderer::Camera;

pub const FORMAT_VERSION: u32 = 1;
/// Near-plane distance applied to manifest cameras.
pub const DEFAULT_NEAR: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rigid world→camera transform, 16 row-major entries.
    pub world_to_camera: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RigParamsRecord {
    pub translation: [f64; 3],
    /// Quaternion (w, x, y, z).
    pub rotation: [f64; 4],
    pub blend_weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameImageRef {
    pub camera: u32,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameRecord {
    pub time: u32,
    /// Path to a binary vertex file; mutually exclusive with `rig_params`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rig_params: Option<RigParamsRecord>,
    pub images: Vec<FrameImageRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub topology: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rig: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_splats: Option<String>,
    #[serde(default)]
    pub held_out_cameras: Vec<u32>,
    pub cameras: Vec<CameraRecord>,
    pub frames: Vec<FrameRecord>,
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        if self.world_to_camera.len() != 16 {
            return Err(Error::Schema(format!(
                "camera {}: world_to_camera needs 16 entries, got {}",
                self.id,
                self.world_to_camera.len()
            )));
        }
        let m = &self.world_to_camera;
        let rot = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let trans = Vec3::new(m[3], m[7], m[11]);
        Ok(Camera {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rot,
            trans,
            near: DEFAULT_NEAR,
        })
    }

    pub fn from_camera(id: u32, cam: &Camera) -> CameraRecord {
        let mut m = vec![0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 4 + c] = cam.rot[(r, c)];
            }
            m[r * 4 + 3] = cam.trans[r];
        }
        m[15] = 1.0;
        CameraRecord {
            id,
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            world_to_camera: m,
        }
    }
}

impl RigParamsRecord {
    pub fn to_params(&self) -> RigParams {
        RigParams {
            translation: Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
            rotation: self.rotation,
            blend_weights: self.blend_weights.clone(),
            offsets: None,
        }
    }

    pub fn from_params(p: &RigParams) -> RigParamsRecord {
        RigParamsRecord {
            translation: [p.translation.x, p.translation.y, p.translation.z],
            rotation: p.rotation,
            blend_weights: p.blend_weights.clone(),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "{}: unsupported format_version {} (expected {FORMAT_VERSION})",
            path.display(),
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}
