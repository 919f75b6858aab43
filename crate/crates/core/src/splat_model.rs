//! Bound Gaussians, the binding table, and the local→global rigging
//! transform.
//!
//! Every splat lives in the local space of its parent triangle: its position
//! and scale are unitless multiples of the triangle scale `k`, so a constant
//! learning rate yields metric steps proportional to triangle size. The
//! global properties are
//!
//! ```text
//!     rot'   = R · r
//!     mu'    = k · R · mu + T
//!     scale' = k · s
//! ```
//!
//! with `(T, R, k)` the parent triangle frame.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotation, quat_to_rotation_vjp, Mat3, TriangleFrame, Vec3};
use crate::mesh_rig::{all_frames, Topology};

/// Spherical-harmonic coefficients per color channel (degree 3).
pub const SH_COEFFS: usize = 16;
/// Total SH floats per splat (16 coefficients × RGB).
pub const SH_TOTAL: usize = SH_COEFFS * 3;
/// Opacity each splat starts with.
pub const INIT_OPACITY: f32 = 0.1;

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn inverse_sigmoid(y: f32) -> f32 {
    (y / (1.0 - y)).ln()
}

/// One splat's optimizable parameters plus its parent-triangle binding.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGaussian {
    /// Position in the parent triangle's local space, unitless (k-relative).
    pub mu_local: [f32; 3],
    /// Local rotation quaternion (w, x, y, z).
    pub rot_local: [f32; 4],
    /// Log of the local anisotropic scale; activated scale is `exp(·)`.
    pub log_scale: [f32; 3],
    /// Opacity logit; activated opacity is `sigmoid(·)`.
    pub opacity_logit: f32,
    /// SH coefficients, layout `[coeff * 3 + channel]`.
    pub sh: [f32; SH_TOTAL],
    pub parent_triangle: u32,
}

impl BoundGaussian {
    pub fn at_rest(parent_triangle: u32) -> Self {
        BoundGaussian {
            mu_local: [0.0; 3],
            rot_local: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: inverse_sigmoid(INIT_OPACITY),
            sh: [0.0; SH_TOTAL],
            parent_triangle,
        }
    }

    pub fn activated_scale(&self) -> [f32; 3] {
        [
            self.log_scale[0].exp(),
            self.log_scale[1].exp(),
            self.log_scale[2].exp(),
        ]
    }

    pub fn opacity(&self) -> f32 {
        sigmoid(self.opacity_logit)
    }
}

/// SH floats per splat in the direct-current (degree 0) group.
pub const SH_DC: usize = 3;
/// SH floats per splat in the higher-order group.
pub const SH_REST: usize = SH_TOTAL - SH_DC;

/// Structure-of-arrays splat storage (32-bit parameters). The DC and
/// higher-order SH bands live in separate arrays because they form separate
/// optimizer groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatSet {
    pub mu: Vec<f32>,        // 3 per splat
    pub rot: Vec<f32>,       // 4 per splat (w, x, y, z)
    pub log_scale: Vec<f32>, // 3 per splat
    pub opacity: Vec<f32>,   // 1 per splat (logit)
    pub sh_dc: Vec<f32>,     // 3 per splat (coefficient 0, RGB)
    pub sh_rest: Vec<f32>,   // 45 per splat (coefficients 1..16, RGB)
    pub parent: Vec<u32>,    // 1 per splat
}

impl SplatSet {
    pub fn with_capacity(n: usize) -> Self {
        SplatSet {
            mu: Vec::with_capacity(3 * n),
            rot: Vec::with_capacity(4 * n),
            log_scale: Vec::with_capacity(3 * n),
            opacity: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(SH_DC * n),
            sh_rest: Vec::with_capacity(SH_REST * n),
            parent: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn push(&mut self, g: &BoundGaussian) {
        self.mu.extend_from_slice(&g.mu_local);
        self.rot.extend_from_slice(&g.rot_local);
        self.log_scale.extend_from_slice(&g.log_scale);
        self.opacity.push(g.opacity_logit);
        self.sh_dc.extend_from_slice(&g.sh[..SH_DC]);
        self.sh_rest.extend_from_slice(&g.sh[SH_DC..]);
        self.parent.push(g.parent_triangle);
    }

    pub fn get(&self, i: usize) -> BoundGaussian {
        let mut sh = [0.0; SH_TOTAL];
        sh[..SH_DC].copy_from_slice(&self.sh_dc[i * SH_DC..(i + 1) * SH_DC]);
        sh[SH_DC..].copy_from_slice(&self.sh_rest[i * SH_REST..(i + 1) * SH_REST]);
        BoundGaussian {
            mu_local: [self.mu[3 * i], self.mu[3 * i + 1], self.mu[3 * i + 2]],
            rot_local: [
                self.rot[4 * i],
                self.rot[4 * i + 1],
                self.rot[4 * i + 2],
                self.rot[4 * i + 3],
            ],
            log_scale: [
                self.log_scale[3 * i],
                self.log_scale[3 * i + 1],
                self.log_scale[3 * i + 2],
            ],
            opacity_logit: self.opacity[i],
            sh,
            parent_triangle: self.parent[i],
        }
    }

    pub fn set(&mut self, i: usize, g: &BoundGaussian) {
        self.mu[3 * i..3 * i + 3].copy_from_slice(&g.mu_local);
        self.rot[4 * i..4 * i + 4].copy_from_slice(&g.rot_local);
        self.log_scale[3 * i..3 * i + 3].copy_from_slice(&g.log_scale);
        self.opacity[i] = g.opacity_logit;
        self.sh_dc[i * SH_DC..(i + 1) * SH_DC].copy_from_slice(&g.sh[..SH_DC]);
        self.sh_rest[i * SH_REST..(i + 1) * SH_REST].copy_from_slice(&g.sh[SH_DC..]);
        self.parent[i] = g.parent_triangle;
    }

    /// Keep only splats where `mask` is true, preserving order.
    pub fn retain_mask(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.len());
        let mut w = 0;
        for r in 0..self.len() {
            if mask[r] {
                if w != r {
                    let g = self.get(r);
                    self.set(w, &g);
                }
                w += 1;
            }
        }
        self.mu.truncate(3 * w);
        self.rot.truncate(4 * w);
        self.log_scale.truncate(3 * w);
        self.opacity.truncate(w);
        self.sh_dc.truncate(SH_DC * w);
        self.sh_rest.truncate(SH_REST * w);
        self.parent.truncate(w);
    }
}

/// A splat in world space, ready for projection.
#[derive(Debug, Clone)]
pub struct GlobalGaussian {
    pub mu: Vec3,
    pub rot: Mat3,
    pub scale: Vector3<f64>,
    pub opacity: f32,
    pub sh: [f32; SH_TOTAL],
}

/// Upstream gradients on a [`GlobalGaussian`].
#[derive(Debug, Clone)]
pub struct GlobalGrad {
    pub d_mu: Vec3,
    pub d_rot: Mat3,
    pub d_scale: Vector3<f64>,
    pub d_opacity: f64,
    pub d_sh: [f64; SH_TOTAL],
}

impl GlobalGrad {
    pub fn zero() -> Self {
        GlobalGrad {
            d_mu: Vec3::zeros(),
            d_rot: Mat3::zeros(),
            d_scale: Vector3::zeros(),
            d_opacity: 0.0,
            d_sh: [0.0; SH_TOTAL],
        }
    }
}

/// Gradients on one [`BoundGaussian`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundGrad {
    pub d_mu: [f64; 3],
    pub d_rot: [f64; 4],
    pub d_log_scale: [f64; 3],
    pub d_opacity_logit: f64,
    pub d_sh: [f64; SH_TOTAL],
}

/// Mesh topology plus the splats rigged to it.
#[derive(Debug, Clone)]
pub struct RiggedAvatar {
    pub topology: Arc<Topology>,
    pub splats: SplatSet,
    pub per_triangle_count: Vec<u32>,
}

impl RiggedAvatar {
    /// Recount attachments from scratch (the oracle for the cached table).
    pub fn recount(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.topology.triangle_count()];
        for &p in &self.splats.parent {
            counts[p as usize] += 1;
        }
        counts
    }

    pub fn verify_binding(&self) -> Result<()> {
        let counts = self.recount();
        if counts != self.per_triangle_count {
            return Err(Error::Schema("per-triangle counts out of sync".into()));
        }
        if let Some(t) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Schema(format!("triangle {t} has no attached splat")));
        }
        Ok(())
    }
}

/// One splat per triangle, at the local origin with unit scale.
pub fn init_avatar(topology: Arc<Topology>, rest_vertices: &[Vec3]) -> Result<RiggedAvatar> {
    // Frames are not needed for initialization itself, but computing them
    // surfaces degenerate triangles before training starts.
    all_frames(rest_vertices, &topology)?;
    let n = topology.triangle_count();
    let mut splats = SplatSet::with_capacity(n);
    for t in 0..n {
        splats.push(&BoundGaussian::at_rest(t as u32));
    }
    Ok(RiggedAvatar {
        topology,
        splats,
        per_triangle_count: vec![1; n],
    })
}

/// Rig a bound Gaussian into world space through its parent-triangle frame.
pub fn to_global(g: &BoundGaussian, frame: &TriangleFrame) -> GlobalGaussian {
    let r_local = quat_to_rotation(&[
        g.rot_local[0] as f64,
        g.rot_local[1] as f64,
        g.rot_local[2] as f64,
        g.rot_local[3] as f64,
    ]);
    let mu_local = Vec3::new(g.mu_local[0] as f64, g.mu_local[1] as f64, g.mu_local[2] as f64);
    let s_local = Vector3::new(
        (g.log_scale[0] as f64).exp(),
        (g.log_scale[1] as f64).exp(),
        (g.log_scale[2] as f64).exp(),
    );
    GlobalGaussian {
        mu: frame.orientation * mu_local * frame.scale + frame.origin,
        rot: frame.orientation * r_local,
        scale: s_local * frame.scale,
        opacity: sigmoid(g.opacity_logit),
        sh: g.sh,
    }
}

/// VJP of [`to_global`]: upstream world-space gradients back to the bound
/// parameters and the triangle frame.
pub fn to_global_vjp(
    g: &BoundGaussian,
    frame: &TriangleFrame,
    up: &GlobalGrad,
) -> (BoundGrad, crate::geometry::FrameGrad) {
    let q = [
        g.rot_local[0] as f64,
        g.rot_local[1] as f64,
        g.rot_local[2] as f64,
        g.rot_local[3] as f64,
    ];
    let r_local = quat_to_rotation(&q);
    let mu_local = Vec3::new(g.mu_local[0] as f64, g.mu_local[1] as f64, g.mu_local[2] as f64);
    let s_local = Vector3::new(
        (g.log_scale[0] as f64).exp(),
        (g.log_scale[1] as f64).exp(),
        (g.log_scale[2] as f64).exp(),
    );
    let k = frame.scale;
    let rot_frame = frame.orientation;

    // rot' = R r
    let d_r_local = rot_frame.transpose() * up.d_rot;
    let d_quat = quat_to_rotation_vjp(&q, &d_r_local);
    let mut d_frame_rot = up.d_rot * r_local.transpose();

    // mu' = k R mu + T
    let d_mu_local = rot_frame.transpose() * up.d_mu * k;
    let mut d_k = up.d_mu.dot(&(rot_frame * mu_local));
    d_frame_rot += up.d_mu * mu_local.transpose() * k;

    // scale' = k s, with s = exp(log_scale)
    let mut d_log_scale = [0.0; 3];
    for i in 0..3 {
        d_log_scale[i] = up.d_scale[i] * k * s_local[i];
        d_k += up.d_scale[i] * s_local[i];
    }

    let alpha = sigmoid(g.opacity_logit) as f64;
    let d_opacity_logit = up.d_opacity * alpha * (1.0 - alpha);

    (
        BoundGrad {
            d_mu: [d_mu_local[0], d_mu_local[1], d_mu_local[2]],
            d_rot: d_quat,
            d_log_scale,
            d_opacity_logit,
            d_sh: up.d_sh,
        },
        crate::geometry::FrameGrad {
            d_origin: up.d_mu,
            d_orientation: d_frame_rot,
            d_scale: d_k,
        },
    )
}

/// World-space covariance `Σ = R S Sᵀ Rᵀ` of a global Gaussian.
pub fn covariance(g: &GlobalGaussian) -> Mat3 {
    let d = Mat3::from_diagonal(&Vector3::new(
        g.scale[0] * g.scale[0],
        g.scale[1] * g.scale[1],
        g.scale[2] * g.scale[2],
    ));
    g.rot * d * g.rot.transpose()
}
