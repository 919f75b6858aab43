//! Shared-topology animatable mesh and the linear blendshape rig that stands
//! in for a tracked parametric face model.
//!
//! Posing is `R(q)·(neutral + Σ wᵢ·basisᵢ + offsets) + t` per vertex; the rig
//! bases themselves are never optimized, only the per-frame parameters.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{
    self, quat_to_rotation, quat_to_rotation_vjp, Mat3, TriangleFrame, Vec3,
};
use crate::par;

/// Triangle-list mesh topology shared by every time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub vertex_count: usize,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex group labels (carried through, unused by the core).
    pub vertex_groups: Option<Vec<String>>,
}

impl Topology {
    pub fn new(vertex_count: usize, triangles: Vec<[u32; 3]>) -> Result<Self> {
        for (i, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v as usize >= vertex_count {
                    return Err(Error::Schema(format!(
                        "triangle {i} references vertex {v} but the mesh has {vertex_count} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Schema(format!(
                    "triangle {i} repeats a vertex index: {tri:?}"
                )));
            }
        }
        Ok(Topology {
            vertex_count,
            triangles,
            vertex_groups: None,
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Stable content hash over vertex count and triangle indices.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.vertex_count as u64).to_le_bytes());
        for tri in &self.triangles {
            for &v in tri {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-time-step rig parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RigParams {
    pub translation: Vec3,
    /// Rotation quaternion (w, x, y, z); normalized on use.
    pub rotation: [f64; 4],
    pub blend_weights: Vec<f64>,
    /// Optional per-vertex offsets in the rig's neutral space.
    pub offsets: Option<Vec<Vec3>>,
}

impl RigParams {
    pub fn identity(basis_count: usize) -> Self {
        RigParams {
            translation: Vec3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            blend_weights: vec![0.0; basis_count],
            offsets: None,
        }
    }
}

/// Linear blendshape rig: neutral vertices plus displacement bases.
#[derive(Debug, Clone)]
pub struct BlendshapeRig {
    pub neutral: Vec<Vec3>,
    pub basis: Vec<Vec<Vec3>>,
}

impl BlendshapeRig {
    pub fn new(neutral: Vec<Vec3>, basis: Vec<Vec<Vec3>>) -> Result<Self> {
        for (b, shape) in basis.iter().enumerate() {
            if shape.len() != neutral.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("blendshape basis {b} vertex count"),
                    expected: neutral.len(),
                    actual: shape.len(),
                });
            }
            if shape.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(Error::Schema(format!("blendshape basis {b} contains non-finite values")));
            }
        }
        Ok(BlendshapeRig { neutral, basis })
    }

    pub fn basis_count(&self) -> usize {
        self.basis.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.neutral.len()
    }
}

/// Gradients of [`pose`] with respect to [`RigParams`].
#[derive(Debug, Clone)]
pub struct RigParamsGrad {
    pub d_translation: Vec3,
    pub d_rotation: [f64; 4],
    pub d_blend_weights: Vec<f64>,
    pub d_offsets: Option<Vec<Vec3>>,
}

fn check_dims(rig: &BlendshapeRig, params: &RigParams) -> Result<()> {
    if params.blend_weights.len() != rig.basis_count() {
        return Err(Error::DimensionMismatch {
            context: "blend weight count".to_string(),
            expected: rig.basis_count(),
            actual: params.blend_weights.len(),
        });
    }
    if let Some(off) = &params.offsets {
        if off.len() != rig.vertex_count() {
            return Err(Error::DimensionMismatch {
                context: "per-vertex offset count".to_string(),
                expected: rig.vertex_count(),
                actual: off.len(),
            });
        }
    }
    Ok(())
}

/// Pose the rig: `R·(neutral + Σ wᵢ·basisᵢ + offsets) + t` per vertex.
pub fn pose(rig: &BlendshapeRig, params: &RigParams) -> Result<Vec<Vec3>> {
    check_dims(rig, params)?;
    let rot = quat_to_rotation(&params.rotation);
    let out = par::map_indexed(rig.vertex_count(), |v| {
        let mut p = rig.neutral[v];
        for (w, shape) in params.blend_weights.iter().zip(&rig.basis) {
            p += shape[v] * *w;
        }
        if let Some(off) = &params.offsets {
            p += off[v];
        }
        rot * p + params.translation
    });
    Ok(out)
}

/// Vector-Jacobian product of [`pose`]: upstream per-vertex gradients back to
/// the rig parameters.
pub fn pose_jacobian_vjp(
    rig: &BlendshapeRig,
    params: &RigParams,
    upstream: &[Vec3],
) -> Result<RigParamsGrad> {
    check_dims(rig, params)?;
    if upstream.len() != rig.vertex_count() {
        return Err(Error::DimensionMismatch {
            context: "upstream vertex gradient count".to_string(),
            expected: rig.vertex_count(),
            actual: upstream.len(),
        });
    }
    let rot = quat_to_rotation(&params.rotation);

    let mut d_translation = Vec3::zeros();
    let mut d_rot_mat = Mat3::zeros();
    let mut d_weights = vec![0.0; rig.basis_count()];
    let mut d_offsets = params
        .offsets
        .as_ref()
        .map(|off| vec![Vec3::zeros(); off.len()]);

    for (v, g) in upstream.iter().enumerate() {
        d_translation += g;

        let mut p = rig.neutral[v];
        for (w, shape) in params.blend_weights.iter().zip(&rig.basis) {
            p += shape[v] * *w;
        }
        if let Some(off) = &params.offsets {
            p += off[v];
        }
        d_rot_mat += g * p.transpose();

        let rt_g = rot.transpose() * g;
        for (dw, shape) in d_weights.iter_mut().zip(&rig.basis) {
            *dw += rt_g.dot(&shape[v]);
        }
        if let Some(d_off) = &mut d_offsets {
            d_off[v] = rt_g;
        }
    }

    Ok(RigParamsGrad {
        d_translation,
        d_rotation: quat_to_rotation_vjp(&params.rotation, &d_rot_mat),
        d_blend_weights: d_weights,
        d_offsets,
    })
}

/// All triangle frames of a posed mesh, in triangle order.
pub fn all_frames(vertices: &[Vec3], topology: &Topology) -> Result<Vec<TriangleFrame>> {
    if vertices.len() != topology.vertex_count {
        return Err(Error::DimensionMismatch {
            context: "posed vertex count".to_string(),
            expected: topology.vertex_count,
            actual: vertices.len(),
        });
    }
    let results = par::map_indexed(topology.triangle_count(), |i| {
        let [a, b, c] = topology.triangles[i];
        geometry::triangle_frame_indexed(
            &vertices[a as usize],
            &vertices[b as usize],
            &vertices[c as usize],
            i,
        )
    });
    results.into_iter().collect()
}

/// One time step of a frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameData {
    Params(RigParams),
    Vertices(Vec<Vec3>),
}

/// A sequence of posed meshes sharing one topology.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub topology: Arc<Topology>,
    pub frames: Vec<FrameData>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rig(rng: &mut ChaCha8Rng, verts: usize, bases: usize) -> BlendshapeRig {
        let neutral = (0..verts)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let basis = (0..bases)
            .map(|_| {
                (0..verts)
                    .map(|_| {
                        Vec3::new(
                            rng.gen_range(-0.3..0.3),
                            rng.gen_range(-0.3..0.3),
                            rng.gen_range(-0.3..0.3),
                        )
                    })
                    .collect()
            })
            .collect();
        BlendshapeRig::new(neutral, basis).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, bases: usize, with_offsets: Option<usize>) -> RigParams {
        RigParams {
            translation: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            rotation: geometry::random_unit_quat(rng),
            blend_weights: (0..bases).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            offsets: with_offsets.map(|n| {
                (0..n)
                    .map(|_| {
                        Vec3::new(
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                        )
                    })
                    .collect()
            }),
        }
    }

    #[test]
    fn identity_params_return_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rig = random_rig(&mut rng, 20, 3);
        let out = pose(&rig, &RigParams::identity(3)).unwrap();
        for (a, b) in out.iter().zip(&rig.neutral) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn translation_shifts_every_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let rig = random_rig(&mut rng, 20, 3);
        let mut params = RigParams::identity(3);
        params.translation = Vec3::new(0.5, -1.0, 2.0);
        let out = pose(&rig, &params).unwrap();
        for (a, b) in out.iter().zip(&rig.neutral) {
            assert_relative_eq!(*a, b + params.translation, epsilon = 1e-15);
        }
    }

    #[test]
    fn pose_matches_naive_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rig = random_rig(&mut rng, 30, 4);
        let params = random_params(&mut rng, 4, Some(30));
        let out = pose(&rig, &params).unwrap();
        let rot = quat_to_rotation(&params.rotation);
        for v in 0..30 {
            let mut p = rig.neutral[v];
            for b in 0..4 {
                p += rig.basis[b][v] * params.blend_weights[b];
            }
            p += params.offsets.as_ref().unwrap()[v];
            let expect = rot * p + params.translation;
            assert_relative_eq!(out[v], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn pose_affine_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let rig = random_rig(&mut rng, 25, 3);
        let base = random_params(&mut rng, 3, None);
        let w1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |w: &[f64]| {
            let mut p = base.clone();
            p.blend_weights = w.to_vec();
            pose(&rig, &p).unwrap()
        };
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let lhs = at(&sum);
        let r2 = at(&w2);
        let r1 = at(&w1);
        let r0 = at(&[0.0, 0.0, 0.0]);
        for v in 0..25 {
            assert_relative_eq!(lhs[v] - r2[v], r1[v] - r0[v], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let rig = random_rig(&mut rng, 15, 2);
        let params = random_params(&mut rng, 2, None);
        let grad = pose_jacobian_vjp(&rig, &params, &vec![Vec3::zeros(); 15]).unwrap();
        assert_eq!(grad.d_translation, Vec3::zeros());
        assert_eq!(grad.d_rotation, [0.0; 4]);
        assert!(grad.d_blend_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn translation_gradient_is_upstream_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let rig = random_rig(&mut rng, 15, 2);
        let params = random_params(&mut rng, 2, None);
        let upstream: Vec<Vec3> = (0..15)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let grad = pose_jacobian_vjp(&rig, &params, &upstream).unwrap();
        let sum: Vec3 = upstream.iter().sum();
        assert_relative_eq!(grad.d_translation, sum, epsilon = 1e-13);
    }

    #[test]
    fn pose_vjp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let rig = random_rig(&mut rng, 12, 3);
        let params = random_params(&mut rng, 3, Some(12));
        let upstream: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let grad = pose_jacobian_vjp(&rig, &params, &upstream).unwrap();

        let loss = |p: &RigParams| -> f64 {
            pose(&rig, p)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(v, g)| v.dot(g))
                .sum()
        };
        let h = 1e-6;
        let check = |analytic: f64, fd: f64| {
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            assert!((analytic - fd).abs() / denom < 1e-4, "{analytic} vs {fd}");
        };

        for c in 0..3 {
            let mut p = params.clone();
            p.translation[c] += h;
            let up = loss(&p);
            p.translation[c] -= 2.0 * h;
            check(grad.d_translation[c], (up - loss(&p)) / (2.0 * h));
        }
        for c in 0..4 {
            let mut p = params.clone();
            p.rotation[c] += h;
            let up = loss(&p);
            p.rotation[c] -= 2.0 * h;
            check(grad.d_rotation[c], (up - loss(&p)) / (2.0 * h));
        }
        for b in 0..3 {
            let mut p = params.clone();
            p.blend_weights[b] += h;
            let up = loss(&p);
            p.blend_weights[b] -= 2.0 * h;
            check(grad.d_blend_weights[b], (up - loss(&p)) / (2.0 * h));
        }
        let d_off = grad.d_offsets.as_ref().unwrap();
        for v in [0usize, 5, 11] {
            for c in 0..3 {
                let mut p = params.clone();
                p.offsets.as_mut().unwrap()[v][c] += h;
                let up = loss(&p);
                p.offsets.as_mut().unwrap()[v][c] -= 2.0 * h;
                check(d_off[v][c], (up - loss(&p)) / (2.0 * h));
            }
        }
    }

    #[test]
    fn all_frames_matches_scalar_calls() {
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.5),
        ];
        let topo = Topology::new(4, vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        let frames = all_frames(&verts, &topo).unwrap();
        assert_eq!(frames.len(), topo.triangle_count());
        for (i, tri) in topo.triangles.iter().enumerate() {
            let f = geometry::triangle_frame(
                &verts[tri[0] as usize],
                &verts[tri[1] as usize],
                &verts[tri[2] as usize],
            )
            .unwrap();
            assert_eq!(frames[i].origin, f.origin);
            assert_eq!(frames[i].orientation, f.orientation);
            assert_eq!(frames[i].scale, f.scale);
        }
    }

    #[test]
    fn flat_grid_frames_share_orientation_and_k() {
        // Two congruent right triangles tiling a unit square.
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
        ];
        let topo = Topology::new(6, vec![[0, 1, 2], [1, 4, 5]]).unwrap();
        let frames = all_frames(&verts, &topo).unwrap();
        assert_relative_eq!(frames[0].orientation, frames[1].orientation, epsilon = 1e-12);
        assert_relative_eq!(frames[0].scale, frames[1].scale, epsilon = 1e-12);
    }

    #[test]
    fn invalid_topology_rejected() {
        assert!(Topology::new(3, vec![[0, 1, 3]]).is_err());
        assert!(Topology::new(3, vec![[0, 1, 1]]).is_err());
        assert!(Topology::new(3, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let rig = random_rig(&mut rng, 10, 2);
        let params = RigParams::identity(3);
        assert!(matches!(
            pose(&rig, &params),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
