//! Triangle local frames and the quaternion helpers shared by the rig and
//! splat code.
//!
//! A frame is built from three vertices: origin at the centroid, orientation
//! columns `[e, n, e×n]` (edge direction, normal, their cross product), and a
//! scalar scale `k` equal to the mean of the first edge length and the
//! perpendicular height of the third vertex over that edge. All geometry is
//! double precision; frames are recomputed per time step and feed gradients.

use nalgebra::{Matrix3, RealField, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Triangle area below which frame construction refuses to normalize.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Local coordinate frame of one mesh triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFrame {
    /// Centroid of the triangle, world space.
    pub origin: Vec3,
    /// Proper rotation with columns `[e, n, e×n]`.
    pub orientation: Mat3,
    /// Mean of edge length and perpendicular height, metric units.
    pub scale: f64,
}

/// Upstream gradients on a [`TriangleFrame`], used to chain back to vertices.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameGrad {
    pub d_origin: Vec3,
    pub d_orientation: Mat3,
    pub d_scale: f64,
}

impl FrameGrad {
    pub fn zero() -> Self {
        FrameGrad {
            d_origin: Vec3::zeros(),
            d_orientation: Mat3::zeros(),
            d_scale: 0.0,
        }
    }
}

pub fn triangle_area(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> f64 {
    0.5 * (v1 - v0).cross(&(v2 - v0)).norm()
}

/// Build the local frame of a triangle.
///
/// The edge is fixed as `v0 → v1` and the perpendicular is dropped from `v2`,
/// so frames are stable across time steps as long as vertex order is.
pub fn triangle_frame(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Result<TriangleFrame> {
    triangle_frame_indexed(v0, v1, v2, 0)
}

/// As [`triangle_frame`], reporting `index` in the degenerate-triangle error.
pub fn triangle_frame_indexed(
    v0: &Vec3,
    v1: &Vec3,
    v2: &Vec3,
    index: usize,
) -> Result<TriangleFrame> {
    let edge = v1 - v0;
    let diag = v2 - v0;
    let cross = edge.cross(&diag);
    let cross_norm = cross.norm();
    let area = 0.5 * cross_norm;
    if area < DEGENERATE_AREA {
        return Err(Error::DegenerateTriangle { index, area });
    }

    let edge_len = edge.norm();
    let e = edge / edge_len;
    let n = cross / cross_norm;
    let m = e.cross(&n);
    // Height of v2 over the line v0-v1: twice the area over the base length.
    let height = cross_norm / edge_len;

    Ok(TriangleFrame {
        origin: (v0 + v1 + v2) / 3.0,
        orientation: Mat3::from_columns(&[e, n, m]),
        scale: 0.5 * (edge_len + height),
    })
}

/// Vector-Jacobian product of [`triangle_frame`]: pulls upstream gradients on
/// `(T, R, k)` back to the three vertices.
pub fn triangle_frame_vjp(
    v0: &Vec3,
    v1: &Vec3,
    v2: &Vec3,
    grad: &FrameGrad,
) -> Result<[Vec3; 3]> {
    let edge = v1 - v0;
    let diag = v2 - v0;
    let cross = edge.cross(&diag);
    let cross_norm = cross.norm();
    if 0.5 * cross_norm < DEGENERATE_AREA {
        return Err(Error::DegenerateTriangle {
            index: 0,
            area: 0.5 * cross_norm,
        });
    }
    let edge_len = edge.norm();
    let e = edge / edge_len;
    let n = cross / cross_norm;

    let g_e_col: Vec3 = grad.d_orientation.column(0).into();
    let g_n_col: Vec3 = grad.d_orientation.column(1).into();
    let g_m_col: Vec3 = grad.d_orientation.column(2).into();

    // m = e × n: route the third column's gradient onto e and n via the
    // scalar-triple-product identities g·(de×n) = de·(n×g), g·(e×dn) = dn·(g×e).
    let g_e = g_e_col + n.cross(&g_m_col);
    let g_n = g_n_col + g_m_col.cross(&e);

    // Normalizations: d(u/|u|)/du = (I − ê êᵀ)/|u|.
    let g_edge_from_e = (g_e - e * e.dot(&g_e)) / edge_len;
    let g_cross_from_n = (g_n - n * n.dot(&g_n)) / cross_norm;

    // k = (|edge| + |cross|/|edge|)/2.
    let g_edge_from_k = e * (grad.d_scale * 0.5 * (1.0 - cross_norm / (edge_len * edge_len)));
    let g_cross_from_k = n * (grad.d_scale * 0.5 / edge_len);

    let g_cross = g_cross_from_n + g_cross_from_k;

    // cross = edge × diag.
    let g_edge = g_edge_from_e + g_edge_from_k + diag.cross(&g_cross);
    let g_diag = g_cross.cross(&edge);

    let g_t = grad.d_origin / 3.0;
    Ok([g_t - g_edge - g_diag, g_t + g_edge, g_t + g_diag])
}

/// Full Jacobian of the frame construction with respect to the nine vertex
/// coordinates, assembled from one-hot applications of the VJP.
#[derive(Debug, Clone)]
pub struct FrameJacobians {
    /// `origin[r][j]` = gradient of origin component `r` w.r.t. vertex `j`.
    pub origin: [[Vec3; 3]; 3],
    /// `orientation[r * 3 + c][j]` = gradient of `R[(r,c)]` w.r.t. vertex `j`.
    pub orientation: [[Vec3; 3]; 9],
    /// `scale[j]` = gradient of `k` w.r.t. vertex `j`.
    pub scale: [Vec3; 3],
}

pub fn frame_jacobians(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Result<FrameJacobians> {
    let zero = [Vec3::zeros(); 3];
    let mut jac = FrameJacobians {
        origin: [zero; 3],
        orientation: [zero; 9],
        scale: zero,
    };
    for r in 0..3 {
        let mut grad = FrameGrad::zero();
        grad.d_origin[r] = 1.0;
        jac.origin[r] = triangle_frame_vjp(v0, v1, v2, &grad)?;
    }
    for r in 0..3 {
        for c in 0..3 {
            let mut grad = FrameGrad::zero();
            grad.d_orientation[(r, c)] = 1.0;
            jac.orientation[r * 3 + c] = triangle_frame_vjp(v0, v1, v2, &grad)?;
        }
    }
    let grad = FrameGrad {
        d_origin: Vec3::zeros(),
        d_orientation: Mat3::zeros(),
        d_scale: 1.0,
    };
    jac.scale = triangle_frame_vjp(v0, v1, v2, &grad)?;
    Ok(jac)
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
///
/// The quaternion is normalized first, so any finite nonzero input yields a
/// proper rotation.
pub fn quat_to_rotation<T: RealField + Copy>(q: &[T; 4]) -> Matrix3<T> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let w = q[0] / norm;
    let x = q[1] / norm;
    let y = q[2] / norm;
    let z = q[3] / norm;
    let two = T::one() + T::one();
    Matrix3::new(
        T::one() - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        T::one() - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        T::one() - two * (x * x + y * y),
    )
}

/// VJP of [`quat_to_rotation`]: upstream gradient on the rotation matrix back
/// to the four raw quaternion components (normalization chain included).
pub fn quat_to_rotation_vjp<T: RealField + Copy>(q: &[T; 4], upstream: &Matrix3<T>) -> [T; 4] {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let w = q[0] / norm;
    let x = q[1] / norm;
    let y = q[2] / norm;
    let z = q[3] / norm;
    let zero = T::zero();
    let two = T::one() + T::one();

    // Partials of the unit-quaternion rotation formula.
    let d_w = Matrix3::new(zero, -z, y, z, zero, -x, -y, x, zero) * two;
    let d_x = Matrix3::new(zero, y, z, y, -two * x, -w, z, w, -two * x) * two;
    let d_y = Matrix3::new(-two * y, x, w, x, zero, z, -w, z, -two * y) * two;
    let d_z = Matrix3::new(-two * z, -w, x, w, -two * z, y, x, y, zero) * two;

    let g_unit = [
        upstream.dot(&d_w),
        upstream.dot(&d_x),
        upstream.dot(&d_y),
        upstream.dot(&d_z),
    ];

    // Chain through qn = q/|q|.
    let unit = [w, x, y, z];
    let mut dot = T::zero();
    for i in 0..4 {
        dot += g_unit[i] * unit[i];
    }
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = (g_unit[i] - unit[i] * dot) / norm;
    }
    out
}

/// Uniformly random unit quaternion (w, x, y, z).
pub fn random_unit_quat<R: rand::Rng>(rng: &mut R) -> [f64; 4] {
    use rand_distr::StandardNormal;
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_triangle(rng: &mut ChaCha8Rng) -> [Vec3; 3] {
        loop {
            let v: Vec<Vec3> = (0..3)
                .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
                .collect();
            if triangle_area(&v[0], &v[1], &v[2]) > 1e-3 {
                return [v[0], v[1], v[2]];
            }
        }
    }

    #[test]
    fn unit_right_triangle_frame() {
        let f = triangle_frame(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        assert_relative_eq!(f.origin, Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(Vec3::from(f.orientation.column(0)), Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(Vec3::from(f.orientation.column(1)), Vec3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(Vec3::from(f.orientation.column(2)), Vec3::new(0.0, -1.0, 0.0));
        assert_relative_eq!(f.scale, 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.orientation.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_scaling_scales_origin_and_k_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let [v0, v1, v2] = random_triangle(&mut rng);
            let c = rng.gen_range(0.1..5.0);
            let f = triangle_frame(&v0, &v1, &v2).unwrap();
            let g = triangle_frame(&(v0 * c), &(v1 * c), &(v2 * c)).unwrap();
            assert_relative_eq!(g.origin, f.origin * c, epsilon = 1e-12);
            assert_relative_eq!(g.orientation, f.orientation, epsilon = 1e-12);
            assert_relative_eq!(g.scale, f.scale * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn rigid_motion_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let [v0, v1, v2] = random_triangle(&mut rng);
            let q = random_unit_quat(&mut rng);
            let rot = quat_to_rotation(&q);
            let t = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let f = triangle_frame(&v0, &v1, &v2).unwrap();
            let g = triangle_frame(&(rot * v0 + t), &(rot * v1 + t), &(rot * v2 + t)).unwrap();
            assert_relative_eq!(g.origin, rot * f.origin + t, epsilon = 1e-12);
            assert_relative_eq!(g.orientation, rot * f.orientation, epsilon = 1e-12);
            assert_relative_eq!(g.scale, f.scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn orthonormality_over_random_triangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10_000 {
            let [v0, v1, v2] = random_triangle(&mut rng);
            let f = triangle_frame(&v0, &v1, &v2).unwrap();
            let rtr = f.orientation.transpose() * f.orientation;
            assert_relative_eq!(rtr, Mat3::identity(), epsilon = 1e-6);
            assert_relative_eq!(f.orientation.determinant(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let err = triangle_frame(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(2.0, 0.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateTriangle { .. }));
    }

    #[test]
    fn origin_jacobian_is_third_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let [v0, v1, v2] = random_triangle(&mut rng);
        let jac = frame_jacobians(&v0, &v1, &v2).unwrap();
        for r in 0..3 {
            for j in 0..3 {
                for c in 0..3 {
                    let expect = if r == c { 1.0 / 3.0 } else { 0.0 };
                    assert_relative_eq!(jac.origin[r][j][c], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scale_invariant_to_uniform_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let [v0, v1, v2] = random_triangle(&mut rng);
        let jac = frame_jacobians(&v0, &v1, &v2).unwrap();
        // Sum of the per-vertex scale gradients is the directional derivative
        // under uniform translation, which must vanish.
        let total = jac.scale[0] + jac.scale[1] + jac.scale[2];
        assert_relative_eq!(total, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn frame_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let h = 1e-5;
        for _ in 0..20 {
            let verts = random_triangle(&mut rng);
            let jac = frame_jacobians(&verts[0], &verts[1], &verts[2]).unwrap();
            for j in 0..3 {
                for c in 0..3 {
                    let mut plus = verts;
                    let mut minus = verts;
                    plus[j][c] += h;
                    minus[j][c] -= h;
                    let fp = triangle_frame(&plus[0], &plus[1], &plus[2]).unwrap();
                    let fm = triangle_frame(&minus[0], &minus[1], &minus[2]).unwrap();
                    for r in 0..3 {
                        let fd = (fp.origin[r] - fm.origin[r]) / (2.0 * h);
                        check_close(jac.origin[r][j][c], fd);
                    }
                    for r in 0..3 {
                        for cc in 0..3 {
                            let fd = (fp.orientation[(r, cc)] - fm.orientation[(r, cc)]) / (2.0 * h);
                            check_close(jac.orientation[r * 3 + cc][j][c], fd);
                        }
                    }
                    let fd = (fp.scale - fm.scale) / (2.0 * h);
                    check_close(jac.scale[j][c], fd);
                }
            }
        }
    }

    fn check_close(analytic: f64, fd: f64) {
        let denom = analytic.abs().max(fd.abs()).max(1e-4);
        assert!(
            (analytic - fd).abs() / denom < 1e-7,
            "analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn quat_rotation_is_orthonormal_and_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..50 {
            let q = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0f64),
            ];
            if q.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.3 {
                continue;
            }
            let rot = quat_to_rotation(&q);
            assert_relative_eq!(rot.transpose() * rot, Mat3::identity(), epsilon = 1e-12);
            assert_relative_eq!(rot.determinant(), 1.0, epsilon = 1e-12);

            let mut upstream = Mat3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    upstream[(r, c)] = rng.gen_range(-1.0..1.0);
                }
            }
            let grad = quat_to_rotation_vjp(&q, &upstream);
            for i in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (quat_to_rotation(&qp) - quat_to_rotation(&qm)).dot(&upstream) / (2.0 * h);
                check_close(grad[i], fd);
            }
        }
    }
}
