//! Perspective projection of world-space Gaussians to screen space.
//!
//! The 2D covariance is the linearized pushforward `J W Σ Wᵀ Jᵀ` with `J`
//! the pinhole Jacobian at the mean, plus a 0.3-pixel isotropic dilation so
//! the inverse always exists. Camera convention: right-handed, camera looks
//! down +z in camera space, pixel (0,0) top-left, pixel centers at
//! integer + 0.5.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::{Mat3, Vec3};
use crate::splat_model::{covariance, GlobalGaussian, GlobalGrad, SH_COEFFS};

use super::sh::{coeffs_for_degree, eval_sh, sh_basis_grad};

/// Isotropic screen-space dilation added to the projected covariance, px².
pub const LOW_PASS_DILATION: f32 = 0.3;

/// Pinhole camera with a rigid world→camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World→camera rotation.
    pub rot: Mat3,
    /// World→camera translation.
    pub trans: Vec3,
    /// Near-plane distance; splats at or before it are culled.
    pub near: f64,
}

impl Camera {
    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        -(self.rot.transpose() * self.trans)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    /// Camera at `eye` looking toward `target`, `up` approximately up.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        focal: f64,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right).normalize();
        // rows: camera x (right), camera y (down), camera z (forward)
        let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rot,
            trans: -(rot * eye),
            near: 0.01,
        }
    }
}

/// A splat after projection, ready for rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    /// Screen-space mean, pixels.
    pub mean2d: [f32; 2],
    /// Inverse 2D covariance packed `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f32; 3],
    /// Camera-space depth.
    pub depth: f32,
    /// Footprint half-width in pixels (3σ of the larger eigenvalue, ≥ 1).
    pub radius: f32,
    /// View-dependent RGB from the spherical harmonics.
    pub color: [f32; 3],
    /// Activated opacity.
    pub alpha: f32,
}

/// Upstream gradients on [`Projected2D`] fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjGrad {
    pub d_mean2d: [f64; 2],
    pub d_conic: [f64; 3],
    pub d_color: [f64; 3],
    pub d_alpha: f64,
}

impl ProjGrad {
    pub fn mean2d_norm(&self) -> f64 {
        (self.d_mean2d[0] * self.d_mean2d[0] + self.d_mean2d[1] * self.d_mean2d[1]).sqrt()
    }

    /// Positional gradient norm in view-space units: pixel-space components
    /// scaled by half the image extent, the convention the densification
    /// threshold is calibrated against.
    pub fn viewspace_norm(&self, width: u32, height: u32) -> f64 {
        let gx = self.d_mean2d[0] * width as f64 * 0.5;
        let gy = self.d_mean2d[1] * height as f64 * 0.5;
        (gx * gx + gy * gy).sqrt()
    }
}

fn projection_jacobian(mean_cam: &Vector3<f32>, fx: f32, fy: f32) -> Matrix2x3<f32> {
    let z_inv = 1.0 / mean_cam.z;
    let z_inv2 = z_inv * z_inv;
    Matrix2x3::new(
        fx * z_inv,
        0.0,
        -fx * mean_cam.x * z_inv2,
        0.0,
        fy * z_inv,
        -fy * mean_cam.y * z_inv2,
    )
}

/// Project one Gaussian; `None` means culled (behind the near plane or its
/// footprint misses the image).
pub fn project(g: &GlobalGaussian, cam: &Camera, sh_degree: u8) -> Option<Projected2D> {
    let mean_cam64 = cam.world_to_camera(&g.mu);
    if mean_cam64.z <= cam.near {
        return None;
    }
    let mean_cam = Vector3::new(mean_cam64.x as f32, mean_cam64.y as f32, mean_cam64.z as f32);
    let (fx, fy) = (cam.fx as f32, cam.fy as f32);
    let u = fx * mean_cam.x / mean_cam.z + cam.cx as f32;
    let v = fy * mean_cam.y / mean_cam.z + cam.cy as f32;

    // Σ rotated to camera space, then pushed through the pinhole Jacobian.
    let sigma_cam64 = cam.rot * covariance(g) * cam.rot.transpose();
    let sigma_cam: Matrix3<f32> = sigma_cam64.cast();
    let j = projection_jacobian(&mean_cam, fx, fy);
    let cov2d: Matrix2<f32> = j * sigma_cam * j.transpose();
    let a = cov2d[(0, 0)] + LOW_PASS_DILATION;
    let b = cov2d[(0, 1)];
    let c = cov2d[(1, 1)] + LOW_PASS_DILATION;

    let det = a * c - b * b;
    if !(det.is_finite() && det > 0.0) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    let mid = 0.5 * (a + c);
    let disc = (mid * mid - det).max(0.0).sqrt();
    let lambda_max = mid + disc;
    let radius = (3.0 * lambda_max.sqrt()).ceil().max(1.0);

    if u + radius < 0.0
        || u - radius > cam.width as f32
        || v + radius < 0.0
        || v - radius > cam.height as f32
    {
        return None;
    }

    let dir64 = (g.mu - cam.position()).normalize();
    let dir = [dir64.x as f32, dir64.y as f32, dir64.z as f32];

    Some(Projected2D {
        mean2d: [u, v],
        conic,
        depth: mean_cam.z,
        radius,
        color: eval_sh(&g.sh, dir, sh_degree),
        alpha: g.opacity,
    })
}

/// VJP of [`project`]: screen-space gradients back to the world-space
/// Gaussian. The caller must only invoke this for splats that projected.
pub fn project_vjp(g: &GlobalGaussian, cam: &Camera, sh_degree: u8, up: &ProjGrad) -> GlobalGrad {
    let mean_cam64 = cam.world_to_camera(&g.mu);
    let (x, y, z) = (mean_cam64.x, mean_cam64.y, mean_cam64.z);
    let (fx, fy) = (cam.fx, cam.fy);

    let sigma = covariance(g);
    let sigma_cam = cam.rot * sigma * cam.rot.transpose();
    let z_inv = 1.0 / z;
    let z_inv2 = z_inv * z_inv;
    let j = nalgebra::Matrix2x3::<f64>::new(
        fx * z_inv,
        0.0,
        -fx * x * z_inv2,
        0.0,
        fy * z_inv,
        -fy * y * z_inv2,
    );

    // Recompute the dilated 2D covariance and its inverse as the forward did.
    let cov2d = j * sigma_cam * j.transpose();
    let a = cov2d[(0, 0)] + LOW_PASS_DILATION as f64;
    let b = cov2d[(0, 1)];
    let c = cov2d[(1, 1)] + LOW_PASS_DILATION as f64;
    let det = a * c - b * b;
    let q = Matrix2::new(c / det, -b / det, -b / det, a / det);

    // conic = C⁻¹: dL/dC = −Q G Q with G the packed-triple gradient spread
    // symmetrically over the off-diagonal.
    let g_q = Matrix2::new(
        up.d_conic[0],
        up.d_conic[1] * 0.5,
        up.d_conic[1] * 0.5,
        up.d_conic[2],
    );
    let g_cov = -(q * g_q * q);

    // C = J M Jᵀ (the dilation is additive, gradient passes through).
    let g_m = j.transpose() * g_cov * j;
    let g_j = (g_cov + g_cov.transpose()) * j * sigma_cam;

    // J's dependence on the camera-space mean.
    let mut d_mean_cam = Vector3::new(0.0, 0.0, 0.0);
    d_mean_cam.x += g_j[(0, 2)] * (-fx * z_inv2);
    d_mean_cam.y += g_j[(1, 2)] * (-fy * z_inv2);
    d_mean_cam.z += g_j[(0, 0)] * (-fx * z_inv2)
        + g_j[(1, 1)] * (-fy * z_inv2)
        + g_j[(0, 2)] * (2.0 * fx * x * z_inv2 * z_inv)
        + g_j[(1, 2)] * (2.0 * fy * y * z_inv2 * z_inv);

    // Screen-space mean path (u, v) = (fx·x/z + cx, fy·y/z + cy).
    let d_uv = Vector2::new(up.d_mean2d[0], up.d_mean2d[1]);
    d_mean_cam += j.transpose() * d_uv;

    // M = W Σ Wᵀ.
    let g_sigma = cam.rot.transpose() * g_m * cam.rot;

    // Σ = R D Rᵀ with D = diag(scale²).
    let d_diag = Mat3::from_diagonal(&Vector3::new(
        g.scale[0] * g.scale[0],
        g.scale[1] * g.scale[1],
        g.scale[2] * g.scale[2],
    ));
    let d_rot = (g_sigma + g_sigma.transpose()) * g.rot * d_diag;
    let rtgr = g.rot.transpose() * g_sigma * g.rot;
    let d_scale = Vector3::new(
        2.0 * g.scale[0] * rtgr[(0, 0)],
        2.0 * g.scale[1] * rtgr[(1, 1)],
        2.0 * g.scale[2] * rtgr[(2, 2)],
    );

    // World-space mean: mean_cam = W μ + t.
    let mut d_mu = cam.rot.transpose() * d_mean_cam;

    // Color path: clamped channels pass no gradient; otherwise gradients
    // reach the SH coefficients and, through the view direction, the mean.
    let mut d_sh = [0.0f64; SH_COEFFS * 3];
    let view = g.mu - cam.position();
    let view_len = view.norm();
    let dir64 = view / view_len;
    let dir = [dir64.x as f32, dir64.y as f32, dir64.z as f32];
    let (basis, basis_grad) = sh_basis_grad(dir, sh_degree);
    let active = coeffs_for_degree(sh_degree);
    let mut d_dir = Vector3::new(0.0, 0.0, 0.0);
    for ch in 0..3 {
        let mut pre = 0.5f32;
        for i in 0..active {
            pre += basis[i] * g.sh[i * 3 + ch];
        }
        if pre <= 0.0 {
            continue;
        }
        let gc = up.d_color[ch];
        for i in 0..active {
            d_sh[i * 3 + ch] = gc * basis[i] as f64;
            for axis in 0..3 {
                d_dir[axis] += gc * (basis_grad[i][axis] * g.sh[i * 3 + ch]) as f64;
            }
        }
    }
    // dir = v/|v| ⇒ d_v = (I − dir dirᵀ)/|v| · d_dir.
    d_mu += (d_dir - dir64 * dir64.dot(&d_dir)) / view_len;

    GlobalGrad {
        d_mu,
        d_rot,
        d_scale,
        d_opacity: up.d_alpha,
        d_sh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_unit_quat;
    use crate::splat_model::SH_TOTAL;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_camera(w: u32, h: u32) -> Camera {
        Camera {
            width: w,
            height: h,
            fx: 100.0,
            fy: 120.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
            near: 0.1,
        }
    }

    fn plain_gaussian(mu: Vec3, scale: f64) -> GlobalGaussian {
        GlobalGaussian {
            mu,
            rot: Mat3::identity(),
            scale: Vector3::new(scale, scale, scale),
            opacity: 0.8,
            sh: [0.0; SH_TOTAL],
        }
    }

    #[test]
    fn on_axis_splat_projects_to_principal_point() {
        let cam = axis_camera(64, 64);
        let d = 5.0;
        let sigma = 0.02;
        let p = project(&plain_gaussian(Vec3::new(0.0, 0.0, d), sigma), &cam, 0).unwrap();
        assert_relative_eq!(p.mean2d[0], 32.0, epsilon = 1e-4);
        assert_relative_eq!(p.mean2d[1], 32.0, epsilon = 1e-4);
        assert_relative_eq!(p.depth, d as f32, epsilon = 1e-6);

        // covariance ≈ diag((fx σ/d)², (fy σ/d)²) + 0.3 I; check via conic.
        let exp_a = (100.0 * sigma / d).powi(2) as f32 + LOW_PASS_DILATION;
        let exp_c = (120.0 * sigma / d).powi(2) as f32 + LOW_PASS_DILATION;
        let det = exp_a * exp_c;
        assert_relative_eq!(p.conic[0], exp_c / det, max_relative = 1e-4);
        assert_relative_eq!(p.conic[1], 0.0, epsilon = 1e-6);
        assert_relative_eq!(p.conic[2], exp_a / det, max_relative = 1e-4);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let cam = axis_camera(64, 64);
        assert!(project(&plain_gaussian(Vec3::new(0.0, 0.0, 0.05), 0.1), &cam, 0).is_none());
        assert!(project(&plain_gaussian(Vec3::new(0.0, 0.0, cam.near), 0.1), &cam, 0).is_none());
        assert!(project(&plain_gaussian(Vec3::new(0.0, 0.0, -3.0), 0.1), &cam, 0).is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        let cam = axis_camera(64, 64);
        assert!(project(&plain_gaussian(Vec3::new(100.0, 0.0, 5.0), 0.01), &cam, 0).is_none());
    }

    #[test]
    fn joint_translation_leaves_projection_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let q = random_unit_quat(&mut rng);
        let mut cam = axis_camera(64, 64);
        cam.rot = crate::geometry::quat_to_rotation(&q);
        cam.trans = Vec3::new(0.2, -0.4, 6.0);

        let mut g = plain_gaussian(Vec3::new(0.3, -0.2, 0.5), 0.05);
        g.rot = crate::geometry::quat_to_rotation(&random_unit_quat(&mut rng));
        for v in g.sh.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }

        let p0 = project(&g, &cam, 3);

        let shift = Vec3::new(1.3, -0.7, 2.1);
        let mut g2 = g.clone();
        g2.mu += shift;
        let mut cam2 = cam.clone();
        // moving the camera by the same world vector: t' = t − W·Δ
        cam2.trans = cam.trans - cam.rot * shift;

        let p1 = project(&g2, &cam2, 3);
        match (p0, p1) {
            (Some(a), Some(b)) => {
                assert_eq!(a.mean2d, b.mean2d);
                assert_eq!(a.conic, b.conic);
                assert_eq!(a.depth, b.depth);
                assert_eq!(a.color, b.color);
            }
            _ => panic!("projection culled unexpectedly"),
        }
    }

    #[test]
    fn radius_is_at_least_one_pixel() {
        let cam = axis_camera(64, 64);
        let p = project(&plain_gaussian(Vec3::new(0.0, 0.0, 50.0), 1e-5), &cam, 0).unwrap();
        assert!(p.radius >= 1.0);
    }

    /// Double-precision twin of [`project`], written independently so finite
    /// differences are free of f32 quantization noise.
    fn project64(g: &GlobalGaussian, cam: &Camera, up: &ProjGrad) -> f64 {
        const C0: f64 = 0.282_094_791_773_878_14;
        const C1: f64 = 0.488_602_511_902_919_9;
        const C2: [f64; 5] = [
            1.092_548_430_592_079_2,
            -1.092_548_430_592_079_2,
            0.315_391_565_252_520_05,
            -1.092_548_430_592_079_2,
            0.546_274_215_296_039_6,
        ];
        const C3: [f64; 7] = [
            -0.590_043_589_926_643_5,
            2.890_611_442_640_554,
            -0.457_045_799_464_465_8,
            0.373_176_332_590_115_4,
            -0.457_045_799_464_465_8,
            1.445_305_721_320_277,
            -0.590_043_589_926_643_5,
        ];
        let mean_cam = cam.world_to_camera(&g.mu);
        let (x, y, z) = (mean_cam.x, mean_cam.y, mean_cam.z);
        let u = cam.fx * x / z + cam.cx;
        let v = cam.fy * y / z + cam.cy;
        let sigma_cam = cam.rot * covariance(g) * cam.rot.transpose();
        let j = nalgebra::Matrix2x3::<f64>::new(
            cam.fx / z,
            0.0,
            -cam.fx * x / (z * z),
            0.0,
            cam.fy / z,
            -cam.fy * y / (z * z),
        );
        let cov = j * sigma_cam * j.transpose();
        let a = cov[(0, 0)] + LOW_PASS_DILATION as f64;
        let b = cov[(0, 1)];
        let c = cov[(1, 1)] + LOW_PASS_DILATION as f64;
        let det = a * c - b * b;
        let conic = [c / det, -b / det, a / det];

        let dir = (g.mu - cam.position()).normalize();
        let (dx, dy, dz) = (dir.x, dir.y, dir.z);
        let (xx, yy, zz) = (dx * dx, dy * dy, dz * dz);
        let basis = [
            C0,
            -C1 * dy,
            C1 * dz,
            -C1 * dx,
            C2[0] * dx * dy,
            C2[1] * dy * dz,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * dx * dz,
            C2[4] * (xx - yy),
            C3[0] * dy * (3.0 * xx - yy),
            C3[1] * dx * dy * dz,
            C3[2] * dy * (4.0 * zz - xx - yy),
            C3[3] * dz * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * dx * (4.0 * zz - xx - yy),
            C3[5] * dz * (xx - yy),
            C3[6] * dx * (xx - 3.0 * yy),
        ];
        let mut color = [0.5f64; 3];
        for i in 0..16 {
            for ch in 0..3 {
                color[ch] += basis[i] * g.sh[i * 3 + ch] as f64;
            }
        }
        for ch in color.iter_mut() {
            *ch = ch.max(0.0);
        }

        u * up.d_mean2d[0]
            + v * up.d_mean2d[1]
            + conic[0] * up.d_conic[0]
            + conic[1] * up.d_conic[1]
            + conic[2] * up.d_conic[2]
            + color[0] * up.d_color[0]
            + color[1] * up.d_color[1]
            + color[2] * up.d_color[2]
            + g.opacity as f64 * up.d_alpha
    }

    #[test]
    fn project_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut cam = axis_camera(32, 32);
        cam.rot = crate::geometry::quat_to_rotation(&random_unit_quat(&mut rng));
        cam.trans = Vec3::new(0.1, 0.2, 4.0);

        for trial in 0..10 {
            let mut g = plain_gaussian(
                Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.5)),
                0.0,
            );
            g.rot = crate::geometry::quat_to_rotation(&random_unit_quat(&mut rng));
            g.scale = Vector3::new(
                rng.gen_range(0.02..0.2),
                rng.gen_range(0.02..0.2),
                rng.gen_range(0.02..0.2),
            );
            // keep colors clear of the clamp at zero
            for v in g.sh.iter_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
            g.sh[0] = rng.gen_range(0.3..0.8);
            g.sh[1] = rng.gen_range(0.3..0.8);
            g.sh[2] = rng.gen_range(0.3..0.8);

            let up = ProjGrad {
                d_mean2d: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                d_conic: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                d_color: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                d_alpha: rng.gen_range(-1.0..1.0),
            };

            let scalar = |g: &GlobalGaussian| -> f64 { project64(g, &cam, &up) };

            if project(&g, &cam, 3).is_none() {
                continue;
            }
            let grad = project_vjp(&g, &cam, 3, &up);

            let check = |analytic: f64, fd: f64, what: &str| {
                let denom = analytic.abs().max(fd.abs()).max(1e-2);
                assert!(
                    (analytic - fd).abs() / denom < 1e-4,
                    "trial {trial} {what}: analytic {analytic} vs fd {fd}"
                );
            };

            let h = 1e-4;
            for c in 0..3 {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.mu[c] += h;
                gm.mu[c] -= h;
                check(grad.d_mu[c], (scalar(&gp) - scalar(&gm)) / (2.0 * h), "mu");
            }
            for c in 0..3 {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.scale[c] += h;
                gm.scale[c] -= h;
                check(grad.d_scale[c], (scalar(&gp) - scalar(&gm)) / (2.0 * h), "scale");
            }
            for r in 0..3 {
                for c in 0..3 {
                    let mut gp = g.clone();
                    let mut gm = g.clone();
                    gp.rot[(r, c)] += h;
                    gm.rot[(r, c)] -= h;
                    check(
                        grad.d_rot[(r, c)],
                        (scalar(&gp) - scalar(&gm)) / (2.0 * h),
                        "rot",
                    );
                }
            }
            {
                // f32 storage: divide by the actually-representable delta.
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.opacity += h as f32;
                gm.opacity -= h as f32;
                let delta = (gp.opacity - gm.opacity) as f64;
                check(
                    grad.d_opacity,
                    (scalar(&gp) - scalar(&gm)) / delta,
                    "opacity",
                );
            }
            for i in (0..SH_TOTAL).step_by(7) {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.sh[i] += h as f32;
                gm.sh[i] -= h as f32;
                let delta = (gp.sh[i] - gm.sh[i]) as f64;
                check(grad.d_sh[i], (scalar(&gp) - scalar(&gm)) / delta, "sh");
            }
        }
    }
}
