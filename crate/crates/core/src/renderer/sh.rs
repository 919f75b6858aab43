//! Real spherical-harmonics basis up to degree 3 for view-dependent color.

use crate::splat_model::{SH_COEFFS, SH_TOTAL};

pub const SH_C0: f32 = 0.282_094_79;
const SH_C1: f32 = 0.488_602_51;
const SH_C2: [f32; 5] = [1.092_548_4, -1.092_548_4, 0.315_391_57, -1.092_548_4, 0.546_274_2];
const SH_C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_33,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

/// Coefficients active at a given SH degree.
pub fn coeffs_for_degree(degree: u8) -> usize {
    ((degree as usize) + 1) * ((degree as usize) + 1)
}

/// Basis values at a unit direction; entries beyond the active degree are 0.
pub fn sh_basis(dir: [f32; 3], degree: u8) -> [f32; SH_COEFFS] {
    let [x, y, z] = dir;
    let mut b = [0.0; SH_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Basis values and their direction derivatives `[d/dx, d/dy, d/dz]`.
pub fn sh_basis_grad(dir: [f32; 3], degree: u8) -> ([f32; SH_COEFFS], [[f32; 3]; SH_COEFFS]) {
    let [x, y, z] = dir;
    let b = sh_basis(dir, degree);
    let mut g = [[0.0; 3]; SH_COEFFS];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        g[11] = [
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        g[12] = [
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ];
        g[14] = [SH_C3[5] * 2.0 * x * z, SH_C3[5] * (-2.0 * y * z), SH_C3[5] * (xx - yy)];
        g[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), SH_C3[6] * (-6.0 * x * y), 0.0];
    }
    (b, g)
}

/// View-dependent color: `Σ basis·coeff + 0.5`, clamped below at zero.
pub fn eval_sh(sh: &[f32; SH_TOTAL], dir: [f32; 3], degree: u8) -> [f32; 3] {
    let b = sh_basis(dir, degree);
    let active = coeffs_for_degree(degree);
    let mut color = [0.5f32; 3];
    for i in 0..active {
        for c in 0..3 {
            color[c] += b[i] * sh[i * 3 + c];
        }
    }
    for c in color.iter_mut() {
        *c = c.max(0.0);
    }
    color
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dir(rng: &mut ChaCha8Rng) -> [f32; 3] {
        loop {
            let v: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 {
                return [(v[0] / n) as f32, (v[1] / n) as f32, (v[2] / n) as f32];
            }
        }
    }

    #[test]
    fn dc_only_color_is_direction_independent() {
        let mut sh = [0.0f32; SH_TOTAL];
        sh[0] = 0.7;
        sh[1] = -0.2;
        sh[2] = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let color = eval_sh(&sh, random_dir(&mut rng), 3);
            assert_relative_eq!(color[0], 0.282_094_79 * 0.7 + 0.5, epsilon = 1e-6);
            assert_relative_eq!(color[1], (0.282_094_79f32 * -0.2 + 0.5).max(0.0), epsilon = 1e-6);
            assert_relative_eq!(color[2], 0.282_094_79 * 0.4 + 0.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let sh = [0.0f32; SH_TOTAL];
        let color = eval_sh(&sh, [0.0, 0.0, 1.0], 3);
        assert_eq!(color, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn higher_bands_average_to_zero_over_sphere() {
        // Monte-Carlo orthogonality: the direction-averaged color equals the
        // DC color because every band above zero integrates to zero.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut sh = [0.0f32; SH_TOTAL];
        for v in sh.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        // keep colors away from the clamp so averaging is exact
        sh[0] = 1.0;
        sh[1] = 1.2;
        sh[2] = 0.9;
        let n = 200_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let c = eval_sh(&sh, random_dir(&mut rng), 3);
            for ch in 0..3 {
                mean[ch] += c[ch] as f64;
            }
        }
        for ch in 0..3 {
            mean[ch] /= n as f64;
            let dc = (SH_C0 * sh[ch] + 0.5) as f64;
            assert!(
                (mean[ch] - dc).abs() < 1e-3,
                "channel {ch}: {} vs {dc}",
                mean[ch]
            );
        }
    }

    #[test]
    fn basis_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let h = 1e-3f32;
        for _ in 0..20 {
            let dir = random_dir(&mut rng);
            let (_, grad) = sh_basis_grad(dir, 3);
            for axis in 0..3 {
                let mut dp = dir;
                let mut dm = dir;
                dp[axis] += h;
                dm[axis] -= h;
                // raw polynomial derivative: do not re-normalize
                let bp = sh_basis(dp, 3);
                let bm = sh_basis(dm, 3);
                for i in 0..SH_COEFFS {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    let denom = grad[i][axis].abs().max(fd.abs()).max(1e-3);
                    assert!(
                        (grad[i][axis] - fd).abs() / denom < 1e-2,
                        "coeff {i} axis {axis}: {} vs {fd}",
                        grad[i][axis]
                    );
                }
            }
        }
    }

    #[test]
    fn degree_limits_active_coefficients() {
        let mut sh = [0.0f32; SH_TOTAL];
        sh[15 * 3] = 100.0; // a huge degree-3 coefficient
        let c0 = eval_sh(&sh, [0.6, 0.64, 0.48], 2);
        assert_eq!(c0, [0.5, 0.5, 0.5]);
        let c3 = eval_sh(&sh, [0.6, 0.64, 0.48], 3);
        assert_ne!(c3[0], 0.5);
    }
}
